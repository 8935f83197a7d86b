#include "gcdkit/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "gcdkit/augment.hpp"
#include "gcdkit/cluster.hpp"
#include "gcdkit/embedstore.hpp"
#include "gcdkit/reprloss.hpp"
#include "gcdkit/retrieval.hpp"

namespace gcdkit {

namespace {

namespace fs = std::filesystem;

std::string trimmed(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw Error("bad numeric value for " + key + ": '" + value + "'");
  return out;
}

Index parse_index(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long out = 0;
  try {
    out = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw Error("bad integer value for " + key + ": '" + value + "'");
  return static_cast<Index>(out);
}

std::uint64_t parse_seed(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != value.size()) throw Error("bad seed value for " + key + ": '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw Error("bad boolean value for " + key + ": '" + value + "' (use 0/1/true/false)");
}

template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void write_text_file(const std::string& content, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw Error("failed while writing: " + path.string());
}

}  // namespace

void apply_override(PipelineConfig& config, const std::string& key,
                    const std::string& value) {
  if (key == "images") config.images = value;
  else if (key == "labels") config.labels = value;
  else if (key == "corpus_text") config.corpus_text = value;
  else if (key == "corpus_emb") config.corpus_emb = value;
  else if (key == "out_dir") config.out_dir = value;
  else if (key == "seen_fraction") config.seen_fraction = parse_double(key, value);
  else if (key == "labeled_fraction") config.labeled_fraction = parse_double(key, value);
  else if (key == "k_retrieve") config.k_retrieve = parse_index(key, value);
  else if (key == "use_text") config.use_text = parse_bool(key, value);
  else if (key == "k_total") config.k_total = parse_index(key, value);
  else if (key == "tau") config.tau = parse_double(key, value);
  else if (key == "lambda") config.lambda = parse_double(key, value);
  else if (key == "train_head") config.train_head = parse_bool(key, value);
  else if (key == "epochs") config.epochs = static_cast<int>(parse_index(key, value));
  else if (key == "lr") config.lr = parse_double(key, value);
  else if (key == "view_noise") config.view_noise = parse_double(key, value);
  else if (key == "head_out_dims") config.head_out_dims = parse_index(key, value);
  else if (key == "batch_labeled") config.batch_labeled = parse_index(key, value);
  else if (key == "batch_unlabeled") config.batch_unlabeled = parse_index(key, value);
  else if (key == "seed") config.seed = parse_seed(key, value);
  else throw Error("unknown config key: '" + key + "'");
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config: " + path);
  PipelineConfig config;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trimmed(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      std::ostringstream msg;
      msg << "line " << lineno << " of " << path << " is not key=value: '" << t << "'";
      throw Error(msg.str());
    }
    apply_override(config, trimmed(t.substr(0, eq)), trimmed(t.substr(eq + 1)));
  }
  return config;
}

std::string resolved_config(const PipelineConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "batch_labeled=" << c.batch_labeled << '\n';
  out << "batch_unlabeled=" << c.batch_unlabeled << '\n';
  out << "corpus_emb=" << c.corpus_emb << '\n';
  out << "corpus_text=" << c.corpus_text << '\n';
  out << "epochs=" << c.epochs << '\n';
  out << "head_out_dims=" << c.head_out_dims << '\n';
  out << "images=" << c.images << '\n';
  out << "k_retrieve=" << c.k_retrieve << '\n';
  out << "k_total=" << c.k_total << '\n';
  out << "labeled_fraction=" << c.labeled_fraction << '\n';
  out << "labels=" << c.labels << '\n';
  out << "lambda=" << c.lambda << '\n';
  out << "lr=" << c.lr << '\n';
  out << "out_dir=" << c.out_dir << '\n';
  out << "seed=" << c.seed << '\n';
  out << "seen_fraction=" << c.seen_fraction << '\n';
  out << "tau=" << c.tau << '\n';
  out << "train_head=" << (c.train_head ? 1 : 0) << '\n';
  out << "use_text=" << (c.use_text ? 1 : 0) << '\n';
  out << "view_noise=" << c.view_noise << '\n';
  return out.str();
}

EvalReport run_pipeline(const PipelineConfig& config) {
  const bool text_on = config.use_text && config.k_retrieve > 0;
  const fs::path out(config.out_dir);

  run_stage("config", [&] {
    if (config.images.empty()) throw Error("images path is required");
    if (config.labels.empty()) throw Error("labels path is required");
    if (config.out_dir.empty()) throw Error("out_dir is required");
    if (text_on && (config.corpus_text.empty() || config.corpus_emb.empty()))
      throw Error("corpus_text and corpus_emb are required when text is enabled");
    fs::create_directories(out);
    write_text_file(resolved_config(config), out / "resolved_config.txt");
  });

  EmbeddingMatrix images;
  LabelMap labels;
  DatasetSplit split;
  run_stage("split", [&] {
    images = load_matrix(config.images);
    labels = load_labels(config.labels);
    if (labels.size() != images.ids.size())
      throw Error("labels cover " + std::to_string(labels.size()) + " ids but embeddings have " +
                  std::to_string(images.ids.size()) + " rows");
    for (const auto& id : images.ids)
      if (labels.find(id) == labels.end()) throw Error("no label for id '" + id + "'");
    split = make_split(labels, config.seen_fraction, config.labeled_fraction, config.seed);
    save_split(split, (out / "split.csv").string());
  });

  // The image view fed to fusion: raw, or head-refined when training is on.
  EmbeddingMatrix views = images;
  if (config.train_head) {
    run_stage("train", [&] {
      TrainConfig tc;
      tc.loss.tau = config.tau;
      tc.loss.lambda = config.lambda;
      tc.loss.batch_labeled = config.batch_labeled;
      tc.loss.batch_unlabeled = config.batch_unlabeled;
      tc.epochs = config.epochs;
      tc.lr = config.lr;
      tc.view_noise_sigma = config.view_noise;
      tc.out_dims = config.head_out_dims;
      tc.seed = config.seed + 1;
      const TrainResult trained = train_head(images, split, tc);
      save_head(trained.head, (out / "head.emb").string());
      std::ostringstream trace;
      trace << std::setprecision(17) << "epoch,loss\n";
      for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e)
        trace << e << ',' << trained.epoch_loss[e] << '\n';
      write_text_file(trace.str(), out / "loss_trace.csv");
      // The saved head is the authoritative artifact; apply the reloaded copy
      // so a rerun from head.emb reproduces refined.emb exactly.
      const ProjectionHead reloaded = load_head((out / "head.emb").string());
      views = reloaded.apply(images);
      save_matrix(views, (out / "refined.emb").string());
    });
  }

  CorpusIndex index;
  if (text_on) {
    run_stage("index", [&] {
      const std::vector<std::string> texts = load_corpus_texts(config.corpus_text);
      const EmbeddingMatrix corpus = load_matrix(config.corpus_emb);
      const CorpusIndex built = build_index(texts, corpus);
      save_index(built, (out / "index.emb").string());
      index = load_index((out / "index.emb").string());
      index.texts = texts;
    });
  }

  EmbeddingMatrix fused;
  run_stage("augment", [&] {
    AugmentResult result =
        augment_dataset(images, views, index, text_on ? config.k_retrieve : 0);
    save_matrix(result.fused, (out / "features.emb").string());
    save_provenance(result, (out / "provenance.csv").string());
    fused = std::move(result.fused);
  });

  ClusteringResult clusters;
  run_stage("cluster", [&] {
    SSKMeansConfig kc;
    kc.k_total = config.k_total > 0 ? config.k_total : split.num_total_classes();
    kc.seed = config.seed + 2;
    clusters = cluster_dataset(fused, split, kc);
    save_assignments(clusters, (out / "assignments.csv").string());
    save_centroids(clusters, (out / "centroids.emb").string());
    std::ostringstream trace;
    trace << std::setprecision(17) << "iteration,objective\n";
    for (std::size_t i = 0; i < clusters.objective_trace.size(); ++i)
      trace << (i + 1) << ',' << clusters.objective_trace[i] << '\n';
    write_text_file(trace.str(), out / "objective_trace.csv");
  });

  return run_stage("eval", [&] {
    std::map<std::string, Index> pred;
    for (std::size_t i = 0; i < clusters.ids.size(); ++i)
      pred.emplace(clusters.ids[i], clusters.assignment[i]);
    const EvalReport report = subset_report(pred, labels, split);
    save_report(report, (out / "report.csv").string());
    return report;
  });
}

std::vector<SweepRow> sweep_topk(const PipelineConfig& config,
                                 const std::vector<Index>& k_values,
                                 const std::vector<std::uint64_t>& seeds) {
  if (k_values.empty()) throw Error("sweep needs at least one k value");
  const std::vector<std::uint64_t> seed_list =
      seeds.empty() ? std::vector<std::uint64_t>{config.seed} : seeds;

  std::vector<SweepRow> rows;
  rows.reserve(k_values.size());
  for (const Index k : k_values) {
    if (k < 0) throw Error("k values must be >= 0");
    SweepRow row;
    row.k = k;
    for (const std::uint64_t seed : seed_list) {
      PipelineConfig run = config;
      run.k_retrieve = k;
      run.use_text = k > 0;
      run.seed = seed;
      std::ostringstream sub;
      sub << "k" << k << "_s" << seed;
      run.out_dir = (fs::path(config.out_dir) / sub.str()).string();
      const EvalReport report = run_pipeline(run);
      row.acc_all += report.acc_all;
      row.acc_old += report.acc_old;
      row.acc_new += report.acc_new;
    }
    const double denom = static_cast<double>(seed_list.size());
    row.acc_all /= denom;
    row.acc_old /= denom;
    row.acc_new /= denom;
    rows.push_back(row);
  }
  return rows;
}

std::vector<CorpusRow> compare_corpora(const PipelineConfig& config,
                                       const std::vector<CorpusSpec>& corpora,
                                       const std::vector<std::uint64_t>& seeds) {
  if (corpora.size() < 2) throw Error("corpus comparison needs at least 2 corpora");
  const std::vector<std::uint64_t> seed_list =
      seeds.empty() ? std::vector<std::uint64_t>{config.seed} : seeds;

  std::vector<CorpusRow> rows;
  rows.reserve(corpora.size() + 1);
  CorpusRow average;
  average.name = "Average";
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    CorpusRow row;
    row.name = corpora[i].name;
    for (const std::uint64_t seed : seed_list) {
      PipelineConfig run = config;
      run.corpus_text = corpora[i].text_path;
      run.corpus_emb = corpora[i].emb_path;
      run.seed = seed;
      std::ostringstream sub;
      sub << "corpus" << i << "_s" << seed;
      run.out_dir = (fs::path(config.out_dir) / sub.str()).string();
      const EvalReport report = run_pipeline(run);
      row.acc_all += report.acc_all;
      row.acc_old += report.acc_old;
      row.acc_new += report.acc_new;
    }
    const double denom = static_cast<double>(seed_list.size());
    row.acc_all /= denom;
    row.acc_old /= denom;
    row.acc_new /= denom;
    average.acc_all += row.acc_all;
    average.acc_old += row.acc_old;
    average.acc_new += row.acc_new;
    rows.push_back(row);
  }
  const double denom = static_cast<double>(corpora.size());
  average.acc_all /= denom;
  average.acc_old /= denom;
  average.acc_new /= denom;
  rows.push_back(average);
  return rows;
}

void save_sweep(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "k,acc_all,acc_old,acc_new\n" << std::fixed << std::setprecision(1);
  for (const auto& row : rows)
    out << row.k << ',' << row.acc_all * 100.0 << ',' << row.acc_old * 100.0 << ','
        << row.acc_new * 100.0 << '\n';
  write_text_file(out.str(), path);
}

void save_corpus_table(const std::vector<CorpusRow>& rows, const std::string& path) {
  std::ostringstream out;
  out << "corpus,acc_all,acc_old,acc_new\n" << std::fixed << std::setprecision(1);
  for (const auto& row : rows)
    out << row.name << ',' << row.acc_all * 100.0 << ',' << row.acc_old * 100.0 << ','
        << row.acc_new * 100.0 << '\n';
  write_text_file(out.str(), path);
}

}  // namespace gcdkit

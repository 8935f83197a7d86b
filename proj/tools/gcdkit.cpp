#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gcdkit/augment.hpp"
#include "gcdkit/cluster.hpp"
#include "gcdkit/core.hpp"
#include "gcdkit/embedstore.hpp"
#include "gcdkit/eval.hpp"
#include "gcdkit/harness.hpp"
#include "gcdkit/reprloss.hpp"
#include "gcdkit/retrieval.hpp"
#include "gcdkit/synth.hpp"

namespace {

namespace fs = std::filesystem;
using namespace gcdkit;

// out.csv -> out<suffix><ext> in the same directory.
std::string sibling(const std::string& path, const std::string& suffix,
                    const std::string& ext) {
  const fs::path p(path);
  return (p.parent_path() / (p.stem().string() + suffix + ext)).string();
}

std::vector<std::string> split_commas(const std::string& list) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(list);
  while (std::getline(in, part, ',')) parts.push_back(part);
  return parts;
}

std::vector<Index> parse_k_list(const std::string& list) {
  std::vector<Index> out;
  for (const auto& part : split_commas(list)) out.push_back(static_cast<Index>(std::stoll(part)));
  if (out.empty()) throw Error("empty k list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& list) {
  std::vector<std::uint64_t> out;
  if (list.empty()) return out;
  for (const auto& part : split_commas(list)) out.push_back(std::stoull(part));
  return out;
}

PipelineConfig config_with_overrides(const std::string& path,
                                     const std::vector<std::string>& overrides) {
  PipelineConfig config = path.empty() ? PipelineConfig{} : load_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("override is not key=value: '" + kv + "'");
    apply_override(config, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return config;
}

void write_or_throw(const std::string& content, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << content;
  if (!out) throw Error("failed while writing: " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented category discovery over precomputed embeddings"};
  app.require_subcommand(1);

  // synth
  SynthConfig synth_cfg;
  std::string synth_out_dir;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic aligned dataset");
  synth_cmd->add_option("--classes", synth_cfg.num_classes, "Number of classes");
  synth_cmd->add_option("--dims-image", synth_cfg.dims_image, "Image embedding dims");
  synth_cmd->add_option("--dims-text", synth_cfg.dims_text, "Text embedding dims");
  synth_cmd->add_option("--per-class", synth_cfg.items_per_class, "Images per class");
  synth_cmd->add_option("--captions-per-class", synth_cfg.captions_per_class,
                        "Captions per class");
  synth_cmd->add_option("--sigma-image", synth_cfg.image_noise, "Image noise scale");
  synth_cmd->add_option("--sigma-text", synth_cfg.text_noise, "Caption noise scale");
  synth_cmd->add_option("--alpha", synth_cfg.alignment, "Cross-modal alignment in [0,1]");
  synth_cmd->add_option("--seed", synth_cfg.seed, "RNG seed");
  synth_cmd->add_option("--out-dir", synth_out_dir, "Output directory")->required();
  synth_cmd->callback([&] {
    const SynthData data = generate(synth_cfg);
    for (const auto& warning : data.warnings) std::cerr << "warning: " << warning << '\n';
    write_dataset(data, synth_out_dir);
    std::cout << "wrote " << data.images.rows() << " images and " << data.corpus.rows()
              << " captions to " << synth_out_dir << '\n';
  });

  // split
  std::string split_labels, split_out;
  double split_seen = 0.5, split_labeled = 0.5;
  std::uint64_t split_seed = 0;
  auto* split_cmd = app.add_subcommand("split", "Partition labels into labeled/unlabeled");
  split_cmd->add_option("--labels", split_labels, "Label CSV")->required();
  split_cmd->add_option("--seen-fraction", split_seen, "Fraction of classes seen");
  split_cmd->add_option("--labeled-fraction", split_labeled, "Labeled fraction per seen class");
  split_cmd->add_option("--seed", split_seed, "RNG seed");
  split_cmd->add_option("--out", split_out, "Output split CSV")->required();
  split_cmd->callback([&] {
    const DatasetSplit split =
        make_split(load_labels(split_labels), split_seen, split_labeled, split_seed);
    save_split(split, split_out);
    std::cout << split.labeled_ids.size() << " labeled / " << split.unlabeled_ids.size()
              << " unlabeled items, " << split.seen_classes.size() << '/'
              << split.all_classes.size() << " classes seen\n";
  });

  // index
  std::string index_text, index_emb, index_out;
  auto* index_cmd = app.add_subcommand("index", "Build the caption retrieval index");
  index_cmd->add_option("--corpus-text", index_text, "Caption text file")->required();
  index_cmd->add_option("--corpus-emb", index_emb, "Caption EMB1 file")->required();
  index_cmd->add_option("--out", index_out, "Output index file")->required();
  index_cmd->callback([&] {
    const CorpusIndex index =
        build_index(load_corpus_texts(index_text), load_matrix(index_emb));
    save_index(index, index_out);
    std::cout << "indexed " << index.size() << " captions\n";
  });

  // retrieve
  std::string retrieve_index, retrieve_queries, retrieve_out;
  Index retrieve_k = 4;
  auto* retrieve_cmd = app.add_subcommand("retrieve", "Top-k captions per query");
  retrieve_cmd->add_option("--index", retrieve_index, "Index file")->required();
  retrieve_cmd->add_option("--queries", retrieve_queries, "Query EMB1 file")->required();
  retrieve_cmd->add_option("--k", retrieve_k, "Hits per query");
  retrieve_cmd->add_option("--out", retrieve_out, "Output CSV")->required();
  retrieve_cmd->callback([&] {
    const CorpusIndex index = load_index(retrieve_index);
    const EmbeddingMatrix queries = load_matrix(retrieve_queries);
    const auto hits = batch_query(index, queries, retrieve_k);
    std::ostringstream out;
    out << std::setprecision(17) << "query_id,rank,corpus_row,score\n";
    for (Index r = 0; r < queries.rows(); ++r) {
      const auto& row_hits = hits[static_cast<std::size_t>(r)];
      for (std::size_t rank = 0; rank < row_hits.size(); ++rank)
        out << queries.ids[static_cast<std::size_t>(r)] << ',' << rank << ','
            << row_hits[rank].corpus_row << ',' << row_hits[rank].score << '\n';
    }
    write_or_throw(out.str(), retrieve_out);
    std::cout << "retrieved top-" << retrieve_k << " for " << queries.rows() << " queries\n";
  });

  // augment
  std::string augment_images, augment_index, augment_out, augment_provenance;
  Index augment_k = 4;
  bool augment_no_text = false;
  auto* augment_cmd = app.add_subcommand("augment", "Fuse image views with retrieved text");
  augment_cmd->add_option("--images", augment_images, "Image EMB1 file")->required();
  augment_cmd->add_option("--index", augment_index, "Index file");
  augment_cmd->add_option("--k", augment_k, "Hits fused per image");
  augment_cmd->add_flag("--no-text", augment_no_text, "Image-only views");
  augment_cmd->add_option("--out", augment_out, "Output EMB1 file")->required();
  augment_cmd->add_option("--provenance", augment_provenance,
                          "Provenance CSV (default: <out>_provenance.csv)");
  augment_cmd->callback([&] {
    const EmbeddingMatrix images = load_matrix(augment_images);
    const bool text_on = !augment_no_text && augment_k > 0;
    CorpusIndex index;
    if (text_on) {
      if (augment_index.empty()) throw Error("--index is required unless --no-text");
      index = load_index(augment_index);
    }
    const AugmentResult result = augment_dataset(images, index, text_on ? augment_k : 0);
    save_matrix(result.fused, augment_out);
    if (augment_provenance.empty())
      augment_provenance = sibling(augment_out, "_provenance", ".csv");
    save_provenance(result, augment_provenance);
    std::cout << "fused " << result.fused.rows() << " views of " << result.fused.dims()
              << " dims\n";
  });

  // train-head
  std::string train_images, train_split, train_out, train_trace;
  TrainConfig train_cfg;
  auto* train_cmd = app.add_subcommand("train-head", "Train the projection head");
  train_cmd->add_option("--images", train_images, "Image EMB1 file")->required();
  train_cmd->add_option("--split", train_split, "Split CSV")->required();
  train_cmd->add_option("--tau", train_cfg.loss.tau, "Temperature");
  train_cmd->add_option("--lambda", train_cfg.loss.lambda, "Supervised weight");
  train_cmd->add_option("--epochs", train_cfg.epochs, "Training epochs");
  train_cmd->add_option("--lr", train_cfg.lr, "Base learning rate");
  train_cmd->add_option("--seed", train_cfg.seed, "RNG seed");
  train_cmd->add_option("--batch-labeled", train_cfg.loss.batch_labeled, "Labeled batch size");
  train_cmd->add_option("--batch-unlabeled", train_cfg.loss.batch_unlabeled,
                        "Unlabeled batch size");
  train_cmd->add_option("--view-noise", train_cfg.view_noise_sigma, "View noise sigma");
  train_cmd->add_option("--out-dims", train_cfg.out_dims, "Head output dims (0 = input)");
  train_cmd->add_option("--out", train_out, "Output head file")->required();
  train_cmd->add_option("--trace", train_trace, "Loss trace CSV (default: <out>_trace.csv)");
  train_cmd->callback([&] {
    const TrainResult result =
        train_head(load_matrix(train_images), load_split(train_split), train_cfg);
    save_head(result.head, train_out);
    std::ostringstream trace;
    trace << std::setprecision(17) << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
      trace << e << ',' << result.epoch_loss[e] << '\n';
    if (train_trace.empty()) train_trace = sibling(train_out, "_trace", ".csv");
    write_or_throw(trace.str(), train_trace);
    std::cout << "trained " << result.epoch_loss.size() << " epochs, final loss "
              << result.epoch_loss.back() << '\n';
  });

  // cluster
  std::string cluster_features, cluster_split, cluster_out, cluster_centroids, cluster_trace;
  SSKMeansConfig cluster_cfg;
  auto* cluster_cmd = app.add_subcommand("cluster", "Semi-supervised k-means");
  cluster_cmd->add_option("--features", cluster_features, "Feature EMB1 file")->required();
  cluster_cmd->add_option("--split", cluster_split, "Split CSV")->required();
  cluster_cmd->add_option("--k", cluster_cfg.k_total, "Total clusters")->required();
  cluster_cmd->add_option("--seed", cluster_cfg.seed, "RNG seed");
  cluster_cmd->add_option("--max-iters", cluster_cfg.max_iters, "Iteration cap");
  cluster_cmd->add_option("--tol", cluster_cfg.tol, "Centroid-shift stop threshold");
  cluster_cmd->add_option("--out", cluster_out, "Assignment CSV")->required();
  cluster_cmd->add_option("--centroids", cluster_centroids,
                          "Centroid EMB1 (default: <out>_centroids.emb)");
  cluster_cmd->add_option("--trace", cluster_trace,
                          "Objective trace CSV (default: <out>_trace.csv)");
  cluster_cmd->callback([&] {
    const ClusteringResult result = cluster_dataset(
        load_matrix(cluster_features), load_split(cluster_split), cluster_cfg);
    save_assignments(result, cluster_out);
    if (cluster_centroids.empty()) cluster_centroids = sibling(cluster_out, "_centroids", ".emb");
    save_centroids(result, cluster_centroids);
    std::ostringstream trace;
    trace << std::setprecision(17) << "iteration,objective\n";
    for (std::size_t i = 0; i < result.objective_trace.size(); ++i)
      trace << (i + 1) << ',' << result.objective_trace[i] << '\n';
    if (cluster_trace.empty()) cluster_trace = sibling(cluster_out, "_trace", ".csv");
    write_or_throw(trace.str(), cluster_trace);
    std::cout << (result.converged ? "converged" : "stopped") << " after "
              << result.iterations_run << " iterations, objective "
              << result.objective_trace.back() << '\n';
  });

  // eval
  std::string eval_pred, eval_truth, eval_split, eval_out;
  bool eval_refit = false;
  auto* eval_cmd = app.add_subcommand("eval", "Hungarian-matched clustering accuracy");
  eval_cmd->add_option("--pred", eval_pred, "Assignment CSV")->required();
  eval_cmd->add_option("--truth", eval_truth, "Label CSV")->required();
  eval_cmd->add_option("--split", eval_split, "Split CSV")->required();
  eval_cmd->add_flag("--refit-subsets", eval_refit, "Fit Old/New matchings separately");
  eval_cmd->add_option("--out", eval_out, "Report CSV")->required();
  eval_cmd->callback([&] {
    const EvalReport report = subset_report(load_assignments(eval_pred),
                                            load_labels(eval_truth), load_split(eval_split),
                                            eval_refit);
    save_report(report, eval_out);
    std::cout << format_report(report);
  });

  // run / sweep-topk / compare-corpora
  std::string run_config;
  std::vector<std::string> run_overrides;
  auto* run_cmd = app.add_subcommand("run", "Full pipeline from a config file");
  run_cmd->add_option("--config", run_config, "key=value config file");
  run_cmd->add_option("--set", run_overrides, "Override, e.g. --set k_retrieve=8");
  run_cmd->callback([&] {
    const EvalReport report =
        run_pipeline(config_with_overrides(run_config, run_overrides));
    std::cout << format_report(report);
  });

  std::string sweep_config, sweep_ks = "0,1,2,4,8,16", sweep_seeds, sweep_out;
  std::vector<std::string> sweep_overrides;
  auto* sweep_cmd = app.add_subcommand("sweep-topk", "Pipeline sweep over retrieval k");
  sweep_cmd->add_option("--config", sweep_config, "key=value config file");
  sweep_cmd->add_option("--set", sweep_overrides, "Config override");
  sweep_cmd->add_option("--k-values", sweep_ks, "Comma-separated k values");
  sweep_cmd->add_option("--seeds", sweep_seeds, "Comma-separated seeds");
  sweep_cmd->add_option("--out", sweep_out, "Table CSV (default: <out_dir>/sweep_topk.csv)");
  sweep_cmd->callback([&] {
    const PipelineConfig config = config_with_overrides(sweep_config, sweep_overrides);
    const auto rows = sweep_topk(config, parse_k_list(sweep_ks), parse_seed_list(sweep_seeds));
    if (sweep_out.empty()) sweep_out = (fs::path(config.out_dir) / "sweep_topk.csv").string();
    save_sweep(rows, sweep_out);
    std::cout << "wrote " << rows.size() << " rows to " << sweep_out << '\n';
  });

  std::string corpora_config, corpora_seeds, corpora_out;
  std::vector<std::string> corpora_specs, corpora_overrides;
  auto* corpora_cmd = app.add_subcommand("compare-corpora", "Pipeline per caption corpus");
  corpora_cmd->add_option("--config", corpora_config, "key=value config file");
  corpora_cmd->add_option("--set", corpora_overrides, "Config override");
  corpora_cmd->add_option("--corpus", corpora_specs, "name,text_path,emb_path (repeatable)")
      ->required();
  corpora_cmd->add_option("--seeds", corpora_seeds, "Comma-separated seeds");
  corpora_cmd->add_option("--out", corpora_out, "Table CSV (default: <out_dir>/corpora.csv)");
  corpora_cmd->callback([&] {
    const PipelineConfig config = config_with_overrides(corpora_config, corpora_overrides);
    std::vector<CorpusSpec> corpora;
    for (const auto& spec : corpora_specs) {
      const auto parts = split_commas(spec);
      if (parts.size() != 3)
        throw Error("--corpus expects name,text_path,emb_path, got '" + spec + "'");
      corpora.push_back(CorpusSpec{parts[0], parts[1], parts[2]});
    }
    const auto rows = compare_corpora(config, corpora, parse_seed_list(corpora_seeds));
    if (corpora_out.empty()) corpora_out = (fs::path(config.out_dir) / "corpora.csv").string();
    save_corpus_table(rows, corpora_out);
    std::cout << "wrote " << rows.size() << " rows to " << corpora_out << '\n';
  });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

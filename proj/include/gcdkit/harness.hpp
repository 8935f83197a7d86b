#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcdkit/core.hpp"
#include "gcdkit/eval.hpp"

namespace gcdkit {

// Resolved settings for one end-to-end run. Loaded from a UTF-8 key=value
// file (keys match the field comments), then optionally overridden. The
// per-stage RNG seeds derive from `seed`: split uses seed, head training
// seed+1, clustering seed+2.
struct PipelineConfig {
  std::string images;       // images=  EMB1 image embeddings
  std::string labels;       // labels=  id,class_name CSV
  std::string corpus_text;  // corpus_text=  one caption per line
  std::string corpus_emb;   // corpus_emb=  EMB1 caption embeddings
  std::string out_dir;      // out_dir=  artifact directory
  double seen_fraction = 0.5;
  double labeled_fraction = 0.5;
  Index k_retrieve = 4;
  bool use_text = true;
  Index k_total = 0;  // 0 = number of classes in the labels
  double tau = 0.07;
  double lambda = 0.25;
  bool train_head = false;  // head refinement off by default
  int epochs = 20;
  double lr = 5e-5;
  double view_noise = 0.05;
  Index head_out_dims = 0;  // 0 = input dims
  Index batch_labeled = 128;
  Index batch_unlabeled = 128;
  std::uint64_t seed = 0;
};

PipelineConfig load_config(const std::string& path);
// Applies one key=value override; unknown keys or unparsable values throw.
void apply_override(PipelineConfig& config, const std::string& key,
                    const std::string& value);
// Sorted key=value dump of every setting, for provenance logging.
std::string resolved_config(const PipelineConfig& config);

// Carries the failing stage name; the message is "<stage>: <cause>".
struct StageError : Error {
  StageError(const std::string& stage_name, const std::string& cause)
      : Error(stage_name + ": " + cause), stage(stage_name) {}
  std::string stage;
};

// split -> optional head training -> index -> fusion -> clustering -> eval.
// Persists every intermediate under out_dir (split.csv, head.emb,
// loss_trace.csv, refined.emb, index.emb, features.emb, provenance.csv,
// assignments.csv, centroids.emb, objective_trace.csv, report.csv,
// resolved_config.txt) and returns the evaluation over the unlabeled part.
// Retrieval always queries with the raw image embeddings; the fused image
// view is the head-refined one when training is enabled.
EvalReport run_pipeline(const PipelineConfig& config);

struct SweepRow {
  Index k = 0;
  double acc_all = 0.0, acc_old = 0.0, acc_new = 0.0;
};

// One pipeline per (k, seed) under out_dir/k<k>_s<seed>; each row averages
// a k's accuracies over the seeds (empty seed list = config.seed). k = 0
// runs image-only.
std::vector<SweepRow> sweep_topk(const PipelineConfig& config,
                                 const std::vector<Index>& k_values,
                                 const std::vector<std::uint64_t>& seeds = {});

struct CorpusSpec {
  std::string name;
  std::string text_path;
  std::string emb_path;
};

struct CorpusRow {
  std::string name;
  double acc_all = 0.0, acc_old = 0.0, acc_new = 0.0;
};

// Identical pipeline per corpus (>= 2 required), averaged over the seeds,
// with a final "Average" row holding the column means over the corpora.
std::vector<CorpusRow> compare_corpora(const PipelineConfig& config,
                                       const std::vector<CorpusSpec>& corpora,
                                       const std::vector<std::uint64_t>& seeds = {});

// CSV tables, percentages with one decimal.
void save_sweep(const std::vector<SweepRow>& rows, const std::string& path);
void save_corpus_table(const std::vector<CorpusRow>& rows, const std::string& path);

}  // namespace gcdkit

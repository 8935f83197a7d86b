#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcdkit/core.hpp"
#include "gcdkit/embedstore.hpp"

namespace gcdkit {

struct LossConfig {
  double tau = 0.07;        // temperature, > 0
  double lambda = 0.25;     // supervised weight, in [0, 1]
  Index batch_labeled = 128;
  Index batch_unlabeled = 128;
};

// A contrastive mini-batch: anchors and their augmented counterparts are
// paired by row. Labels are present only for labeled batches.
struct Batch {
  MatrixD anchors;  // B x d, rows L2-normalized
  MatrixD views;    // B x d, rows L2-normalized
  std::vector<Index> labels;  // empty, or one class code per row

  Index size() const { return anchors.rows(); }
};

// Loss value plus its gradient with respect to every anchor/view entry.
struct LossGrad {
  double value = 0.0;
  MatrixD d_anchors;
  MatrixD d_views;
};

// Mean over anchors i of -log[ exp(a_i.v_i/tau) / sum_{n != i} exp(a_i.v_n/tau) ].
// Negatives come from the view rows; the positive pair is excluded from the
// denominator. Batch size must be >= 2.
LossGrad unsup_loss(const Batch& batch, double tau);

// Mean over anchors i of -(1/|N(i)|) sum_{q in N(i)} log[ exp(a_i.a_q/tau) /
// sum_{n != i} exp(a_i.a_n/tau) ], where N(i) are the other same-label rows.
// Operates on anchors only. An anchor with empty N(i) is an error naming its
// index.
LossGrad sup_loss(const Batch& batch, double tau);

// Combined objective over the two sub-batches. The unsupervised term is
// evaluated on the concatenation of `unlab` and `lab` (negatives span the
// union); the supervised term on `lab` alone. Each term is a batch mean, so
// the total is (1-lambda) * unsup + lambda * sup. The supervised term is
// only evaluated (and `lab` only validated) when lambda > 0.
struct TotalLossGrad {
  double value = 0.0;
  MatrixD d_unlab_anchors, d_unlab_views;
  MatrixD d_lab_anchors, d_lab_views;
};
TotalLossGrad total_loss(const Batch& unlab, const Batch& lab, const LossConfig& config);

// Affine map followed by row L2-normalization. Parameters are trained in
// double and stored as float on disk.
struct ProjectionHead {
  MatrixD weight;  // in_dims x out_dims
  VecD bias;       // out_dims

  Index in_dims() const { return weight.rows(); }
  Index out_dims() const { return weight.cols(); }

  // Maps already unit-norm rows: row -> normalize(row * weight + bias).
  MatrixD project(const MatrixD& unit_rows) const;
  // L2-normalizes the input rows, projects, returns float storage with the
  // ids preserved.
  EmbeddingMatrix apply(const EmbeddingMatrix& inputs) const;
};

// Head file: EMB1 matrix of in_dims+1 rows by out_dims columns; the final
// row (id "bias") is the bias, the others (ids "w<r>") the weight rows.
void save_head(const ProjectionHead& head, const std::string& path);
ProjectionHead load_head(const std::string& path);

struct TrainConfig {
  LossConfig loss;
  int epochs = 20;
  double lr = 5e-5;               // cosine-annealed over all steps
  double view_noise_sigma = 0.05; // additive Gaussian view noise
  Index out_dims = 0;             // 0 = input dims
  std::uint64_t seed = 0;
};

struct TrainResult {
  ProjectionHead head;
  std::vector<double> epoch_loss;  // mean step loss per epoch
};

// Thrown when a step produces a non-finite loss; carries the losses of the
// epochs completed before the abort.
struct TrainingDiverged : Error {
  explicit TrainingDiverged(const std::string& what, std::vector<double> trace)
      : Error(what), epoch_loss(std::move(trace)) {}
  std::vector<double> epoch_loss;
};

// Trains the projection head by SGD on the combined objective over fixed
// input embeddings. Two views of an item are normalize(x + sigma*g) with
// fresh Gaussian g per view. The unlabeled sub-batch is drawn from all
// items, the labeled one from labeled items in same-class pairs so that
// every anchor has a positive. Deterministic given the seed.
TrainResult train_head(const EmbeddingMatrix& images, const DatasetSplit& split,
                       const TrainConfig& config);

}  // namespace gcdkit

#include "gcdkit/reprloss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>
#include <utility>

namespace gcdkit {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_tau(double tau) {
  if (!(tau > 0.0)) throw Error("temperature must be positive");
}

void check_pair_shape(const Batch& batch, const char* name) {
  if (batch.anchors.rows() != batch.views.rows() ||
      batch.anchors.cols() != batch.views.cols()) {
    std::ostringstream msg;
    msg << name << ": anchors are " << batch.anchors.rows() << "x"
        << batch.anchors.cols() << " but views are " << batch.views.rows() << "x"
        << batch.views.cols();
    throw Error(msg.str());
  }
}

// Row-wise log-sum-exp of S excluding the diagonal, max-subtracted for
// stability. `softmax` receives exp(S(i,n) - lse(i)) off the diagonal and
// zeros on it.
void offdiag_logsumexp(const MatrixD& S, VecD& lse, MatrixD& softmax) {
  const Index B = S.rows();
  lse.resize(B);
  softmax = MatrixD::Zero(B, B);
  for (Index i = 0; i < B; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Index n = 0; n < B; ++n)
      if (n != i && S(i, n) > m) m = S(i, n);
    double sum = 0.0;
    for (Index n = 0; n < B; ++n)
      if (n != i) sum += std::exp(S(i, n) - m);
    lse(i) = m + std::log(sum);
    for (Index n = 0; n < B; ++n)
      if (n != i) softmax(i, n) = std::exp(S(i, n) - lse(i));
  }
}

}  // namespace

LossGrad unsup_loss(const Batch& batch, double tau) {
  check_tau(tau);
  check_pair_shape(batch, "batch");
  const Index B = batch.size();
  if (B < 2) throw Error("unsupervised loss needs at least 2 items for negatives");

  MatrixD S = (batch.anchors * batch.views.transpose()) / tau;
  if (!S.allFinite()) throw Error("non-finite similarity logits");

  VecD lse;
  MatrixD G;  // becomes dL/dS
  offdiag_logsumexp(S, lse, G);

  double value = 0.0;
  for (Index i = 0; i < B; ++i) value += lse(i) - S(i, i);
  value /= static_cast<double>(B);

  G /= static_cast<double>(B);
  for (Index i = 0; i < B; ++i) G(i, i) = -1.0 / static_cast<double>(B);

  LossGrad out;
  out.value = value;
  out.d_anchors = (G * batch.views) / tau;
  out.d_views = (G.transpose() * batch.anchors) / tau;
  return out;
}

LossGrad sup_loss(const Batch& batch, double tau) {
  check_tau(tau);
  const Index B = batch.anchors.rows();
  if (B < 2) throw Error("supervised loss needs at least 2 items");
  if (static_cast<Index>(batch.labels.size()) != B)
    throw Error("supervised batch needs one label per row");

  MatrixD S = (batch.anchors * batch.anchors.transpose()) / tau;
  if (!S.allFinite()) throw Error("non-finite similarity logits");

  VecD lse;
  MatrixD G;
  offdiag_logsumexp(S, lse, G);
  G /= static_cast<double>(B);

  double value = 0.0;
  std::vector<Index> pos;
  for (Index i = 0; i < B; ++i) {
    pos.clear();
    for (Index q = 0; q < B; ++q)
      if (q != i && batch.labels[q] == batch.labels[i]) pos.push_back(q);
    if (pos.empty()) {
      std::ostringstream msg;
      msg << "anchor " << i << " has no same-label positive in the batch";
      throw Error(msg.str());
    }
    double mean_pos = 0.0;
    for (Index q : pos) mean_pos += S(i, q);
    mean_pos /= static_cast<double>(pos.size());
    value += lse(i) - mean_pos;
    const double w = 1.0 / (static_cast<double>(B) * static_cast<double>(pos.size()));
    for (Index q : pos) G(i, q) -= w;
  }
  value /= static_cast<double>(B);

  LossGrad out;
  out.value = value;
  // Anchors enter S on both sides, hence the symmetrized product.
  out.d_anchors = ((G + G.transpose()) * batch.anchors) / tau;
  out.d_views = MatrixD::Zero(B, batch.anchors.cols());
  return out;
}

TotalLossGrad total_loss(const Batch& unlab, const Batch& lab, const LossConfig& config) {
  check_tau(config.tau);
  if (config.lambda < 0.0 || config.lambda > 1.0)
    throw Error("lambda must lie in [0, 1]");
  check_pair_shape(unlab, "unlabeled batch");
  check_pair_shape(lab, "labeled batch");
  const Index bu = unlab.size();
  const Index bl = lab.size();
  if (bu > 0 && bl > 0 && unlab.anchors.cols() != lab.anchors.cols())
    throw Error("sub-batch dimensionalities differ");
  if (bu + bl < 2) throw Error("combined batch needs at least 2 items");
  const Index d = bu > 0 ? unlab.anchors.cols() : lab.anchors.cols();

  Batch joint;
  joint.anchors.resize(bu + bl, d);
  joint.views.resize(bu + bl, d);
  joint.anchors.topRows(bu) = unlab.anchors;
  joint.anchors.bottomRows(bl) = lab.anchors;
  joint.views.topRows(bu) = unlab.views;
  joint.views.bottomRows(bl) = lab.views;

  const LossGrad u = unsup_loss(joint, config.tau);
  const double wu = 1.0 - config.lambda;

  TotalLossGrad out;
  out.value = wu * u.value;
  out.d_unlab_anchors = wu * u.d_anchors.topRows(bu);
  out.d_unlab_views = wu * u.d_views.topRows(bu);
  out.d_lab_anchors = wu * u.d_anchors.bottomRows(bl);
  out.d_lab_views = wu * u.d_views.bottomRows(bl);

  if (config.lambda > 0.0) {
    const LossGrad s = sup_loss(lab, config.tau);
    out.value += config.lambda * s.value;
    out.d_lab_anchors += config.lambda * s.d_anchors;
  }
  return out;
}

MatrixD ProjectionHead::project(const MatrixD& unit_rows) const {
  if (unit_rows.cols() != in_dims()) {
    std::ostringstream msg;
    msg << "head expects " << in_dims() << " input dims, got " << unit_rows.cols();
    throw Error(msg.str());
  }
  MatrixD y = unit_rows * weight;
  y.rowwise() += bias.transpose();
  for (Index r = 0; r < y.rows(); ++r) {
    const double norm = row_norm(y.row(r));
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      std::ostringstream msg;
      msg << "projected row " << r << " has zero or non-finite norm";
      throw Error(msg.str());
    }
    y.row(r) /= norm;
  }
  return y;
}

EmbeddingMatrix ProjectionHead::apply(const EmbeddingMatrix& inputs) const {
  MatrixD unit(inputs.data.rows(), inputs.data.cols());
  for (Index r = 0; r < inputs.data.rows(); ++r) {
    const double norm = row_norm(inputs.data.row(r));
    if (!(norm > 0.0))
      throw Error("cannot normalize zero row '" + inputs.ids[static_cast<std::size_t>(r)] + "'");
    unit.row(r) = inputs.data.row(r).cast<double>() / norm;
  }
  EmbeddingMatrix out;
  out.data = project(unit).cast<float>();
  out.ids = inputs.ids;
  return out;
}

void save_head(const ProjectionHead& head, const std::string& path) {
  EmbeddingMatrix file;
  file.data.resize(head.in_dims() + 1, head.out_dims());
  file.data.topRows(head.in_dims()) = head.weight.cast<float>();
  file.data.bottomRows(1) = head.bias.transpose().cast<float>();
  file.ids.reserve(static_cast<std::size_t>(head.in_dims()) + 1);
  for (Index r = 0; r < head.in_dims(); ++r) {
    std::ostringstream id;
    id << "w" << r;
    file.ids.push_back(id.str());
  }
  file.ids.push_back("bias");
  save_matrix(file, path);
}

ProjectionHead load_head(const std::string& path) {
  const EmbeddingMatrix file = load_matrix(path);
  if (file.data.rows() < 2 || file.ids.back() != "bias")
    throw Error("not a head file (needs weight rows followed by a 'bias' row): " + path);
  ProjectionHead head;
  head.weight = file.data.topRows(file.data.rows() - 1).cast<double>();
  head.bias = file.data.bottomRows(1).transpose().cast<double>();
  return head;
}

namespace {

struct ForwardCache {
  MatrixD inputs;  // rows fed to the head
  MatrixD y;       // pre-normalization outputs
  VecD norms;
  MatrixD z;       // normalized outputs
};

// z = y/|y| with y = inputs*W + b. Throws TrainingDiverged on a degenerate
// row since that poisons the loss.
ForwardCache forward(const MatrixD& inputs, const ProjectionHead& head,
                     const std::vector<double>& trace) {
  ForwardCache cache;
  cache.inputs = inputs;
  cache.y = inputs * head.weight;
  cache.y.rowwise() += head.bias.transpose();
  cache.norms.resize(cache.y.rows());
  cache.z.resize(cache.y.rows(), cache.y.cols());
  for (Index r = 0; r < cache.y.rows(); ++r) {
    const double norm = row_norm(cache.y.row(r));
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw TrainingDiverged("projection output collapsed to zero or non-finite norm", trace);
    cache.norms(r) = norm;
    cache.z.row(r) = cache.y.row(r) / norm;
  }
  return cache;
}

// Backprop of dL/dz through the row normalization and affine map, added
// into dW/db. dY_r = (dZ_r - (z_r . dZ_r) z_r) / |y_r|.
void backward(const ForwardCache& cache, const MatrixD& d_z, MatrixD& d_weight,
              VecD& d_bias) {
  MatrixD d_y(d_z.rows(), d_z.cols());
  for (Index r = 0; r < d_z.rows(); ++r) {
    const double dot = cache.z.row(r).dot(d_z.row(r));
    d_y.row(r) = (d_z.row(r) - dot * cache.z.row(r)) / cache.norms(r);
  }
  d_weight += cache.inputs.transpose() * d_y;
  d_bias += d_y.colwise().sum().transpose();
}

}  // namespace

TrainResult train_head(const EmbeddingMatrix& images, const DatasetSplit& split,
                       const TrainConfig& config) {
  check_tau(config.loss.tau);
  if (config.loss.lambda < 0.0 || config.loss.lambda > 1.0)
    throw Error("lambda must lie in [0, 1]");
  if (config.loss.batch_unlabeled < 2) throw Error("unlabeled batch size must be >= 2");
  if (config.loss.lambda > 0.0 && config.loss.batch_labeled < 2)
    throw Error("labeled batch size must be >= 2");
  if (config.epochs < 1) throw Error("epochs must be >= 1");
  if (config.lr < 0.0) throw Error("learning rate must be >= 0");
  if (config.view_noise_sigma < 0.0) throw Error("view noise sigma must be >= 0");

  const Index n = images.data.rows();
  const Index in_dims = images.data.cols();
  if (n < 2) throw Error("training needs at least 2 items");
  const Index out_dims = config.out_dims > 0 ? config.out_dims : in_dims;
  if (out_dims < 2) throw Error("output dims must be >= 2");

  // Unit-norm inputs in double; all arithmetic below stays in double.
  MatrixD X(n, in_dims);
  for (Index r = 0; r < n; ++r) {
    const double norm = row_norm(images.data.row(r));
    if (!(norm > 0.0))
      throw Error("cannot normalize zero row '" + images.ids[static_cast<std::size_t>(r)] + "'");
    X.row(r) = images.data.row(r).cast<double>() / norm;
  }

  std::unordered_map<std::string, Index> row_of;
  row_of.reserve(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) row_of.emplace(images.ids[static_cast<std::size_t>(r)], r);

  // Labeled rows grouped by class, classes in sorted order; the class's
  // position doubles as its label code.
  std::map<std::string, std::vector<Index>> by_class;
  for (std::size_t i = 0; i < split.labeled_ids.size(); ++i) {
    const auto it = row_of.find(split.labeled_ids[i]);
    if (it == row_of.end())
      throw Error("labeled id '" + split.labeled_ids[i] + "' not present in the embeddings");
    by_class[split.labeled_classes[i]].push_back(it->second);
  }
  std::vector<std::vector<Index>> class_rows;
  class_rows.reserve(by_class.size());
  for (auto& [cls, rows] : by_class) {
    std::sort(rows.begin(), rows.end());
    class_rows.push_back(rows);
  }

  RngStream rng(config.seed);
  ProjectionHead head;
  head.weight.resize(in_dims, out_dims);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in_dims));
  for (Index r = 0; r < in_dims; ++r)
    for (Index c = 0; c < out_dims; ++c) head.weight(r, c) = rng.next_gaussian() * scale;
  head.bias = VecD::Zero(out_dims);

  const Index chunk = std::min(config.loss.batch_unlabeled, n);
  Index steps_per_epoch = n / chunk;
  if (n % chunk >= 2) ++steps_per_epoch;  // trailing chunk of one item is skipped
  const Index total_steps = steps_per_epoch * config.epochs;
  const Index pairs_wanted = config.loss.batch_labeled / 2;
  const double sigma = config.view_noise_sigma;

  // Two noisy views of row r: normalize(x_r + sigma * g), fresh g per view.
  const auto make_view = [&](Index r, MatrixD& dst, Index dst_row) {
    if (sigma == 0.0) {
      dst.row(dst_row) = X.row(r);
      return;
    }
    VecD noisy(in_dims);
    for (Index d = 0; d < in_dims; ++d)
      noisy(d) = X(r, d) + sigma * rng.next_gaussian();
    const double norm = row_norm(noisy);
    if (!(norm > 0.0)) throw Error("noisy view collapsed to zero norm");
    dst.row(dst_row) = noisy.transpose() / norm;
  };

  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) order[static_cast<std::size_t>(r)] = r;

  TrainResult result;
  Index step_index = 0;
  std::size_t pair_cursor = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);

    // Same-class pairs so every labeled anchor has a positive; odd leftovers
    // are dropped for the epoch.
    std::vector<std::pair<std::pair<Index, Index>, Index>> pair_pool;  // (rows, label)
    for (std::size_t c = 0; c < class_rows.size(); ++c) {
      std::vector<Index> rows = class_rows[c];
      shuffle(rows, rng);
      for (std::size_t i = 0; i + 1 < rows.size(); i += 2)
        pair_pool.push_back({{rows[i], rows[i + 1]}, static_cast<Index>(c)});
    }
    shuffle(pair_pool, rng);
    if (config.loss.lambda > 0.0 && pair_pool.empty())
      throw Error("no class has two labeled items; cannot form supervised pairs");
    pair_cursor = 0;

    double epoch_sum = 0.0;
    Index epoch_steps = 0;

    for (Index start = 0; start < n; start += chunk) {
      const Index bu = std::min(chunk, n - start);
      if (bu < 2) continue;

      MatrixD ua(bu, in_dims), uv(bu, in_dims);
      for (Index i = 0; i < bu; ++i) {
        const Index r = order[static_cast<std::size_t>(start + i)];
        make_view(r, ua, i);
        make_view(r, uv, i);
      }

      Index bl = 0;
      MatrixD la(0, in_dims), lv(0, in_dims);
      std::vector<Index> labels;
      if (config.loss.lambda > 0.0) {
        const auto take = std::min<std::size_t>(static_cast<std::size_t>(pairs_wanted),
                                                pair_pool.size());
        bl = static_cast<Index>(2 * take);
        la.resize(bl, in_dims);
        lv.resize(bl, in_dims);
        labels.reserve(static_cast<std::size_t>(bl));
        for (std::size_t t = 0; t < take; ++t) {
          const auto& [rows, label] = pair_pool[(pair_cursor + t) % pair_pool.size()];
          const Index base = static_cast<Index>(2 * t);
          make_view(rows.first, la, base);
          make_view(rows.first, lv, base);
          make_view(rows.second, la, base + 1);
          make_view(rows.second, lv, base + 1);
          labels.push_back(label);
          labels.push_back(label);
        }
        pair_cursor = (pair_cursor + take) % pair_pool.size();
      }

      const ForwardCache f_ua = forward(ua, head, result.epoch_loss);
      const ForwardCache f_uv = forward(uv, head, result.epoch_loss);
      const ForwardCache f_la = forward(la, head, result.epoch_loss);
      const ForwardCache f_lv = forward(lv, head, result.epoch_loss);

      Batch unlab{f_ua.z, f_uv.z, {}};
      Batch lab{f_la.z, f_lv.z, labels};
      const TotalLossGrad tl = total_loss(unlab, lab, config.loss);
      if (!std::isfinite(tl.value))
        throw TrainingDiverged("loss became non-finite", result.epoch_loss);

      MatrixD d_weight = MatrixD::Zero(in_dims, out_dims);
      VecD d_bias = VecD::Zero(out_dims);
      backward(f_ua, tl.d_unlab_anchors, d_weight, d_bias);
      backward(f_uv, tl.d_unlab_views, d_weight, d_bias);
      if (bl > 0) {
        backward(f_la, tl.d_lab_anchors, d_weight, d_bias);
        backward(f_lv, tl.d_lab_views, d_weight, d_bias);
      }

      const double lr_t =
          config.lr * 0.5 *
          (1.0 + std::cos(kPi * static_cast<double>(step_index) / static_cast<double>(total_steps)));
      head.weight -= lr_t * d_weight;
      head.bias -= lr_t * d_bias;

      epoch_sum += tl.value;
      ++epoch_steps;
      ++step_index;
    }

    result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
  }

  result.head = std::move(head);
  return result;
}

}  // namespace gcdkit

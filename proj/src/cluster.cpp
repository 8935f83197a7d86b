#include "gcdkit/cluster.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace gcdkit {

namespace {

void check_inputs(const MatrixD& X, const std::vector<Index>& forced, Index n_pinned,
                  Index k_total) {
  const Index n = X.rows();
  if (n < 1) throw Error("clustering needs at least one item");
  if (static_cast<Index>(forced.size()) != n)
    throw Error("forced-assignment vector length must match the item count");
  if (n_pinned < 0) throw Error("pinned cluster count must be >= 0");
  if (k_total < 1) throw Error("k_total must be >= 1");
  if (k_total < n_pinned) {
    std::ostringstream msg;
    msg << "k_total " << k_total << " is smaller than the " << n_pinned
        << " pinned clusters";
    throw Error(msg.str());
  }
  if (k_total > n) {
    std::ostringstream msg;
    msg << "k_total " << k_total << " exceeds the " << n << " items";
    throw Error(msg.str());
  }
  for (Index i = 0; i < n; ++i) {
    if (forced[static_cast<std::size_t>(i)] >= n_pinned) {
      std::ostringstream msg;
      msg << "item " << i << " is pinned to cluster " << forced[static_cast<std::size_t>(i)]
          << " but only " << n_pinned << " clusters are pinned";
      throw Error(msg.str());
    }
  }
}

}  // namespace

double kmeans_objective(const MatrixD& X, const std::vector<Index>& assignment,
                        const MatrixD& centroids) {
  if (static_cast<Index>(assignment.size()) != X.rows())
    throw Error("assignment length must match the item count");
  double total = 0.0;
  for (Index i = 0; i < X.rows(); ++i) {
    const Index c = assignment[static_cast<std::size_t>(i)];
    if (c < 0 || c >= centroids.rows()) throw Error("assignment references a missing cluster");
    total += squared_distance(X.row(i), centroids.row(c));
  }
  return total;
}

MatrixD seed_centroids(const MatrixD& X, const std::vector<Index>& forced,
                       Index n_pinned, Index k_total, RngStream& rng) {
  check_inputs(X, forced, n_pinned, k_total);
  const Index n = X.rows();
  const Index d = X.cols();
  MatrixD centroids = MatrixD::Zero(k_total, d);

  std::vector<Index> counts(static_cast<std::size_t>(n_pinned), 0);
  for (Index i = 0; i < n; ++i) {
    const Index c = forced[static_cast<std::size_t>(i)];
    if (c >= 0) {
      centroids.row(c) += X.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
  }
  for (Index c = 0; c < n_pinned; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) {
      std::ostringstream msg;
      msg << "pinned cluster " << c << " has no items";
      throw Error(msg.str());
    }
    centroids.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }

  std::vector<Index> free_items;
  for (Index i = 0; i < n; ++i)
    if (forced[static_cast<std::size_t>(i)] < 0) free_items.push_back(i);
  if (k_total - n_pinned > static_cast<Index>(free_items.size())) {
    std::ostringstream msg;
    msg << "need " << (k_total - n_pinned) << " seed points but only "
        << free_items.size() << " items are unlabeled";
    throw Error(msg.str());
  }

  // d2[j]: squared distance from free item j to the nearest placed centroid.
  std::vector<double> d2(free_items.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(free_items.size(), false);
  const auto refresh = [&](Index new_centroid) {
    for (std::size_t j = 0; j < free_items.size(); ++j) {
      const double dist = squared_distance(X.row(free_items[j]), centroids.row(new_centroid));
      if (dist < d2[j]) d2[j] = dist;
    }
  };
  for (Index c = 0; c < n_pinned; ++c) refresh(c);

  for (Index c = n_pinned; c < k_total; ++c) {
    std::size_t pick = free_items.size();
    if (c == 0) {
      // No centroid exists yet: classic k-means++ starts uniformly.
      pick = static_cast<std::size_t>(rng.next_index(static_cast<Index>(free_items.size())));
    } else {
      double total = 0.0;
      for (std::size_t j = 0; j < free_items.size(); ++j)
        if (!chosen[j]) total += d2[j];
      if (total > 0.0) {
        const double target = rng.next_uniform() * total;
        double acc = 0.0;
        std::size_t last_positive = free_items.size();
        for (std::size_t j = 0; j < free_items.size(); ++j) {
          if (chosen[j]) continue;
          acc += d2[j];
          if (d2[j] > 0.0) last_positive = j;
          if (acc > target) {
            pick = j;
            break;
          }
        }
        if (pick == free_items.size()) pick = last_positive;  // rounding at u ~ 1
      } else {
        // All remaining mass is zero (duplicated points); take the lowest
        // unchosen free item.
        for (std::size_t j = 0; j < free_items.size(); ++j) {
          if (!chosen[j]) {
            pick = j;
            break;
          }
        }
      }
    }
    chosen[pick] = true;
    centroids.row(c) = X.row(free_items[pick]);
    refresh(c);
  }
  return centroids;
}

ClusteringResult run_sskmeans(const MatrixD& X, const std::vector<Index>& forced,
                              Index n_pinned, const SSKMeansConfig& config,
                              const IterationCallback& on_iteration) {
  check_inputs(X, forced, n_pinned, config.k_total);
  if (config.max_iters < 1) throw Error("max_iters must be >= 1");
  if (!(config.tol > 0.0)) throw Error("tol must be > 0");

  const Index n = X.rows();
  const Index d = X.cols();
  const Index k = config.k_total;

  RngStream rng(config.seed);
  MatrixD centroids = seed_centroids(X, forced, n_pinned, k, rng);

  ClusteringResult result;
  result.assignment.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> assigned_d2(static_cast<std::size_t>(n), 0.0);

  for (int iter = 1; iter <= config.max_iters; ++iter) {
    // Assignment. The running best distance doubles as a pruning bound: the
    // partial sum is monotone, so aborting at >= best never discards a
    // strictly better centroid and keeps the lowest index on exact ties.
    double objective = 0.0;
    for (Index i = 0; i < n; ++i) {
      const Index pin = forced[static_cast<std::size_t>(i)];
      if (pin >= 0) {
        result.assignment[static_cast<std::size_t>(i)] = pin;
        assigned_d2[static_cast<std::size_t>(i)] = squared_distance(X.row(i), centroids.row(pin));
      } else {
        Index best = 0;
        double best_d2 = squared_distance(X.row(i), centroids.row(0));
        for (Index c = 1; c < k; ++c) {
          double acc = 0.0;
          for (Index dim = 0; dim < d; ++dim) {
            const double diff = X(i, dim) - centroids(c, dim);
            acc += diff * diff;
            if (acc >= best_d2) break;
          }
          if (acc < best_d2) {
            best = c;
            best_d2 = acc;
          }
        }
        result.assignment[static_cast<std::size_t>(i)] = best;
        assigned_d2[static_cast<std::size_t>(i)] = best_d2;
      }
      objective += assigned_d2[static_cast<std::size_t>(i)];
    }
    result.objective_trace.push_back(objective);

    // Update: means over assigned items in ascending order.
    MatrixD sums = MatrixD::Zero(k, d);
    std::vector<Index> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      const Index c = result.assignment[static_cast<std::size_t>(i)];
      sums.row(c) += X.row(i);
      ++counts[static_cast<std::size_t>(c)];
    }
    MatrixD updated(k, d);
    std::vector<Index> empties;
    for (Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0)
        updated.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      else
        empties.push_back(c);
    }
    std::vector<bool> reused(static_cast<std::size_t>(n), false);
    for (const Index c : empties) {
      Index pickrow = -1;
      double worst = -1.0;
      for (Index i = 0; i < n; ++i) {
        if (forced[static_cast<std::size_t>(i)] >= 0 || reused[static_cast<std::size_t>(i)])
          continue;
        if (assigned_d2[static_cast<std::size_t>(i)] > worst) {
          worst = assigned_d2[static_cast<std::size_t>(i)];
          pickrow = i;
        }
      }
      if (pickrow < 0) {
        std::ostringstream msg;
        msg << "cluster " << c << " is empty and no free item is left to reseed it";
        throw Error(msg.str());
      }
      reused[static_cast<std::size_t>(pickrow)] = true;
      updated.row(c) = X.row(pickrow);
    }

    double shift = 0.0;
    for (Index c = 0; c < k; ++c) {
      const double moved = row_norm((updated.row(c) - centroids.row(c)).eval());
      if (moved > shift) shift = moved;
    }
    centroids = updated;
    result.iterations_run = iter;
    if (on_iteration) on_iteration(iter, result.assignment, centroids, objective);
    if (shift < config.tol) {
      result.converged = true;
      break;
    }
  }

  result.centroids = std::move(centroids);
  return result;
}

ClusteringResult cluster_dataset(const EmbeddingMatrix& features,
                                 const DatasetSplit& split, const SSKMeansConfig& config,
                                 const IterationCallback& on_iteration) {
  const Index n = features.data.rows();
  std::unordered_map<std::string, Index> row_of;
  row_of.reserve(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) row_of.emplace(features.ids[static_cast<std::size_t>(r)], r);

  std::vector<Index> forced(static_cast<std::size_t>(n), -1);
  for (std::size_t i = 0; i < split.labeled_ids.size(); ++i) {
    const auto it = row_of.find(split.labeled_ids[i]);
    if (it == row_of.end())
      throw Error("labeled id '" + split.labeled_ids[i] + "' not present in the features");
    forced[static_cast<std::size_t>(it->second)] = split.seen_class_index(split.labeled_classes[i]);
  }

  const MatrixD X = features.data.cast<double>();
  ClusteringResult result = run_sskmeans(
      X, forced, static_cast<Index>(split.seen_classes.size()), config, on_iteration);
  result.ids = features.ids;
  return result;
}

void save_assignments(const ClusteringResult& result, const std::string& path) {
  if (result.ids.size() != result.assignment.size())
    throw Error("clustering result has no ids to save assignments under");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << "id,cluster\n";
  for (std::size_t i = 0; i < result.ids.size(); ++i)
    out << result.ids[i] << ',' << result.assignment[i] << '\n';
  if (!out) throw Error("failed while writing: " + path);
}

std::map<std::string, Index> load_assignments(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("empty assignment file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,cluster") throw Error("expected header 'id,cluster' in " + path);
  std::map<std::string, Index> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || comma == 0 || comma + 1 >= line.size()) {
      std::ostringstream msg;
      msg << "malformed assignment row " << row << " in " << path;
      throw Error(msg.str());
    }
    const std::string id = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    std::size_t used = 0;
    long cluster = -1;
    try {
      cluster = std::stol(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || cluster < 0) {
      std::ostringstream msg;
      msg << "bad cluster value '" << value << "' at row " << row << " in " << path;
      throw Error(msg.str());
    }
    if (!out.emplace(id, static_cast<Index>(cluster)).second)
      throw Error("duplicate id '" + id + "' in " + path);
  }
  return out;
}

void save_centroids(const ClusteringResult& result, const std::string& path) {
  EmbeddingMatrix file;
  file.data = result.centroids.cast<float>();
  file.ids.reserve(static_cast<std::size_t>(result.centroids.rows()));
  for (Index c = 0; c < result.centroids.rows(); ++c) {
    std::ostringstream id;
    id << 'c' << c;
    file.ids.push_back(id.str());
  }
  save_matrix(file, path);
}

}  // namespace gcdkit

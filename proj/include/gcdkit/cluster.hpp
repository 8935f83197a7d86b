#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gcdkit/core.hpp"
#include "gcdkit/embedstore.hpp"

namespace gcdkit {

struct SSKMeansConfig {
  Index k_total = 0;       // total clusters, >= number of pinned clusters
  int max_iters = 200;
  double tol = 1e-6;       // stop when the max centroid shift drops below this
  std::uint64_t seed = 0;  // drives k-means++ seeding
};

struct ClusteringResult {
  std::vector<std::string> ids;  // filled by cluster_dataset, empty otherwise
  std::vector<Index> assignment;
  MatrixD centroids;  // k_total x d, post final update
  std::vector<double> objective_trace;  // one entry per iteration, post-assignment
  int iterations_run = 0;
  bool converged = false;
};

// Observer fired once per iteration after the update step, with that
// iteration's assignment, the freshly updated centroids and the
// post-assignment objective.
using IterationCallback = std::function<void(
    int iteration, const std::vector<Index>& assignment, const MatrixD& centroids,
    double objective)>;

// Sum over items (ascending) of the squared distance to the assigned
// centroid; terms follow the squared_distance accumulation contract.
double kmeans_objective(const MatrixD& X, const std::vector<Index>& assignment,
                        const MatrixD& centroids);

// Seed centroids. forced[i] in [0, n_pinned) pins item i to that cluster,
// -1 leaves it free. Clusters 0..n_pinned-1 start at the means of their
// pinned items; the remaining k_total - n_pinned start at free items chosen
// by D^2 weighting against all centroids placed so far (uniform first pick
// when n_pinned == 0; if every remaining distance is zero, the lowest-index
// unchosen free item is taken).
MatrixD seed_centroids(const MatrixD& X, const std::vector<Index>& forced,
                       Index n_pinned, Index k_total, RngStream& rng);

// Lloyd iterations with pinned assignments. Free items go to the nearest
// centroid (ties to the lowest cluster index); pinned items never move.
// Centroid update averages all assigned items, pinned included. A cluster
// left empty is reseeded to the free item farthest from its centroid (ties
// to the lowest row; each item repairs at most one cluster per iteration).
// Stops when the max centroid shift falls below tol or after max_iters.
ClusteringResult run_sskmeans(const MatrixD& X, const std::vector<Index>& forced,
                              Index n_pinned, const SSKMeansConfig& config,
                              const IterationCallback& on_iteration = {});

// Wrapper over named embeddings: seen classes take clusters 0..|seen|-1 in
// sorted-name order and labeled rows are pinned to their class's cluster.
ClusteringResult cluster_dataset(const EmbeddingMatrix& features,
                                 const DatasetSplit& split, const SSKMeansConfig& config,
                                 const IterationCallback& on_iteration = {});

// CSV with header id,cluster.
void save_assignments(const ClusteringResult& result, const std::string& path);
std::map<std::string, Index> load_assignments(const std::string& path);

// Centroids as an EMB1 file with ids c0..c{k-1}.
void save_centroids(const ClusteringResult& result, const std::string& path);

}  // namespace gcdkit

#pragma once

#include <map>
#include <string>
#include <vector>

#include "gcdkit/core.hpp"
#include "gcdkit/embedstore.hpp"

namespace gcdkit {

using MatrixLL = Matrix<long long>;

struct EvalReport {
  std::vector<std::string> class_names;  // sorted; contingency column order
  MatrixLL contingency;                  // clusters x classes, item counts
  std::vector<Index> permutation;        // cluster -> class column, -1 = unmatched
  double acc_all = 0.0, acc_old = 0.0, acc_new = 0.0;  // ratios in [0,1]
  Index n_all = 0, n_old = 0, n_new = 0;
};

// Exact minimum-cost perfect assignment on a square integer matrix,
// returning the lexicographically smallest optimal row -> column mapping.
std::vector<Index> min_cost_assignment(const MatrixLL& cost);

// Clustering accuracy: max over cluster->class matchings of the fraction of
// items whose mapped cluster equals their class. Rectangular contingency
// tables are zero-padded square; the matching is solved on the negated
// table. pred and truth must cover the same non-empty id set. Old/New
// fields are left zero.
EvalReport hungarian_acc(const std::map<std::string, Index>& pred, const LabelMap& truth);

// Full report over the unlabeled split: the matching is fit on all of D_U
// and reused to score the Old (true class seen) and New subsets. With
// refit_subsets, Old and New instead get their own matchings; the stored
// permutation remains the All fit. An empty subset scores 0.
EvalReport subset_report(const std::map<std::string, Index>& pred, const LabelMap& truth,
                         const DatasetSplit& split, bool refit_subsets = false);

// Three-column percentage layout with one decimal:
//   All,Old,New
//   96.6,97.2,96.4
std::string format_report(const EvalReport& report);

// Table `cluster,class` mapping each cluster to its matched class name, or
// "-" when the cluster fell on zero padding.
std::string format_permutation(const EvalReport& report);

// Accuracy block, blank line, permutation table.
void save_report(const EvalReport& report, const std::string& path);

}  // namespace gcdkit

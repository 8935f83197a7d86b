#include "gcdkit/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

namespace gcdkit {

namespace {

struct HungarianResult {
  std::vector<Index> row_to_col;
  std::vector<long long> u, v;  // optimal duals, 1-based
};

// Potential-based O(n^3) assignment in exact integer arithmetic. The final
// duals are feasible (cost - u - v >= 0 everywhere) and tight on the
// returned matching.
HungarianResult hungarian(const MatrixLL& cost) {
  const Index n = cost.rows();
  constexpr long long kInf = std::numeric_limits<long long>::max();
  std::vector<long long> u(static_cast<std::size_t>(n) + 1, 0);
  std::vector<long long> v(static_cast<std::size_t>(n) + 1, 0);
  std::vector<Index> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<Index> way(static_cast<std::size_t>(n) + 1, 0);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::vector<long long> minv(static_cast<std::size_t>(n) + 1, kInf);
    std::vector<bool> used(static_cast<std::size_t>(n) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const Index i0 = p[static_cast<std::size_t>(j0)];
      Index j1 = 0;
      long long delta = kInf;
      for (Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const long long cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                              v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  HungarianResult res;
  res.u = std::move(u);
  res.v = std::move(v);
  res.row_to_col.assign(static_cast<std::size_t>(n), -1);
  for (Index j = 1; j <= n; ++j)
    res.row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)]) - 1] = j - 1;
  return res;
}

// Kuhn augmenting path over the tight-edge graph; commits the rewired
// matching only when an augmenting path exists.
bool augment(Index row, const std::vector<std::vector<Index>>& adj,
             std::vector<bool>& visited, std::vector<Index>& row_match,
             std::vector<Index>& col_match) {
  for (const Index col : adj[static_cast<std::size_t>(row)]) {
    if (visited[static_cast<std::size_t>(col)]) continue;
    visited[static_cast<std::size_t>(col)] = true;
    if (col_match[static_cast<std::size_t>(col)] < 0 ||
        augment(col_match[static_cast<std::size_t>(col)], adj, visited, row_match,
                col_match)) {
      col_match[static_cast<std::size_t>(col)] = row;
      row_match[static_cast<std::size_t>(row)] = col;
      return true;
    }
  }
  return false;
}

}  // namespace

std::vector<Index> min_cost_assignment(const MatrixLL& cost) {
  if (cost.rows() == 0 || cost.rows() != cost.cols())
    throw Error("assignment needs a non-empty square cost matrix");
  const Index n = cost.rows();
  const HungarianResult base = hungarian(cost);

  // By complementary slackness every optimal assignment lives on the edges
  // tight under the optimal duals, so the lexicographically smallest optimum
  // is the lexicographically smallest perfect matching of the tight graph:
  // fix rows in order, testing each candidate column by re-augmenting the
  // row it displaces.
  std::vector<std::vector<Index>> tight(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      if (cost(i, j) - base.u[static_cast<std::size_t>(i) + 1] -
              base.v[static_cast<std::size_t>(j) + 1] ==
          0)
        tight[static_cast<std::size_t>(i)].push_back(j);

  std::vector<Index> row_match = base.row_to_col;
  std::vector<Index> col_match(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) col_match[static_cast<std::size_t>(row_match[static_cast<std::size_t>(i)])] = i;
  std::vector<bool> col_fixed(static_cast<std::size_t>(n), false);

  for (Index i = 0; i < n; ++i) {
    Index chosen = -1;
    for (const Index j : tight[static_cast<std::size_t>(i)]) {
      if (col_fixed[static_cast<std::size_t>(j)]) continue;
      if (row_match[static_cast<std::size_t>(i)] == j) {
        chosen = j;
        break;
      }
      // Tentatively hand column j to row i and re-augment the displaced row.
      const Index displaced = col_match[static_cast<std::size_t>(j)];
      const Index freed = row_match[static_cast<std::size_t>(i)];
      row_match[static_cast<std::size_t>(i)] = j;
      col_match[static_cast<std::size_t>(j)] = i;
      row_match[static_cast<std::size_t>(displaced)] = -1;
      col_match[static_cast<std::size_t>(freed)] = -1;
      std::vector<bool> visited(col_fixed);
      visited[static_cast<std::size_t>(j)] = true;
      if (augment(displaced, tight, visited, row_match, col_match)) {
        chosen = j;
        break;
      }
      row_match[static_cast<std::size_t>(i)] = freed;
      col_match[static_cast<std::size_t>(freed)] = i;
      row_match[static_cast<std::size_t>(displaced)] = j;
      col_match[static_cast<std::size_t>(j)] = displaced;
    }
    if (chosen < 0) throw Error("assignment reconstruction lost feasibility");
    col_fixed[static_cast<std::size_t>(chosen)] = true;
  }
  return row_match;
}

EvalReport hungarian_acc(const std::map<std::string, Index>& pred, const LabelMap& truth) {
  if (pred.empty() || truth.empty()) throw Error("empty evaluation input");
  {
    auto p = pred.begin();
    auto t = truth.begin();
    for (; p != pred.end() && t != truth.end(); ++p, ++t) {
      if (p->first != t->first)
        throw Error("prediction/truth id sets differ at '" +
                    (p->first < t->first ? p->first : t->first) + "'");
    }
    if (p != pred.end()) throw Error("prediction/truth id sets differ at '" + p->first + "'");
    if (t != truth.end()) throw Error("prediction/truth id sets differ at '" + t->first + "'");
  }

  std::set<std::string> names;
  Index k = 0;
  for (const auto& [id, cluster] : pred) {
    if (cluster < 0) throw Error("negative cluster for id '" + id + "'");
    k = std::max(k, cluster + 1);
    names.insert(truth.at(id));
  }
  EvalReport report;
  report.class_names.assign(names.begin(), names.end());
  std::map<std::string, Index> class_index;
  for (std::size_t c = 0; c < report.class_names.size(); ++c)
    class_index.emplace(report.class_names[c], static_cast<Index>(c));
  const Index n_classes = static_cast<Index>(report.class_names.size());

  report.contingency = MatrixLL::Zero(k, n_classes);
  for (const auto& [id, cluster] : pred)
    ++report.contingency(cluster, class_index.at(truth.at(id)));

  const Index side = std::max(k, n_classes);
  MatrixLL cost = MatrixLL::Zero(side, side);
  cost.topLeftCorner(k, n_classes) = -report.contingency;
  const std::vector<Index> square = min_cost_assignment(cost);

  report.permutation.assign(static_cast<std::size_t>(k), -1);
  long long matched = 0;
  for (Index i = 0; i < k; ++i) {
    const Index j = square[static_cast<std::size_t>(i)];
    if (j < n_classes) {
      report.permutation[static_cast<std::size_t>(i)] = j;
      matched += report.contingency(i, j);
    }
  }
  report.n_all = static_cast<Index>(pred.size());
  report.acc_all = static_cast<double>(matched) / static_cast<double>(report.n_all);
  return report;
}

EvalReport subset_report(const std::map<std::string, Index>& pred, const LabelMap& truth,
                         const DatasetSplit& split, bool refit_subsets) {
  std::map<std::string, Index> sub_pred;
  LabelMap sub_truth;
  for (const auto& id : split.unlabeled_ids) {
    const auto p = pred.find(id);
    if (p == pred.end()) throw Error("unlabeled id '" + id + "' missing from predictions");
    const auto t = truth.find(id);
    if (t == truth.end()) throw Error("unlabeled id '" + id + "' missing from truth labels");
    sub_pred.emplace(id, p->second);
    sub_truth.emplace(id, t->second);
  }
  EvalReport report = hungarian_acc(sub_pred, sub_truth);

  std::map<std::string, Index> old_pred, new_pred;
  LabelMap old_truth, new_truth;
  Index old_correct = 0, new_correct = 0;
  std::map<std::string, Index> class_index;
  for (std::size_t c = 0; c < report.class_names.size(); ++c)
    class_index.emplace(report.class_names[c], static_cast<Index>(c));
  for (const auto& [id, cluster] : sub_pred) {
    const std::string& cls = sub_truth.at(id);
    const bool correct =
        report.permutation[static_cast<std::size_t>(cluster)] == class_index.at(cls);
    if (split.is_seen(cls)) {
      old_pred.emplace(id, cluster);
      old_truth.emplace(id, cls);
      old_correct += correct ? 1 : 0;
    } else {
      new_pred.emplace(id, cluster);
      new_truth.emplace(id, cls);
      new_correct += correct ? 1 : 0;
    }
  }
  report.n_old = static_cast<Index>(old_pred.size());
  report.n_new = static_cast<Index>(new_pred.size());
  if (refit_subsets) {
    report.acc_old = report.n_old > 0 ? hungarian_acc(old_pred, old_truth).acc_all : 0.0;
    report.acc_new = report.n_new > 0 ? hungarian_acc(new_pred, new_truth).acc_all : 0.0;
  } else {
    report.acc_old =
        report.n_old > 0 ? static_cast<double>(old_correct) / static_cast<double>(report.n_old) : 0.0;
    report.acc_new =
        report.n_new > 0 ? static_cast<double>(new_correct) / static_cast<double>(report.n_new) : 0.0;
  }
  return report;
}

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  out << "All,Old,New\n";
  out << std::fixed << std::setprecision(1) << report.acc_all * 100.0 << ','
      << report.acc_old * 100.0 << ',' << report.acc_new * 100.0 << '\n';
  return out.str();
}

std::string format_permutation(const EvalReport& report) {
  std::ostringstream out;
  out << "cluster,class\n";
  for (std::size_t i = 0; i < report.permutation.size(); ++i) {
    const Index j = report.permutation[i];
    out << i << ',' << (j >= 0 ? report.class_names[static_cast<std::size_t>(j)] : "-")
        << '\n';
  }
  return out.str();
}

void save_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << format_report(report) << '\n' << format_permutation(report);
  if (!out) throw Error("failed while writing: " + path);
}

}  // namespace gcdkit

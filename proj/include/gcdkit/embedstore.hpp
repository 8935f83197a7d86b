#pragma once

#include <map>
#include <string>
#include <vector>

#include "gcdkit/core.hpp"

namespace gcdkit {

// Dense embedding matrix with one opaque string id per row. Immutable once
// loaded; safe for concurrent reads.
//
// On-disk format ("EMB1"):
//   magic "EMB1"
//   uint32 LE rows, uint32 LE dims
//   rows*dims float32 LE, row-major
//   one id per row, each terminated by '\n'
struct EmbeddingMatrix {
  MatrixF data;                  // rows x dims
  std::vector<std::string> ids;  // position-aligned with rows, unique

  Index rows() const { return data.rows(); }
  Index dims() const { return data.cols(); }
};

using LabelMap = std::map<std::string, std::string>;  // id -> class name

// Partition of a dataset into a labeled part (seen classes only) and an
// unlabeled part. True classes of unlabeled items are retained for
// evaluation only. seen_classes and all_classes are sorted; the position of
// a seen class in seen_classes is its designated cluster index.
struct DatasetSplit {
  std::vector<std::string> labeled_ids;
  std::vector<std::string> labeled_classes;  // aligned with labeled_ids
  std::vector<std::string> unlabeled_ids;
  std::vector<std::string> unlabeled_classes;  // aligned; evaluation only
  std::vector<std::string> seen_classes;
  std::vector<std::string> all_classes;

  Index num_seen_classes() const { return static_cast<Index>(seen_classes.size()); }
  Index num_total_classes() const { return static_cast<Index>(all_classes.size()); }
  bool is_seen(const std::string& cls) const;
  // Designated cluster of a seen class, or -1.
  Index seen_class_index(const std::string& cls) const;
};

EmbeddingMatrix load_matrix(const std::string& path);
void save_matrix(const EmbeddingMatrix& m, const std::string& path);

// Returns a copy with every row scaled to unit Euclidean norm. Norms are
// accumulated in double; a zero-norm row is an error naming the row id.
EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m);

// Splits items by class. The lexicographically first ceil(seen_fraction * C)
// classes are seen; labeled_fraction of each seen class's items (at least
// one, chosen by seeded shuffle) become labeled. Everything else is
// unlabeled. Fractions must lie in (0,1]; every seen class needs >= 2 items;
// the unlabeled part must end up non-empty.
DatasetSplit make_split(const LabelMap& labels, double seen_fraction,
                        double labeled_fraction, std::uint64_t seed);

// CSV `id,class_name` with header row.
LabelMap load_labels(const std::string& path);
void save_labels(const LabelMap& labels, const std::string& path);

// CSV `id,class_name,is_labeled` with header row, is_labeled in {0,1}.
DatasetSplit load_split(const std::string& path);
void save_split(const DatasetSplit& split, const std::string& path);

}  // namespace gcdkit

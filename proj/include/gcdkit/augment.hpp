#pragma once

#include <string>
#include <vector>

#include "gcdkit/core.hpp"
#include "gcdkit/embedstore.hpp"
#include "gcdkit/retrieval.hpp"

namespace gcdkit {

// Image view concatenated with the mean-pooled retrieved-text view. The
// first dims_image entries are the image view, the rest the text view.
struct FusedView {
  VecD vector;
  std::string image_id;
  std::vector<Index> corpus_rows;  // retrieval provenance, rank order
};

struct AugmentResult {
  EmbeddingMatrix fused;                       // rows aligned with the input images
  std::vector<std::vector<Index>> corpus_rows;  // per image, rank order
};

// Componentwise arithmetic mean, accumulated in double over input order.
// Inputs must be non-empty and share one dimensionality.
VecD mean_pool(const std::vector<VecD>& vectors);

// Concatenates the image view with the pooled text view. With `normalize`
// (the default everywhere) each view is scaled to unit norm first; a
// zero-norm view is then an error. An empty `text_vecs` disables the text
// view and yields the image view alone.
FusedView fuse(const Eigen::Ref<const VecD>& image_vec, const std::vector<VecD>& text_vecs,
               bool normalize = true);

// Fuses every image row with the pooled embeddings of its own top-k hits.
// k = 0 disables the text view. Output row i corresponds to image row i.
AugmentResult augment_dataset(const EmbeddingMatrix& images, const CorpusIndex& index, Index k,
                              bool normalize = true);

// As above, but retrieval runs on `queries` (the corpus embedding space)
// while the fused image view comes from `image_views` (e.g. head-refined
// features). Ids must agree row for row.
AugmentResult augment_dataset(const EmbeddingMatrix& queries,
                              const EmbeddingMatrix& image_views, const CorpusIndex& index,
                              Index k, bool normalize = true);

// CSV `image_id,rank,corpus_row` with header row.
void save_provenance(const AugmentResult& result, const std::string& path);

}  // namespace gcdkit

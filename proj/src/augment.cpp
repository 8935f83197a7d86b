#include "gcdkit/augment.hpp"

#include <fstream>

namespace gcdkit {

namespace {

VecD normalized_or_throw(const VecD& v, const char* what) {
  const double norm = row_norm(v);
  if (norm == 0.0) {
    throw Error(std::string("zero-norm ") + what + " under normalization");
  }
  return v / norm;
}

}  // namespace

VecD mean_pool(const std::vector<VecD>& vectors) {
  if (vectors.empty()) {
    throw Error("mean_pool of empty input");
  }
  const Index dims = vectors.front().size();
  VecD acc = VecD::Zero(dims);
  for (const auto& v : vectors) {
    if (v.size() != dims) {
      throw Error("mean_pool over ragged dims: " + std::to_string(v.size()) + " vs " +
                  std::to_string(dims));
    }
    acc += v;
  }
  return acc / static_cast<double>(vectors.size());
}

FusedView fuse(const Eigen::Ref<const VecD>& image_vec, const std::vector<VecD>& text_vecs,
               bool normalize) {
  FusedView out;
  VecD image = image_vec;
  if (normalize) {
    image = normalized_or_throw(image, "image view");
  }
  if (text_vecs.empty()) {
    out.vector = std::move(image);
    return out;
  }
  VecD text = mean_pool(text_vecs);
  if (normalize) {
    text = normalized_or_throw(text, "text view");
  }
  out.vector.resize(image.size() + text.size());
  out.vector.head(image.size()) = image;
  out.vector.tail(text.size()) = text;
  return out;
}

AugmentResult augment_dataset(const EmbeddingMatrix& images, const CorpusIndex& index, Index k,
                              bool normalize) {
  return augment_dataset(images, images, index, k, normalize);
}

AugmentResult augment_dataset(const EmbeddingMatrix& queries,
                              const EmbeddingMatrix& image_views, const CorpusIndex& index,
                              Index k, bool normalize) {
  if (k < 0) {
    throw Error("k must be non-negative");
  }
  if (queries.rows() != image_views.rows() || queries.ids != image_views.ids) {
    throw Error("query and image-view embeddings must cover the same ids in order");
  }
  const bool use_text = k > 0;
  const Index out_dims = image_views.dims() + (use_text ? index.dims() : Index{0});

  AugmentResult result;
  result.fused.ids = image_views.ids;
  result.fused.data.resize(image_views.rows(), out_dims);
  result.corpus_rows.resize(static_cast<std::size_t>(image_views.rows()));

  std::vector<std::vector<RetrievalHit>> hits;
  if (use_text) {
    hits = batch_query(index, queries, k);
  }
  for (Index r = 0; r < image_views.rows(); ++r) {
    std::vector<VecD> text_vecs;
    auto& rows = result.corpus_rows[static_cast<std::size_t>(r)];
    if (use_text) {
      const auto& row_hits = hits[static_cast<std::size_t>(r)];
      text_vecs.reserve(row_hits.size());
      for (const auto& hit : row_hits) {
        text_vecs.push_back(index.embeddings.row(hit.corpus_row).cast<double>().transpose());
        rows.push_back(hit.corpus_row);
      }
    }
    const VecD image = image_views.data.row(r).cast<double>().transpose();
    FusedView view = fuse(image, text_vecs, normalize);
    result.fused.data.row(r) = view.vector.cast<float>().transpose();
  }
  return result;
}

void save_provenance(const AugmentResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot open for write: " + path);
  }
  out << "image_id,rank,corpus_row\n";
  for (std::size_t i = 0; i < result.corpus_rows.size(); ++i) {
    const auto& rows = result.corpus_rows[i];
    for (std::size_t rank = 0; rank < rows.size(); ++rank) {
      out << result.fused.ids[i] << ',' << rank << ',' << rows[rank] << '\n';
    }
  }
  if (!out) {
    throw Error("write failed: " + path);
  }
}

}  // namespace gcdkit

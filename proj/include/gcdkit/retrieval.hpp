#pragma once

#include <string>
#include <vector>

#include "gcdkit/core.hpp"
#include "gcdkit/embedstore.hpp"

namespace gcdkit {

// Exact cosine index over a caption corpus. Rows are stored L2-normalized;
// the index is immutable after build and safe to query concurrently.
// Duplicate captions are kept as distinct rows.
struct CorpusIndex {
  std::vector<std::string> texts;  // one caption per row
  MatrixF embeddings;              // unit-norm rows, aligned with texts

  Index size() const { return embeddings.rows(); }
  Index dims() const { return embeddings.cols(); }
};

struct RetrievalHit {
  Index corpus_row = -1;
  double score = 0.0;  // cosine similarity in [-1, 1]
  std::string text;
};

// texts.size() must equal embeddings.rows(). Rows are normalized here; a
// zero-norm caption embedding is an error.
CorpusIndex build_index(std::vector<std::string> texts, const EmbeddingMatrix& embeddings);

// Same, with empty caption texts. Used when only the vectors are on hand.
CorpusIndex build_index(const EmbeddingMatrix& embeddings);

// Top-k rows by cosine similarity against the (normalized) query, scores
// descending, ties broken by ascending corpus row. Requires 1 <= k <= size.
std::vector<RetrievalHit> query_topk(const CorpusIndex& index,
                                     const Eigen::Ref<const VecD>& query, Index k);

// query_topk for every row of `queries`, results aligned with query rows.
std::vector<std::vector<RetrievalHit>> batch_query(const CorpusIndex& index,
                                                   const EmbeddingMatrix& queries, Index k);

// The on-disk index is the normalized corpus stored as an EMB1 file with
// decimal row numbers as ids.
void save_index(const CorpusIndex& index, const std::string& path);
CorpusIndex load_index(const std::string& path);

// One caption per line; line number = corpus row.
std::vector<std::string> load_corpus_texts(const std::string& path);

}  // namespace gcdkit

#include "gcdkit/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace gcdkit {

namespace {

// Cosine of the normalized query against one stored row. Float data, double
// accumulation in four lanes combined as ((s0+s1)+(s2+s3)); fixed order, so
// batch and single-query paths produce identical bits.
double row_score(const float* row, const double* q, Index dims) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  Index d = 0;
  for (; d + 4 <= dims; d += 4) {
    s0 += static_cast<double>(row[d]) * q[d];
    s1 += static_cast<double>(row[d + 1]) * q[d + 1];
    s2 += static_cast<double>(row[d + 2]) * q[d + 2];
    s3 += static_cast<double>(row[d + 3]) * q[d + 3];
  }
  for (; d < dims; ++d) {
    s0 += static_cast<double>(row[d]) * q[d];
  }
  return (s0 + s1) + (s2 + s3);
}

std::vector<RetrievalHit> topk_for(const CorpusIndex& index, const Eigen::Ref<const VecD>& query,
                                   Index k, std::vector<double>& scores) {
  if (query.size() != index.dims()) {
    throw Error("query dims " + std::to_string(query.size()) + " do not match index dims " +
                std::to_string(index.dims()));
  }
  if (k < 1 || k > index.size()) {
    throw Error("k must lie in [1, " + std::to_string(index.size()) + "], got " +
                std::to_string(k));
  }
  const double norm = row_norm(query);
  if (norm == 0.0) {
    throw Error("zero-norm query");
  }
  const VecD qn = query / norm;

  const Index n = index.size();
  scores.resize(static_cast<std::size_t>(n));
  for (Index r = 0; r < n; ++r) {
    scores[static_cast<std::size_t>(r)] =
        row_score(index.embeddings.row(r).data(), qn.data(), index.dims());
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](Index a, Index b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    if (sa != sb) {
      return sa > sb;
    }
    return a < b;
  });

  std::vector<RetrievalHit> hits;
  hits.reserve(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const Index row = order[static_cast<std::size_t>(i)];
    hits.push_back(RetrievalHit{row, scores[static_cast<std::size_t>(row)],
                                index.texts[static_cast<std::size_t>(row)]});
  }
  return hits;
}

}  // namespace

CorpusIndex build_index(std::vector<std::string> texts, const EmbeddingMatrix& embeddings) {
  if (static_cast<Index>(texts.size()) != embeddings.rows()) {
    throw Error("caption count " + std::to_string(texts.size()) + " does not match " +
                std::to_string(embeddings.rows()) + " embedding rows");
  }
  CorpusIndex index;
  index.texts = std::move(texts);
  index.embeddings.resize(embeddings.rows(), embeddings.dims());
  for (Index r = 0; r < embeddings.rows(); ++r) {
    const double norm = row_norm(embeddings.data.row(r));
    if (norm == 0.0) {
      throw Error("zero-norm caption embedding at corpus row " + std::to_string(r));
    }
    for (Index d = 0; d < embeddings.dims(); ++d) {
      index.embeddings(r, d) =
          static_cast<float>(static_cast<double>(embeddings.data(r, d)) / norm);
    }
  }
  return index;
}

CorpusIndex build_index(const EmbeddingMatrix& embeddings) {
  return build_index(std::vector<std::string>(static_cast<std::size_t>(embeddings.rows())),
                     embeddings);
}

std::vector<RetrievalHit> query_topk(const CorpusIndex& index,
                                     const Eigen::Ref<const VecD>& query, Index k) {
  std::vector<double> scratch;
  return topk_for(index, query, k, scratch);
}

std::vector<std::vector<RetrievalHit>> batch_query(const CorpusIndex& index,
                                                   const EmbeddingMatrix& queries, Index k) {
  std::vector<std::vector<RetrievalHit>> results;
  results.reserve(static_cast<std::size_t>(queries.rows()));
  std::vector<double> scratch;
  for (Index r = 0; r < queries.rows(); ++r) {
    const VecD q = queries.data.row(r).cast<double>().transpose();
    results.push_back(topk_for(index, q, k, scratch));
  }
  return results;
}

void save_index(const CorpusIndex& index, const std::string& path) {
  EmbeddingMatrix m;
  m.data = index.embeddings;
  m.ids.reserve(static_cast<std::size_t>(index.size()));
  for (Index r = 0; r < index.size(); ++r) {
    m.ids.push_back(std::to_string(r));
  }
  save_matrix(m, path);
}

CorpusIndex load_index(const std::string& path) {
  EmbeddingMatrix m = load_matrix(path);
  // Rows were normalized at build time; verify and keep them bit-identical so
  // a reloaded index answers exactly like the one it was saved from.
  for (Index r = 0; r < m.rows(); ++r) {
    const double norm = row_norm(m.data.row(r));
    if (std::abs(norm - 1.0) > 1e-6) {
      throw Error("index row " + std::to_string(r) + " is not unit-norm in " + path);
    }
  }
  CorpusIndex index;
  index.texts.assign(static_cast<std::size_t>(m.rows()), std::string());
  index.embeddings = std::move(m.data);
  return index;
}

std::vector<std::string> load_corpus_texts(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open file: " + path);
  }
  std::vector<std::string> texts;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    texts.push_back(line);
  }
  if (texts.empty()) {
    throw Error("empty corpus text file: " + path);
  }
  return texts;
}

}  // namespace gcdkit

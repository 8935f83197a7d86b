#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "gcdkit/retrieval.hpp"
#include "test_util.hpp"

using namespace gcdkit;
using testutil::TempDir;
using testutil::make_matrix;
using testutil::random_matrix;

namespace {

std::vector<std::string> row_texts(Index n) {
  std::vector<std::string> texts;
  for (Index i = 0; i < n; ++i) texts.push_back("caption " + std::to_string(i));
  return texts;
}

VecD nth_row(const EmbeddingMatrix& m, Index r) {
  return m.data.row(r).cast<double>().transpose();
}

}  // namespace

TEST_CASE("build_index normalizes rows and keeps texts aligned") {
  const EmbeddingMatrix corpus = make_matrix({{3, 4}, {0, 2}, {5, 0}}, {"0", "1", "2"});
  const CorpusIndex index = build_index(row_texts(3), corpus);
  REQUIRE(index.size() == 3);
  CHECK(index.dims() == 2);
  CHECK(index.texts[2] == "caption 2");
  for (Index r = 0; r < 3; ++r) {
    const double norm = std::sqrt(static_cast<double>(index.embeddings(r, 0)) *
                                      index.embeddings(r, 0) +
                                  static_cast<double>(index.embeddings(r, 1)) *
                                      index.embeddings(r, 1));
    CHECK(std::abs(norm - 1.0) < 1e-6);
  }
}

TEST_CASE("build_index rejects bad inputs") {
  const EmbeddingMatrix corpus = make_matrix({{1, 0}, {0, 1}}, {"0", "1"});
  CHECK_THROWS_AS(build_index(row_texts(3), corpus), Error);  // count mismatch
  CHECK_THROWS_AS(build_index(row_texts(1), make_matrix({{0, 0}}, {"0"})), Error);  // zero norm
}

TEST_CASE("self-retrieval returns the row itself with score 1") {
  const EmbeddingMatrix corpus = random_matrix(50, 8, 5);
  const CorpusIndex index = build_index(corpus);
  for (Index r = 0; r < 50; r += 7) {
    const auto hits = query_topk(index, nth_row(corpus, r), 1);
    REQUIRE(hits.size() == 1);
    CHECK(hits[0].corpus_row == r);
    CHECK(std::abs(hits[0].score - 1.0) < 1e-6);
  }
}

TEST_CASE("scores are invariant to positive scaling of the query") {
  const EmbeddingMatrix corpus = random_matrix(30, 6, 6);
  const CorpusIndex index = build_index(corpus);
  const VecD q = nth_row(corpus, 3) + VecD::Constant(6, 0.1);
  const auto base = query_topk(index, q, 5);
  const auto scaled = query_topk(index, (q * 3.7).eval(), 5);
  REQUIRE(base.size() == scaled.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(base[i].corpus_row == scaled[i].corpus_row);
    CHECK(std::abs(base[i].score - scaled[i].score) < 1e-12);
  }
}

TEST_CASE("matches a brute-force oracle over 1000 rows") {
  const EmbeddingMatrix corpus = random_matrix(1000, 32, 7);
  const CorpusIndex index = build_index(corpus);
  std::mt19937_64 gen(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int q = 0; q < 25; ++q) {
    VecD query(32);
    for (Index c = 0; c < 32; ++c) query(c) = normal(gen);
    const VecD unit = query / query.norm();
    std::vector<std::pair<double, Index>> scored;
    for (Index r = 0; r < 1000; ++r) {
      double dot = 0.0;
      for (Index c = 0; c < 32; ++c)
        dot += static_cast<double>(index.embeddings(r, c)) * unit(c);
      scored.push_back({dot, r});
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    const auto hits = query_topk(index, query, 4);
    for (Index i = 0; i < 4; ++i) {
      CHECK(hits[static_cast<std::size_t>(i)].corpus_row ==
            scored[static_cast<std::size_t>(i)].second);
      CHECK(std::abs(hits[static_cast<std::size_t>(i)].score -
                     scored[static_cast<std::size_t>(i)].first) < 1e-6);
    }
  }
}

TEST_CASE("ties break by ascending corpus row") {
  // Rows 0, 2 and 4 are identical, so their scores tie exactly.
  const EmbeddingMatrix corpus = make_matrix(
      {{1, 0}, {0, 1}, {1, 0}, {-1, 0}, {1, 0}}, {"0", "1", "2", "3", "4"});
  const CorpusIndex index = build_index(corpus);
  VecD q(2);
  q << 1, 0;
  const auto hits = query_topk(index, q, 3);
  CHECK(hits[0].corpus_row == 0);
  CHECK(hits[1].corpus_row == 2);
  CHECK(hits[2].corpus_row == 4);
}

TEST_CASE("query validation") {
  const CorpusIndex index = build_index(random_matrix(10, 4, 9));
  VecD q = VecD::Ones(4);
  CHECK_THROWS_AS(query_topk(index, q, 0), Error);
  CHECK_THROWS_AS(query_topk(index, q, 11), Error);
  CHECK_THROWS_AS(query_topk(index, VecD::Ones(5), 2), Error);
  CHECK_THROWS_AS(query_topk(index, VecD::Zero(4), 2), Error);
}

TEST_CASE("batch queries equal the single-query path bitwise") {
  const CorpusIndex index = build_index(random_matrix(200, 16, 10));
  const EmbeddingMatrix queries = random_matrix(17, 16, 11, "q");
  const auto batched = batch_query(index, queries, 5);
  REQUIRE(batched.size() == 17);
  for (Index r = 0; r < 17; ++r) {
    const auto single = query_topk(index, nth_row(queries, r), 5);
    REQUIRE(single.size() == batched[static_cast<std::size_t>(r)].size());
    for (std::size_t i = 0; i < single.size(); ++i) {
      CHECK(single[i].corpus_row == batched[static_cast<std::size_t>(r)][i].corpus_row);
      CHECK(single[i].score == batched[static_cast<std::size_t>(r)][i].score);  // bitwise
    }
  }
}

TEST_CASE("rebuilding the index yields identical answers") {
  const EmbeddingMatrix corpus = random_matrix(300, 12, 12);
  const CorpusIndex a = build_index(row_texts(300), corpus);
  const CorpusIndex b = build_index(row_texts(300), corpus);
  CHECK(std::memcmp(a.embeddings.data(), b.embeddings.data(),
                    sizeof(float) * 300 * 12) == 0);
  const EmbeddingMatrix queries = random_matrix(5, 12, 13, "q");
  const auto ha = batch_query(a, queries, 7);
  const auto hb = batch_query(b, queries, 7);
  for (std::size_t r = 0; r < ha.size(); ++r)
    for (std::size_t i = 0; i < ha[r].size(); ++i) {
      CHECK(ha[r][i].corpus_row == hb[r][i].corpus_row);
      CHECK(ha[r][i].score == hb[r][i].score);
    }
}

TEST_CASE("index save/load round trip preserves answers bitwise") {
  TempDir dir;
  const CorpusIndex index = build_index(row_texts(40), random_matrix(40, 8, 14));
  save_index(index, dir.file("index.emb"));
  const CorpusIndex back = load_index(dir.file("index.emb"));
  REQUIRE(back.size() == 40);
  CHECK(std::memcmp(back.embeddings.data(), index.embeddings.data(),
                    sizeof(float) * 40 * 8) == 0);
  const EmbeddingMatrix queries = random_matrix(6, 8, 15, "q");
  const auto ha = batch_query(index, queries, 3);
  const auto hb = batch_query(back, queries, 3);
  for (std::size_t r = 0; r < ha.size(); ++r)
    for (std::size_t i = 0; i < ha[r].size(); ++i) {
      CHECK(ha[r][i].corpus_row == hb[r][i].corpus_row);
      CHECK(ha[r][i].score == hb[r][i].score);
    }

  SUBCASE("loaded texts are empty placeholders") {
    CHECK(back.texts.size() == 40);
    CHECK(back.texts[0].empty());
  }
  SUBCASE("a non-normalized file is rejected") {
    save_matrix(make_matrix({{3, 4}}, {"0"}), dir.file("raw.emb"));
    CHECK_THROWS_AS(load_index(dir.file("raw.emb")), Error);
  }
}

TEST_CASE("load_corpus_texts reads one caption per line") {
  TempDir dir;
  {
    std::ofstream out(dir.file("corpus.txt"));
    out << "first caption\nsecond caption\nthird\n";
  }
  const auto texts = load_corpus_texts(dir.file("corpus.txt"));
  REQUIRE(texts.size() == 3);
  CHECK(texts[0] == "first caption");
  CHECK(texts[2] == "third");
  CHECK_THROWS_AS(load_corpus_texts(dir.file("missing.txt")), Error);
}

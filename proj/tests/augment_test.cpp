#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "gcdkit/augment.hpp"
#include "test_util.hpp"

using namespace gcdkit;
using testutil::TempDir;
using testutil::make_matrix;
using testutil::random_matrix;

TEST_CASE("mean_pool") {
  SUBCASE("identical vectors pool to themselves") {
    VecD v(3);
    v << 1, 2, 3;
    const VecD pooled = mean_pool({v, v, v});
    CHECK((pooled - v).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("two basis vectors average componentwise") {
    VecD a(2), b(2);
    a << 1, 0;
    b << 0, 1;
    const VecD pooled = mean_pool({a, b});
    CHECK(pooled(0) == doctest::Approx(0.5));
    CHECK(pooled(1) == doctest::Approx(0.5));
  }
  SUBCASE("matches a serial oracle on 7 random vectors") {
    std::mt19937_64 gen(3);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<VecD> vecs;
    for (int i = 0; i < 7; ++i) {
      VecD v(16);
      for (Index c = 0; c < 16; ++c) v(c) = normal(gen);
      vecs.push_back(v);
    }
    const VecD pooled = mean_pool(vecs);
    for (Index c = 0; c < 16; ++c) {
      double acc = 0.0;
      for (const auto& v : vecs) acc += v(c);
      CHECK(std::abs(pooled(c) - acc / 7.0) < 1e-7);
    }
  }
  SUBCASE("pooling is order independent") {
    std::vector<VecD> vecs;
    for (int i = 0; i < 5; ++i) {
      VecD v(4);
      v << 0.1 * i, 1.0 - 0.2 * i, i * i, -1.5 * i;
      vecs.push_back(v);
    }
    const VecD forward = mean_pool(vecs);
    std::reverse(vecs.begin(), vecs.end());
    const VecD backward = mean_pool(vecs);
    CHECK((forward - backward).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(mean_pool({}), Error);
    VecD a(2), b(3);
    a.setOnes();
    b.setOnes();
    CHECK_THROWS_AS(mean_pool({a, b}), Error);
  }
}

TEST_CASE("fuse") {
  VecD image(2);
  image << 1, 0;

  SUBCASE("unit image with one unit-direction caption") {
    VecD text(2);
    text << 0, 2;  // normalizes to (0, 1)
    const FusedView view = fuse(image, {text});
    REQUIRE(view.vector.size() == 4);
    CHECK(view.vector(0) == doctest::Approx(1.0));
    CHECK(view.vector(1) == doctest::Approx(0.0));
    CHECK(view.vector(2) == doctest::Approx(0.0));
    CHECK(view.vector(3) == doctest::Approx(1.0));
  }
  SUBCASE("text view disabled yields the image view alone") {
    VecD long_image(3);
    long_image << 3, 0, 4;
    const FusedView view = fuse(long_image, {});
    REQUIRE(view.vector.size() == 3);
    CHECK(view.vector(0) == doctest::Approx(0.6));
    CHECK(view.vector(2) == doctest::Approx(0.8));
  }
  SUBCASE("first segment does not depend on the captions") {
    VecD t1(2), t2(2);
    t1 << 0, 1;
    t2 << 1, 1;
    const FusedView a = fuse(image, {t1});
    const FusedView b = fuse(image, {t2});
    CHECK(a.vector(0) == b.vector(0));
    CHECK(a.vector(1) == b.vector(1));
  }
  SUBCASE("normalize=false keeps raw segments") {
    VecD text(2);
    text << 0, 2;
    const FusedView view = fuse((image * 3.0).eval(), {text}, false);
    CHECK(view.vector(0) == doctest::Approx(3.0));
    CHECK(view.vector(3) == doctest::Approx(2.0));
  }
  SUBCASE("zero-norm views are errors when normalizing") {
    VecD zero = VecD::Zero(2);
    VecD text(2);
    text << 0, 1;
    CHECK_THROWS_AS(fuse(zero, {text}), Error);
    CHECK_THROWS_AS(fuse(image, {zero}), Error);
  }
}

TEST_CASE("augment_dataset composes retrieval, pooling and fusion") {
  const EmbeddingMatrix images = random_matrix(20, 8, 21, "img_");
  const EmbeddingMatrix corpus = random_matrix(30, 8, 22, "cap_");
  const CorpusIndex index = build_index(corpus);
  const Index k = 3;
  const AugmentResult result = augment_dataset(images, index, k);

  SUBCASE("shape and alignment contract") {
    CHECK(result.fused.rows() == 20);
    CHECK(result.fused.dims() == 16);
    CHECK(result.fused.ids == images.ids);
    REQUIRE(result.corpus_rows.size() == 20);
    for (const auto& rows : result.corpus_rows) CHECK(rows.size() == 3);
  }
  SUBCASE("rows match a manual query/pool/fuse composition") {
    for (Index r = 0; r < 20; ++r) {
      const VecD q = images.data.row(r).cast<double>().transpose();
      const auto hits = query_topk(index, q, k);
      std::vector<VecD> texts;
      for (const auto& hit : hits)
        texts.push_back(index.embeddings.row(hit.corpus_row).cast<double>().transpose());
      const FusedView manual = fuse(q, texts);
      for (Index c = 0; c < 16; ++c)
        CHECK(result.fused.data(r, c) == static_cast<float>(manual.vector(c)));
      for (std::size_t i = 0; i < hits.size(); ++i)
        CHECK(result.corpus_rows[static_cast<std::size_t>(r)][i] == hits[i].corpus_row);
    }
  }
  SUBCASE("k = 0 disables the text view") {
    const AugmentResult image_only = augment_dataset(images, index, 0);
    CHECK(image_only.fused.dims() == 8);
    CHECK(image_only.corpus_rows[0].empty());
  }
  SUBCASE("deterministic") {
    const AugmentResult again = augment_dataset(images, index, k);
    CHECK((again.fused.data.array() == result.fused.data.array()).all());
  }
}

TEST_CASE("self-retrieval text segment equals the row's normalized embedding") {
  const EmbeddingMatrix images = random_matrix(10, 6, 23, "img_");
  const CorpusIndex index = build_index(images);  // corpus = the images themselves
  const AugmentResult result = augment_dataset(images, index, 1);
  for (Index r = 0; r < 10; ++r) {
    CHECK(result.corpus_rows[static_cast<std::size_t>(r)][0] == r);
    for (Index c = 0; c < 6; ++c)
      CHECK(std::abs(result.fused.data(r, 6 + c) - index.embeddings(r, c)) < 1e-6f);
  }
}

TEST_CASE("split query/view augment keeps retrieval in the query space") {
  const EmbeddingMatrix queries = random_matrix(12, 8, 24, "img_");
  EmbeddingMatrix views = random_matrix(12, 5, 25, "img_");
  views.ids = queries.ids;
  const CorpusIndex index = build_index(random_matrix(40, 8, 26, "cap_"));

  const AugmentResult split = augment_dataset(queries, views, index, 2);
  const AugmentResult plain = augment_dataset(queries, index, 2);
  CHECK(split.fused.dims() == 5 + 8);
  // Same retrieval rows as the plain path...
  for (std::size_t r = 0; r < 12; ++r) CHECK(split.corpus_rows[r] == plain.corpus_rows[r]);
  // ...but the image segment comes from the views matrix.
  const EmbeddingMatrix normalized_views = l2_normalize(views);
  for (Index r = 0; r < 12; ++r)
    for (Index c = 0; c < 5; ++c)
      CHECK(std::abs(split.fused.data(r, c) - normalized_views.data(r, c)) < 1e-6f);

  SUBCASE("mismatched ids are rejected") {
    EmbeddingMatrix renamed = views;
    renamed.ids[3] = "other";
    CHECK_THROWS_AS(augment_dataset(queries, renamed, index, 2), Error);
  }
}

TEST_CASE("provenance CSV") {
  TempDir dir;
  const EmbeddingMatrix images = random_matrix(3, 4, 27, "img_");
  const CorpusIndex index = build_index(random_matrix(9, 4, 28, "cap_"));
  const AugmentResult result = augment_dataset(images, index, 2);
  save_provenance(result, dir.file("prov.csv"));

  std::ifstream in(dir.file("prov.csv"));
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "image_id,rank,corpus_row");
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 6);  // 3 images x k=2
}

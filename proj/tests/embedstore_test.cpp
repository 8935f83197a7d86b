#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "gcdkit/embedstore.hpp"
#include "test_util.hpp"

using namespace gcdkit;
using testutil::TempDir;
using testutil::make_matrix;
using testutil::random_matrix;

namespace {

template <typename Fn>
std::string error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

// Independent writer for the binary layout, built from raw bytes only.
void write_emb_bytes(const std::string& path, std::uint32_t rows, std::uint32_t dims,
                     const std::vector<float>& values, const std::vector<std::string>& ids) {
  std::ofstream out(path, std::ios::binary);
  out.write("EMB1", 4);
  char buf[4];
  std::memcpy(buf, &rows, 4);
  out.write(buf, 4);
  std::memcpy(buf, &dims, 4);
  out.write(buf, 4);
  for (const float v : values) {
    std::memcpy(buf, &v, 4);
    out.write(buf, 4);
  }
  for (const auto& id : ids) out << id << '\n';
}

}  // namespace

TEST_CASE("save/load round trip is bit exact") {
  TempDir dir;
  const EmbeddingMatrix m = random_matrix(13, 7, 42);
  save_matrix(m, dir.file("m.emb"));
  const EmbeddingMatrix back = load_matrix(dir.file("m.emb"));
  REQUIRE(back.rows() == 13);
  REQUIRE(back.dims() == 7);
  CHECK(back.ids == m.ids);
  CHECK(std::memcmp(back.data.data(), m.data.data(), sizeof(float) * 13 * 7) == 0);
}

TEST_CASE("golden single-row file matches an independent byte writer") {
  TempDir dir;
  write_emb_bytes(dir.file("golden.emb"), 1, 4, {1.0f, 2.0f, 3.0f, 4.0f}, {"v0"});
  const EmbeddingMatrix m = load_matrix(dir.file("golden.emb"));
  REQUIRE(m.rows() == 1);
  REQUIRE(m.dims() == 4);
  CHECK(m.ids == std::vector<std::string>{"v0"});
  CHECK(m.data(0, 0) == 1.0f);
  CHECK(m.data(0, 1) == 2.0f);
  CHECK(m.data(0, 2) == 3.0f);
  CHECK(m.data(0, 3) == 4.0f);

  // And save produces exactly those bytes.
  save_matrix(m, dir.file("resaved.emb"));
  CHECK(testutil::read_file(dir.file("resaved.emb")) ==
        testutil::read_file(dir.file("golden.emb")));
}

TEST_CASE("corrupt files are rejected") {
  TempDir dir;

  SUBCASE("truncated payload") {
    // Header claims 2x3 but only 5 floats follow.
    write_emb_bytes(dir.file("trunc.emb"), 2, 3, {1, 2, 3, 4, 5}, {"a", "b"});
    CHECK_THROWS_AS(load_matrix(dir.file("trunc.emb")), Error);
  }
  SUBCASE("bad magic") {
    std::ofstream out(dir.file("bad.emb"), std::ios::binary);
    out.write("EMBX", 4);
    out.close();
    CHECK_THROWS_AS(load_matrix(dir.file("bad.emb")), Error);
  }
  SUBCASE("non-finite values") {
    write_emb_bytes(dir.file("nan.emb"), 1, 2, {1.0f, std::nanf("")}, {"a"});
    CHECK(error_of([&] { load_matrix(dir.file("nan.emb")); }).find("finite") !=
          std::string::npos);
    write_emb_bytes(dir.file("inf.emb"), 1, 2, {1.0f, std::numeric_limits<float>::infinity()},
                    {"a"});
    CHECK_THROWS_AS(load_matrix(dir.file("inf.emb")), Error);
  }
  SUBCASE("duplicate ids") {
    write_emb_bytes(dir.file("dup.emb"), 2, 2, {1, 2, 3, 4}, {"a", "a"});
    CHECK(error_of([&] { load_matrix(dir.file("dup.emb")); }).find("duplicate") !=
          std::string::npos);
  }
  SUBCASE("missing id lines") {
    write_emb_bytes(dir.file("short.emb"), 2, 2, {1, 2, 3, 4}, {"a"});
    CHECK_THROWS_AS(load_matrix(dir.file("short.emb")), Error);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_matrix(dir.file("nope.emb")), Error); }
}

TEST_CASE("save rejects ids the format cannot represent") {
  TempDir dir;
  CHECK_THROWS_AS(save_matrix(make_matrix({{1, 2}}, {"a\nb"}), dir.file("x.emb")), Error);
  CHECK_THROWS_AS(save_matrix(make_matrix({{1, 2}}, {"a,b"}), dir.file("x.emb")), Error);
  CHECK_THROWS_AS(save_matrix(make_matrix({{1, 2}}, {""}), dir.file("x.emb")), Error);
  CHECK_THROWS_AS(save_matrix(make_matrix({{1, 2}, {3, 4}}, {"a", "a"}), dir.file("x.emb")),
                  Error);
}

TEST_CASE("l2_normalize") {
  SUBCASE("3-4-5 triangle") {
    const EmbeddingMatrix m = l2_normalize(make_matrix({{3, 4}}, {"a"}));
    CHECK(m.data(0, 0) == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(m.data(0, 1) == doctest::Approx(0.8).epsilon(1e-7));
  }
  SUBCASE("idempotent within float rounding") {
    const EmbeddingMatrix once = l2_normalize(random_matrix(6, 12, 7));
    const EmbeddingMatrix twice = l2_normalize(once);
    for (Index r = 0; r < once.rows(); ++r)
      for (Index c = 0; c < once.dims(); ++c)
        CHECK(std::abs(once.data(r, c) - twice.data(r, c)) < 1e-7f);
  }
  SUBCASE("all norms land on 1 within 1e-6") {
    const EmbeddingMatrix m = l2_normalize(random_matrix(10, 16, 3));
    for (Index r = 0; r < m.rows(); ++r) {
      double norm = 0.0;  // independent serial accumulation
      for (Index c = 0; c < m.dims(); ++c)
        norm += static_cast<double>(m.data(r, c)) * static_cast<double>(m.data(r, c));
      CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
    }
  }
  SUBCASE("zero row is an error naming the id") {
    const std::string msg =
        error_of([&] { l2_normalize(make_matrix({{1, 0}, {0, 0}}, {"good", "bad"})); });
    CHECK(msg.find("bad") != std::string::npos);
  }
}

namespace {

LabelMap grid_labels(Index classes, Index per_class) {
  LabelMap labels;
  for (Index c = 0; c < classes; ++c)
    for (Index i = 0; i < per_class; ++i)
      labels.emplace("c" + std::to_string(c) + "_i" + std::to_string(i),
                     "class_" + std::to_string(c));
  return labels;
}

}  // namespace

TEST_CASE("make_split basics") {
  const LabelMap labels = grid_labels(4, 6);
  const DatasetSplit split = make_split(labels, 0.5, 0.5, 1);

  SUBCASE("seen classes are the lexicographically first half") {
    CHECK(split.seen_classes == std::vector<std::string>{"class_0", "class_1"});
    CHECK(split.all_classes ==
          std::vector<std::string>{"class_0", "class_1", "class_2", "class_3"});
    CHECK(split.seen_class_index("class_1") == 1);
    CHECK(split.seen_class_index("class_3") == -1);
    CHECK(split.is_seen("class_0"));
    CHECK(!split.is_seen("class_2"));
  }
  SUBCASE("labeled and unlabeled partition the dataset") {
    CHECK(split.labeled_ids.size() == 6);  // 3 per seen class
    CHECK(split.unlabeled_ids.size() == labels.size() - 6);
    std::set<std::string> all(split.labeled_ids.begin(), split.labeled_ids.end());
    all.insert(split.unlabeled_ids.begin(), split.unlabeled_ids.end());
    CHECK(all.size() == labels.size());
    for (const auto& cls : split.labeled_classes) CHECK(split.is_seen(cls));
    for (std::size_t i = 0; i < split.labeled_ids.size(); ++i)
      CHECK(labels.at(split.labeled_ids[i]) == split.labeled_classes[i]);
    for (std::size_t i = 0; i < split.unlabeled_ids.size(); ++i)
      CHECK(labels.at(split.unlabeled_ids[i]) == split.unlabeled_classes[i]);
  }
  SUBCASE("deterministic in the seed") {
    const DatasetSplit again = make_split(labels, 0.5, 0.5, 1);
    CHECK(again.labeled_ids == split.labeled_ids);
    CHECK(again.unlabeled_ids == split.unlabeled_ids);
  }
  SUBCASE("labeled selection depends on the seed") {
    bool differs = false;
    for (std::uint64_t seed = 2; seed < 12 && !differs; ++seed)
      differs = make_split(labels, 0.5, 0.5, seed).labeled_ids != split.labeled_ids;
    CHECK(differs);
  }
}

TEST_CASE("make_split keeps at least one labeled item per seen class") {
  const DatasetSplit split = make_split(grid_labels(3, 5), 0.67, 0.01, 9);
  CHECK(split.seen_classes.size() == 3);  // ceil(0.67 * 3)
  CHECK(split.labeled_ids.size() == 3);   // one per seen class
}

TEST_CASE("make_split error conditions") {
  CHECK_THROWS_AS(make_split(grid_labels(4, 6), 0.0, 0.5, 1), Error);
  CHECK_THROWS_AS(make_split(grid_labels(4, 6), 0.5, 1.5, 1), Error);
  CHECK_THROWS_AS(make_split({}, 0.5, 0.5, 1), Error);

  // A seen class with a single item cannot be split.
  LabelMap tiny = grid_labels(2, 4);
  tiny.emplace("lonely", "class_0");
  for (auto it = tiny.begin(); it != tiny.end();) {
    if (it->second == "class_0" && it->first != "lonely")
      it = tiny.erase(it);
    else
      ++it;
  }
  CHECK_THROWS_AS(make_split(tiny, 0.5, 0.5, 1), Error);

  // Everything seen and labeled leaves no unlabeled part.
  CHECK_THROWS_AS(make_split(grid_labels(4, 6), 1.0, 1.0, 1), Error);
}

TEST_CASE("label CSV round trip") {
  TempDir dir;
  const LabelMap labels = grid_labels(3, 2);
  save_labels(labels, dir.file("labels.csv"));
  CHECK(load_labels(dir.file("labels.csv")) == labels);

  SUBCASE("header is required") {
    std::ofstream out(dir.file("noheader.csv"));
    out << "a,class_0\n";
    out.close();
    CHECK_THROWS_AS(load_labels(dir.file("noheader.csv")), Error);
  }
  SUBCASE("malformed rows are rejected") {
    std::ofstream out(dir.file("bad.csv"));
    out << "id,class_name\njust_one_field\n";
    out.close();
    CHECK_THROWS_AS(load_labels(dir.file("bad.csv")), Error);
  }
}

TEST_CASE("split CSV round trip") {
  TempDir dir;
  const DatasetSplit split = make_split(grid_labels(4, 6), 0.5, 0.5, 3);
  save_split(split, dir.file("split.csv"));
  const DatasetSplit back = load_split(dir.file("split.csv"));
  CHECK(back.labeled_ids == split.labeled_ids);
  CHECK(back.labeled_classes == split.labeled_classes);
  CHECK(back.unlabeled_ids == split.unlabeled_ids);
  CHECK(back.unlabeled_classes == split.unlabeled_classes);
  CHECK(back.seen_classes == split.seen_classes);
  CHECK(back.all_classes == split.all_classes);

  SUBCASE("is_labeled must be 0 or 1") {
    std::ofstream out(dir.file("bad.csv"));
    out << "id,class_name,is_labeled\na,class_0,2\n";
    out.close();
    CHECK_THROWS_AS(load_split(dir.file("bad.csv")), Error);
  }
}

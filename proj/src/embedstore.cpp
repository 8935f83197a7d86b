#include "gcdkit/embedstore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

namespace gcdkit {

namespace {

static_assert(sizeof(float) == 4, "EMB1 stores 32-bit floats");

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::uint32_t read_u32_le(const char* p) {
  std::uint32_t v = 0;
  std::memcpy(&v, p, 4);
  return v;  // little-endian host assumed, see save_matrix
}

void check_little_endian() {
  const std::uint16_t probe = 0x0102;
  unsigned char bytes[2];
  std::memcpy(bytes, &probe, 2);
  if (bytes[0] != 0x02) {
    throw Error("EMB1 i/o requires a little-endian host");
  }
}

void validate_id(const std::string& id, const std::string& path) {
  if (id.empty()) {
    throw Error("empty id in " + path);
  }
  if (id.find('\n') != std::string::npos || id.find(',') != std::string::npos) {
    throw Error("id contains a newline or comma: '" + id + "' in " + path);
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  return line;
}

}  // namespace

bool DatasetSplit::is_seen(const std::string& cls) const {
  return std::binary_search(seen_classes.begin(), seen_classes.end(), cls);
}

Index DatasetSplit::seen_class_index(const std::string& cls) const {
  const auto it = std::lower_bound(seen_classes.begin(), seen_classes.end(), cls);
  if (it == seen_classes.end() || *it != cls) {
    return -1;
  }
  return static_cast<Index>(it - seen_classes.begin());
}

EmbeddingMatrix load_matrix(const std::string& path) {
  check_little_endian();
  const std::string raw = read_file(path);
  if (raw.size() < 12 || std::memcmp(raw.data(), kMagic, 4) != 0) {
    throw Error("bad magic in " + path);
  }
  const std::uint64_t rows = read_u32_le(raw.data() + 4);
  const std::uint64_t dims = read_u32_le(raw.data() + 8);
  if (rows < 1 || dims < 1) {
    throw Error("invalid shape " + std::to_string(rows) + "x" + std::to_string(dims) +
                " in " + path);
  }
  const std::uint64_t payload = rows * dims * 4;
  if (raw.size() < 12 + payload) {
    throw Error("truncated payload in " + path + ": need " + std::to_string(payload) +
                " data bytes, have " + std::to_string(raw.size() - 12));
  }

  EmbeddingMatrix m;
  m.data.resize(static_cast<Index>(rows), static_cast<Index>(dims));
  std::memcpy(m.data.data(), raw.data() + 12, payload);
  if (!m.data.allFinite()) {
    throw Error("non-finite values in " + path);
  }

  // id block: exactly `rows` newline-terminated ids, nothing after.
  m.ids.reserve(rows);
  std::size_t pos = 12 + payload;
  std::unordered_set<std::string> seen;
  seen.reserve(rows);
  for (std::uint64_t r = 0; r < rows; ++r) {
    const std::size_t nl = raw.find('\n', pos);
    if (nl == std::string::npos) {
      throw Error("missing ids in " + path + ": expected " + std::to_string(rows) +
                  ", found " + std::to_string(r));
    }
    std::string id = raw.substr(pos, nl - pos);
    if (id.empty()) {
      throw Error("empty id at row " + std::to_string(r) + " in " + path);
    }
    if (!seen.insert(id).second) {
      throw Error("duplicate id '" + id + "' in " + path);
    }
    m.ids.push_back(std::move(id));
    pos = nl + 1;
  }
  if (pos != raw.size()) {
    throw Error("trailing bytes after id block in " + path);
  }
  return m;
}

void save_matrix(const EmbeddingMatrix& m, const std::string& path) {
  check_little_endian();
  if (m.rows() < 1 || m.dims() < 1) {
    throw Error("cannot save empty matrix to " + path);
  }
  if (static_cast<Index>(m.ids.size()) != m.rows()) {
    throw Error("id count does not match rows for " + path);
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : m.ids) {
    validate_id(id, path);
    if (!seen.insert(id).second) {
      throw Error("duplicate id '" + id + "' for " + path);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open for write: " + path);
  }
  out.write(kMagic, 4);
  const auto rows = static_cast<std::uint32_t>(m.rows());
  const auto dims = static_cast<std::uint32_t>(m.dims());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&dims), 4);
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(sizeof(float)) * m.rows() * m.dims());
  for (const auto& id : m.ids) {
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    out.put('\n');
  }
  if (!out) {
    throw Error("write failed: " + path);
  }
}

EmbeddingMatrix l2_normalize(const EmbeddingMatrix& m) {
  EmbeddingMatrix out;
  out.ids = m.ids;
  out.data.resize(m.rows(), m.dims());
  for (Index r = 0; r < m.rows(); ++r) {
    const double norm = row_norm(m.data.row(r));
    if (norm == 0.0) {
      throw Error("zero-norm row '" + m.ids[static_cast<std::size_t>(r)] + "'");
    }
    for (Index d = 0; d < m.dims(); ++d) {
      out.data(r, d) = static_cast<float>(static_cast<double>(m.data(r, d)) / norm);
    }
  }
  return out;
}

DatasetSplit make_split(const LabelMap& labels, double seen_fraction,
                        double labeled_fraction, std::uint64_t seed) {
  if (!(seen_fraction > 0.0 && seen_fraction <= 1.0) ||
      !(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw Error("split fractions must lie in (0,1]");
  }

  // class -> sorted ids (std::map keeps both orderings deterministic)
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& [id, cls] : labels) {
    if (id.empty() || cls.empty()) {
      throw Error("empty id or class name in label map");
    }
    by_class[cls].push_back(id);
  }
  const auto num_classes = static_cast<Index>(by_class.size());
  if (num_classes < 2) {
    throw Error("need at least 2 classes, have " + std::to_string(num_classes));
  }

  DatasetSplit split;
  split.all_classes.reserve(by_class.size());
  for (const auto& [cls, ids] : by_class) {
    split.all_classes.push_back(cls);
  }
  const auto num_seen = static_cast<Index>(
      std::ceil(seen_fraction * static_cast<double>(num_classes)));
  split.seen_classes.assign(split.all_classes.begin(), split.all_classes.begin() + num_seen);

  RngStream rng(seed);
  for (const auto& cls : split.all_classes) {
    auto& ids = by_class[cls];
    std::sort(ids.begin(), ids.end());
    if (!split.is_seen(cls)) {
      for (auto& id : ids) {
        split.unlabeled_ids.push_back(id);
        split.unlabeled_classes.push_back(cls);
      }
      continue;
    }
    const auto n = static_cast<Index>(ids.size());
    if (n < 2) {
      throw Error("seen class '" + cls + "' has fewer than 2 items");
    }
    auto n_labeled = static_cast<Index>(
        std::floor(labeled_fraction * static_cast<double>(n)));
    n_labeled = std::clamp<Index>(n_labeled, 1, n);
    std::vector<std::string> order = ids;
    shuffle(order, rng);
    std::vector<std::string> picked(order.begin(), order.begin() + n_labeled);
    std::sort(picked.begin(), picked.end());
    std::vector<std::string> rest(order.begin() + n_labeled, order.end());
    std::sort(rest.begin(), rest.end());
    for (auto& id : picked) {
      split.labeled_ids.push_back(id);
      split.labeled_classes.push_back(cls);
    }
    for (auto& id : rest) {
      split.unlabeled_ids.push_back(id);
      split.unlabeled_classes.push_back(cls);
    }
  }

  if (split.unlabeled_ids.empty()) {
    throw Error("degenerate split: unlabeled set is empty");
  }
  return split;
}

LabelMap load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open file: " + path);
  }
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "id,class_name") {
    throw Error("missing 'id,class_name' header in " + path);
  }
  LabelMap labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) {
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty()) {
      throw Error("malformed label row at line " + std::to_string(lineno) + " in " + path);
    }
    if (!labels.emplace(fields[0], fields[1]).second) {
      throw Error("duplicate id '" + fields[0] + "' in " + path);
    }
  }
  if (labels.empty()) {
    throw Error("no label rows in " + path);
  }
  return labels;
}

void save_labels(const LabelMap& labels, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot open for write: " + path);
  }
  out << "id,class_name\n";
  for (const auto& [id, cls] : labels) {
    validate_id(id, path);
    validate_id(cls, path);
    out << id << ',' << cls << '\n';
  }
  if (!out) {
    throw Error("write failed: " + path);
  }
}

DatasetSplit load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open file: " + path);
  }
  std::string line;
  if (!std::getline(in, line) || strip_cr(line) != "id,class_name,is_labeled") {
    throw Error("missing 'id,class_name,is_labeled' header in " + path);
  }

  // Collect rows, then rebuild the class bookkeeping.
  struct Row {
    std::string id, cls;
    bool labeled;
  };
  std::vector<Row> rows;
  std::unordered_set<std::string> ids_seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) {
      continue;
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() ||
        (fields[2] != "0" && fields[2] != "1")) {
      throw Error("malformed split row at line " + std::to_string(lineno) + " in " + path);
    }
    if (!ids_seen.insert(fields[0]).second) {
      throw Error("duplicate id '" + fields[0] + "' in " + path);
    }
    rows.push_back(Row{fields[0], fields[1], fields[2] == "1"});
  }
  if (rows.empty()) {
    throw Error("no split rows in " + path);
  }

  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.id < b.id; });
  DatasetSplit split;
  std::set<std::string> seen_set, all_set;
  for (const auto& row : rows) {
    all_set.insert(row.cls);
    if (row.labeled) {
      seen_set.insert(row.cls);
    }
  }
  split.seen_classes.assign(seen_set.begin(), seen_set.end());
  split.all_classes.assign(all_set.begin(), all_set.end());
  for (auto& row : rows) {
    if (row.labeled) {
      split.labeled_ids.push_back(std::move(row.id));
      split.labeled_classes.push_back(std::move(row.cls));
    } else {
      split.unlabeled_ids.push_back(std::move(row.id));
      split.unlabeled_classes.push_back(std::move(row.cls));
    }
  }
  for (const auto& cls : split.labeled_classes) {
    if (!split.is_seen(cls)) {
      throw Error("labeled item with unseen class '" + cls + "' in " + path);
    }
  }
  return split;
}

void save_split(const DatasetSplit& split, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot open for write: " + path);
  }
  out << "id,class_name,is_labeled\n";
  // merged, sorted by id
  struct Row {
    const std::string* id;
    const std::string* cls;
    bool labeled;
  };
  std::vector<Row> rows;
  rows.reserve(split.labeled_ids.size() + split.unlabeled_ids.size());
  for (std::size_t i = 0; i < split.labeled_ids.size(); ++i) {
    rows.push_back(Row{&split.labeled_ids[i], &split.labeled_classes[i], true});
  }
  for (std::size_t i = 0; i < split.unlabeled_ids.size(); ++i) {
    rows.push_back(Row{&split.unlabeled_ids[i], &split.unlabeled_classes[i], false});
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return *a.id < *b.id; });
  for (const auto& row : rows) {
    out << *row.id << ',' << *row.cls << ',' << (row.labeled ? '1' : '0') << '\n';
  }
  if (!out) {
    throw Error("write failed: " + path);
  }
}

}  // namespace gcdkit

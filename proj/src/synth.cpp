#include "gcdkit/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace gcdkit {

namespace {

std::string padded(Index value, int width) {
  std::ostringstream out;
  out << value;
  std::string s = out.str();
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

int width_for(Index count) {
  int w = 1;
  for (Index v = count - 1; v >= 10; v /= 10) ++w;
  return std::max(w, 2);
}

VecD gaussian_vector(RngStream& rng, Index dims) {
  VecD v(dims);
  for (Index d = 0; d < dims; ++d) v(d) = rng.next_gaussian();
  return v;
}

VecD unit(const VecD& v, const char* what) {
  const double norm = row_norm(v);
  if (!(norm > 0.0)) throw Error(std::string("zero-norm ") + what);
  return v / norm;
}

// Image prototype carried into text space: copy the shared dims, zero the
// rest.
VecD lift(const VecD& v, Index dims) {
  VecD out = VecD::Zero(dims);
  const Index shared = std::min(v.size(), dims);
  out.head(shared) = v.head(shared);
  return out;
}

}  // namespace

SynthData generate(const SynthConfig& config) {
  if (config.num_classes < 1 || config.dims_image < 1 || config.dims_text < 1 ||
      config.items_per_class < 1 || config.captions_per_class < 1)
    throw Error("all synthetic counts must be >= 1");
  if (config.image_noise < 0.0 || config.text_noise < 0.0)
    throw Error("noise scales must be >= 0");
  if (config.alignment < 0.0 || config.alignment > 1.0)
    throw Error("alignment must lie in [0, 1]");

  SynthData data;
  if (config.num_classes > config.dims_image)
    data.warnings.push_back("more classes than image dims; prototypes cannot be well separated");
  if (config.num_classes > config.dims_text)
    data.warnings.push_back("more classes than text dims; prototypes cannot be well separated");

  const Index C = config.num_classes;
  const Index n_images = C * config.items_per_class;
  const Index n_captions = C * config.captions_per_class;
  const int class_width = width_for(C);
  const int item_width = width_for(n_images);

  data.images.data.resize(n_images, config.dims_image);
  data.images.ids.reserve(static_cast<std::size_t>(n_images));
  data.corpus.data.resize(n_captions, config.dims_text);
  data.corpus.ids.reserve(static_cast<std::size_t>(n_captions));
  data.corpus_texts.reserve(static_cast<std::size_t>(n_captions));

  RngStream rng(config.seed);
  Index image_row = 0;
  Index caption_row = 0;
  for (Index c = 0; c < C; ++c) {
    const std::string cls = "class_" + padded(c, class_width);
    const VecD img_proto = unit(gaussian_vector(rng, config.dims_image), "image prototype");
    const VecD text_dir = unit(gaussian_vector(rng, config.dims_text), "text direction");
    const VecD text_proto = unit(config.alignment * lift(img_proto, config.dims_text) +
                                     (1.0 - config.alignment) * text_dir,
                                 "text prototype");

    for (Index i = 0; i < config.items_per_class; ++i, ++image_row) {
      const VecD noise = gaussian_vector(rng, config.dims_image);
      const VecD item = unit(img_proto + config.image_noise * noise, "image item");
      data.images.data.row(image_row) = item.cast<float>().transpose();
      const std::string id = "img_" + padded(image_row, item_width);
      data.images.ids.push_back(id);
      data.labels.emplace(id, cls);
    }
    for (Index j = 0; j < config.captions_per_class; ++j, ++caption_row) {
      const VecD noise = gaussian_vector(rng, config.dims_text);
      const VecD caption = unit(text_proto + config.text_noise * noise, "caption");
      data.corpus.data.row(caption_row) = caption.cast<float>().transpose();
      std::ostringstream row_id;
      row_id << caption_row;
      data.corpus.ids.push_back(row_id.str());
      std::ostringstream text;
      text << cls << " caption " << j;
      data.corpus_texts.push_back(text.str());
      data.caption_classes.emplace(row_id.str(), cls);
    }
  }
  return data;
}

void write_dataset(const SynthData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  save_matrix(data.images, (base / "images.emb").string());
  save_labels(data.labels, (base / "labels.csv").string());
  save_matrix(data.corpus, (base / "corpus.emb").string());
  save_labels(data.caption_classes, (base / "caption_classes.csv").string());

  std::ofstream texts(base / "corpus.txt", std::ios::binary);
  if (!texts) throw Error("cannot open for writing: " + (base / "corpus.txt").string());
  for (const auto& line : data.corpus_texts) texts << line << '\n';
  if (!texts) throw Error("failed while writing: " + (base / "corpus.txt").string());
}

}  // namespace gcdkit

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcdkit/core.hpp"
#include "gcdkit/embedstore.hpp"

namespace gcdkit {

struct SynthConfig {
  Index num_classes = 10;
  Index dims_image = 64;
  Index dims_text = 64;
  Index items_per_class = 100;
  Index captions_per_class = 10;
  double image_noise = 0.1;   // sigma_i
  double text_noise = 0.1;    // sigma_t
  double alignment = 1.0;     // alpha in [0,1]: cross-modal alignment strength
  std::uint64_t seed = 0;
};

struct SynthData {
  EmbeddingMatrix images;                 // ids img_<i>, grouped by class
  LabelMap labels;                        // image id -> class name
  std::vector<std::string> corpus_texts;  // one caption per corpus row
  EmbeddingMatrix corpus;                 // ids are decimal row numbers
  LabelMap caption_classes;               // corpus row number -> class name
  std::vector<std::string> warnings;
};

// Draws one unit-sphere prototype per class and modality; the text prototype
// mixes the image prototype (padded/truncated to text dims) with an
// independent direction, alignment-weighted: normalize(alpha * lift(p_img) +
// (1 - alpha) * q). Items and captions are normalize(prototype + sigma * g).
// Per class the stream is consumed as: image prototype, independent text
// direction, then item noise, then caption noise — so two configs differing
// only in noise scales share every draw. Class names are zero-padded
// ("class_07"). More classes than dims in either modality only warns.
SynthData generate(const SynthConfig& config);

// Writes images.emb, labels.csv, corpus.txt, corpus.emb and
// caption_classes.csv under dir (created if missing).
void write_dataset(const SynthData& data, const std::string& dir);

}  // namespace gcdkit

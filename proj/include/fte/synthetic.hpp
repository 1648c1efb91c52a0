#pragma once

#include <cstdint>
#include <string>

#include "fte/episodes.hpp"

namespace fte {

// Generator settings for the constructed cross-domain task. Source classes use
// the first `source_classes` generators; target classes use held-out ones,
// pushed through a random near-identity affine map x -> A x + t.
struct SyntheticSpec {
  std::string kind = "blobs";  // blobs | images
  int dim = 32;                // blobs: vector length
  int channels = 3;            // images
  int image_size = 16;         // images: square side
  int source_classes = 8;
  int target_classes = 5;
  int source_per_class = 60;
  int target_per_class = 40;
  double center_scale = 0.6;
  double noise = 1.0;
  double affine_scale = 0.3;
  double shift = 2.0;
  // Reassign labels within each split so every label holds the same number of
  // items from every true class; features then carry no label information.
  bool scramble_labels = false;
  std::uint64_t seed = 7;

  void validate() const;
};

SyntheticSpec parse_synthetic_spec(const std::string& text);

struct SyntheticData {
  Dataset source;
  Dataset target;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Writes source.fte1 and target.fte1 into dir.
void write_synthetic(const SyntheticData& data, const std::string& dir);

}  // namespace fte

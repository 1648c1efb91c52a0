#pragma once

#include <string>

#include "fte/augment.hpp"
#include "fte/ensemble.hpp"
#include "fte/episodes.hpp"

namespace fte {

// FTE1 dataset file, all integers little-endian u32:
//   "FTE1" | version (1) | count | C | H | W
//   count * (C*H*W, or C when H == W == 0) f32 values, channel-major per item
//   count labels
// Manifest format: CSV lines `relative_path,label` naming binary PPM (P6)
// images, resolved against the manifest's directory; bytes map to [0, 1].
Dataset load_dataset(const std::string& path, const std::string& format = "auto", DatasetRole role = DatasetRole::source);
void save_dataset(const Dataset& data, const std::string& path);

Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);

// Network checkpoint:
//   "FTEM" | version u32 | config echo (u32 fields, see io.cpp) |
//   f64 tensors in declaration order (conv, backbone dense, head; weight then bias)
void save_network(const NetParams& params, const BackboneConfig& cfg, const std::string& path);
NetParams load_network(const std::string& path, BackboneConfig& cfg);

// Ensemble checkpoint: "FTEE" | version u32 | branch count u32 | num_classes u32, then per
// branch: index u32 | seed u64 | stream u64 | rows u32 | cols u32 | f64 projection | FTEM block.
void save_ensemble(const EnsembleModel& model, const std::string& path);
EnsembleModel load_ensemble(const std::string& path);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace fte

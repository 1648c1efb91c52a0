#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "fte/linalg.hpp"
#include "fte/rng.hpp"

namespace fte {

// Channel-major (CHW) image with pixels in [0, 1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return pixels[(static_cast<std::size_t>(c) * height + y) * width + x]; }

  static Image from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row, int c, int h, int w);
  Eigen::RowVectorXd to_row() const;

  bool operator==(const Image&) const = default;
};

constexpr int kMaxOutputSize = 4096;

// Deterministic primitives.
Image resize_bilinear(const Image& img, int out_h, int out_w);
Image crop(const Image& img, int top, int left, int h, int w);
Image hflip(const Image& img);
Image rotate(const Image& img, double degrees);  // about the centre; out-of-bounds samples read 0
Image adjust_brightness(const Image& img, double factor);
Image adjust_contrast(const Image& img, double factor);
Image adjust_saturation(const Image& img, double factor);
Image clamp01(Image img);
double max_abs_diff(const Image& a, const Image& b);

struct ScaleOp {
  int out_h = 32;
  int out_w = 32;
};
struct RandomResizedCropOp {
  int out_h = 32;
  int out_w = 32;
  double area_min = 0.08;
  double area_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
};
struct JitterOp {
  double brightness = 0.4;
  double contrast = 0.4;
  double color = 0.4;
};
struct FlipOp {
  double probability = 0.5;
};
struct RotationOp {
  double min_degrees = 0.0;
  double max_degrees = 45.0;
};

using AugmentOp = std::variant<ScaleOp, RandomResizedCropOp, JitterOp, FlipOp, RotationOp>;

Image apply_op(const AugmentOp& op, const Image& img, RngStream& rng);

// Per-operation hyperparameters addressed by the initials S, C, J, H, R.
struct AugmentSettings {
  int out_h = 32;
  int out_w = 32;
  JitterOp jitter;
  FlipOp flip;
  RotationOp rotation;
  RandomResizedCropOp crop;

  AugmentOp op_for(char initial) const;
};

// '+'-separated variants, each a left-to-right composition of op initials,
// e.g. "S+SJHR+SR+SJ+SH".
struct CompoundMode {
  std::vector<std::string> variants;

  static CompoundMode parse(const std::string& text);
  std::string to_string() const;
  std::size_t size() const { return variants.size(); }
};

Image apply_variant(const std::string& variant, const Image& img, const AugmentSettings& settings, RngStream& rng);

struct LabeledImage {
  Image image;
  int label = 0;
};

// One variant per compound string for every support image; output is grouped
// by image: [img0 v0, img0 v1, ..., img1 v0, ...].
std::vector<LabeledImage> expand_support(const std::vector<LabeledImage>& support, const CompoundMode& mode,
                                         const AugmentSettings& settings, RngStream& rng);

using PredictFn = std::function<Vector(const Image&)>;

// Mean of predict over the mode's variants of img.
Vector tta_predict(const PredictFn& predict, const Image& img, const CompoundMode& mode, const AugmentSettings& settings,
                   RngStream& rng);

}  // namespace fte

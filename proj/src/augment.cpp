#include "fte/augment.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

namespace fte {

namespace {

double sample_clamped(const Image& img, int c, double y, double x) {
  const double fy = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const double fx = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  const int y0 = static_cast<int>(std::floor(fy));
  const int x0 = static_cast<int>(std::floor(fx));
  const int y1 = std::min(y0 + 1, img.height - 1);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const double wy = fy - y0;
  const double wx = fx - x0;
  return (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
         wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
}

// Bilinear read where samples outside the pixel grid contribute zero.
double sample_zero_fill(const Image& img, int c, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double wy = y - y0;
  const double wx = x - x0;
  auto px = [&](int yy, int xx) {
    return (yy < 0 || yy >= img.height || xx < 0 || xx >= img.width) ? 0.0 : img.at(c, yy, xx);
  };
  double v = 0.0;
  if ((1 - wy) * (1 - wx) != 0.0) v += (1 - wy) * (1 - wx) * px(y0, x0);
  if ((1 - wy) * wx != 0.0) v += (1 - wy) * wx * px(y0, x0 + 1);
  if (wy * (1 - wx) != 0.0) v += wy * (1 - wx) * px(y0 + 1, x0);
  if (wy * wx != 0.0) v += wy * wx * px(y0 + 1, x0 + 1);
  return v;
}

std::vector<double> grayscale(const Image& img) {
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  std::vector<double> gray(plane);
  if (img.channels == 3) {
    for (std::size_t p = 0; p < plane; ++p)
      gray[p] = 0.299 * img.pixels[p] + 0.587 * img.pixels[plane + p] + 0.114 * img.pixels[2 * plane + p];
  } else {
    for (std::size_t p = 0; p < plane; ++p) {
      double acc = 0.0;
      for (int c = 0; c < img.channels; ++c) acc += img.pixels[c * plane + p];
      gray[p] = acc / img.channels;
    }
  }
  return gray;
}

void check_size(int h, int w) {
  if (h < 1 || w < 1 || h > kMaxOutputSize || w > kMaxOutputSize)
    fail(ErrorCode::config, "augment: output size " + std::to_string(h) + "x" + std::to_string(w) + " outside [1, " +
                                std::to_string(kMaxOutputSize) + "]");
}

}  // namespace

Image Image::from_row(const Eigen::Ref<const Eigen::RowVectorXd>& row, int c, int h, int w) {
  require(row.size() == static_cast<Eigen::Index>(c) * h * w, "Image::from_row: length does not match shape");
  Image img(c, h, w);
  for (Eigen::Index i = 0; i < row.size(); ++i) img.pixels[static_cast<std::size_t>(i)] = row(i);
  return img;
}

Eigen::RowVectorXd Image::to_row() const {
  return Eigen::Map<const Eigen::RowVectorXd>(pixels.data(), static_cast<Eigen::Index>(pixels.size()));
}

Image resize_bilinear(const Image& img, int out_h, int out_w) {
  check_size(out_h, out_w);
  Image out(img.channels, out_h, out_w);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x) out.at(c, y, x) = sample_clamped(img, c, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5);
  return out;
}

Image crop(const Image& img, int top, int left, int h, int w) {
  require(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= img.height && left + w <= img.width, "crop: window outside image");
  Image out(img.channels, h, w);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, top + y, left + x);
  return out;
}

Image hflip(const Image& img) {
  Image out(img.channels, img.height, img.width);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}

Image rotate(const Image& img, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cy = (img.height - 1) / 2.0;
  const double cx = (img.width - 1) / 2.0;
  Image out(img.channels, img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // Inverse map: rotate the destination coordinate by -theta.
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = cs * dx + sn * dy + cx;
      const double sy = -sn * dx + cs * dy + cy;
      for (int c = 0; c < img.channels; ++c) out.at(c, y, x) = sample_zero_fill(img, c, sy, sx);
    }
  }
  return clamp01(std::move(out));
}

Image adjust_brightness(const Image& img, double factor) {
  Image out = img;
  for (double& p : out.pixels) p *= factor;
  return clamp01(std::move(out));
}

Image adjust_contrast(const Image& img, double factor) {
  const auto gray = grayscale(img);
  double mean = 0.0;
  for (double g : gray) mean += g;
  mean /= static_cast<double>(gray.size());
  Image out = img;
  for (double& p : out.pixels) p = factor * p + (1.0 - factor) * mean;
  return clamp01(std::move(out));
}

Image adjust_saturation(const Image& img, double factor) {
  const auto gray = grayscale(img);
  const std::size_t plane = gray.size();
  Image out = img;
  for (int c = 0; c < out.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      double& v = out.pixels[c * plane + p];
      v = factor * v + (1.0 - factor) * gray[p];
    }
  return clamp01(std::move(out));
}

Image clamp01(Image img) {
  for (double& p : img.pixels) p = std::isfinite(p) ? std::clamp(p, 0.0, 1.0) : 0.0;
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  require(a.pixels.size() == b.pixels.size(), "max_abs_diff: image sizes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

Image apply_op(const AugmentOp& op, const Image& img, RngStream& rng) {
  require(img.channels >= 1 && img.height >= 1 && img.width >= 1, "apply_op: empty image");
  return std::visit(
      [&](const auto& o) -> Image {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ScaleOp>) {
          return resize_bilinear(img, o.out_h, o.out_w);
        } else if constexpr (std::is_same_v<T, RandomResizedCropOp>) {
          check_size(o.out_h, o.out_w);
          const double area = static_cast<double>(img.height) * img.width;
          for (int attempt = 0; attempt < 10; ++attempt) {
            const double target = area * rng.uniform(o.area_min, o.area_max);
            const double ratio = std::exp(rng.uniform(std::log(o.ratio_min), std::log(o.ratio_max)));
            const int w = static_cast<int>(std::lround(std::sqrt(target * ratio)));
            const int h = static_cast<int>(std::lround(std::sqrt(target / ratio)));
            if (w >= 1 && h >= 1 && w <= img.width && h <= img.height) {
              const int top = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(img.height - h + 1)));
              const int left = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(img.width - w + 1)));
              return resize_bilinear(crop(img, top, left, h, w), o.out_h, o.out_w);
            }
          }
          return resize_bilinear(img, o.out_h, o.out_w);
        } else if constexpr (std::is_same_v<T, JitterOp>) {
          const double b = rng.uniform(1.0 - o.brightness, 1.0 + o.brightness);
          const double c = rng.uniform(1.0 - o.contrast, 1.0 + o.contrast);
          const double s = rng.uniform(1.0 - o.color, 1.0 + o.color);
          return adjust_saturation(adjust_contrast(adjust_brightness(img, b), c), s);
        } else if constexpr (std::is_same_v<T, FlipOp>) {
          return rng.bernoulli(o.probability) ? hflip(img) : img;
        } else {
          const double angle = rng.uniform(o.min_degrees, o.max_degrees);
          return angle == 0.0 ? img : rotate(img, angle);
        }
      },
      op);
}

AugmentOp AugmentSettings::op_for(char initial) const {
  switch (initial) {
    case 'S':
      return ScaleOp{out_h, out_w};
    case 'C': {
      RandomResizedCropOp c = crop;
      c.out_h = out_h;
      c.out_w = out_w;
      return c;
    }
    case 'J':
      return jitter;
    case 'H':
      return flip;
    case 'R':
      return rotation;
    default:
      fail(ErrorCode::config, std::string("augment: unknown operation initial '") + initial + "'");
  }
}

CompoundMode CompoundMode::parse(const std::string& text) {
  CompoundMode mode;
  std::string token;
  std::istringstream is(text);
  while (std::getline(is, token, '+')) {
    token.erase(std::remove_if(token.begin(), token.end(), [](unsigned char ch) { return std::isspace(ch); }), token.end());
    if (token.empty()) fail(ErrorCode::config, "augment mode '" + text + "': empty variant");
    for (char ch : token)
      if (std::string_view("SCJHR").find(ch) == std::string_view::npos)
        fail(ErrorCode::config, "augment mode '" + text + "': unknown operation initial '" + ch + "'");
    mode.variants.push_back(token);
  }
  if (mode.variants.empty()) fail(ErrorCode::config, "augment mode is empty");
  return mode;
}

std::string CompoundMode::to_string() const {
  std::string out;
  for (const auto& v : variants) out += (out.empty() ? "" : "+") + v;
  return out;
}

Image apply_variant(const std::string& variant, const Image& img, const AugmentSettings& settings, RngStream& rng) {
  Image out = img;
  for (char ch : variant) out = apply_op(settings.op_for(ch), out, rng);
  return out;
}

std::vector<LabeledImage> expand_support(const std::vector<LabeledImage>& support, const CompoundMode& mode,
                                         const AugmentSettings& settings, RngStream& rng) {
  std::vector<LabeledImage> out;
  out.reserve(support.size() * mode.size());
  for (std::size_t i = 0; i < support.size(); ++i) {
    RngStream local = rng.split(i);
    for (const auto& v : mode.variants) out.push_back({apply_variant(v, support[i].image, settings, local), support[i].label});
  }
  return out;
}

Vector tta_predict(const PredictFn& predict, const Image& img, const CompoundMode& mode, const AugmentSettings& settings,
                   RngStream& rng) {
  require(mode.size() >= 1, "tta_predict: empty mode");
  Vector acc;
  for (const auto& v : mode.variants) {
    const Vector p = predict(apply_variant(v, img, settings, rng));
    if (acc.size() == 0)
      acc = p;
    else
      acc += p;
  }
  return acc / static_cast<double>(mode.size());
}

}  // namespace fte

#include "fte/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "fte/io.hpp"

namespace fte {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

void scramble(Dataset& d, int classes, RngStream rng) {
  const auto index = d.class_index();
  for (const auto& [label, items] : index) {
    std::vector<int> order = items;
    shuffle(order, rng);
    for (std::size_t i = 0; i < order.size(); ++i) d.labels[static_cast<std::size_t>(order[i])] = static_cast<int>(i % classes);
  }
}

Dataset make_blobs(const SyntheticSpec& spec, const std::vector<Vector>& centers, int first, int count, int per_class,
                   const Matrix* affine, const Vector* offset, RngStream rng) {
  Dataset d;
  d.channels = spec.dim;
  d.inputs.resize(count * per_class, spec.dim);
  for (int k = 0; k < count; ++k) {
    for (int i = 0; i < per_class; ++i) {
      Vector x = centers[static_cast<std::size_t>(first + k)];
      for (int j = 0; j < spec.dim; ++j) x(j) += spec.noise * rng.normal();
      if (affine) x = (*affine) * x + *offset;
      d.inputs.row(k * per_class + i) = x.transpose();
      d.labels.push_back(k);
    }
  }
  return d;
}

struct StripeGenerator {
  double color[3];
  double frequency;
  double orientation;
};

Dataset make_images(const SyntheticSpec& spec, const std::vector<StripeGenerator>& gens, int first, int count, int per_class,
                    bool shifted, RngStream rng) {
  const int s = spec.image_size;
  const int c = spec.channels;
  Dataset d;
  d.channels = c;
  d.height = s;
  d.width = s;
  d.inputs.resize(count * per_class, c * s * s);
  RngStream domain = rng.split(0);
  std::vector<double> gain(static_cast<std::size_t>(c), 1.0);
  std::vector<double> bias(static_cast<std::size_t>(c), 0.0);
  if (shifted) {
    for (int ch = 0; ch < c; ++ch) {
      gain[static_cast<std::size_t>(ch)] = 1.0 + spec.affine_scale * domain.uniform(-1.0, 1.0);
      bias[static_cast<std::size_t>(ch)] = 0.05 * spec.shift * domain.uniform(-1.0, 1.0);
    }
  }
  RngStream samples = rng.split(1);
  for (int k = 0; k < count; ++k) {
    const StripeGenerator& g = gens[static_cast<std::size_t>(first + k)];
    for (int i = 0; i < per_class; ++i) {
      Image img(c, s, s);
      const double phase = samples.uniform(0.0, 2.0 * std::numbers::pi);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const double t = (x * std::cos(g.orientation) + y * std::sin(g.orientation)) / s;
          const double wave = 0.25 * std::sin(2.0 * std::numbers::pi * g.frequency * t + phase);
          for (int ch = 0; ch < c; ++ch) {
            double v = g.color[ch % 3] + wave + 0.1 * spec.noise * samples.normal();
            v = gain[static_cast<std::size_t>(ch)] * v + bias[static_cast<std::size_t>(ch)];
            img.at(ch, y, x) = std::clamp(v, 0.0, 1.0);
          }
        }
      d.inputs.row(k * per_class + i) = img.to_row();
      d.labels.push_back(k);
    }
  }
  return d;
}

}  // namespace

void SyntheticSpec::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::config, "synthetic spec: " + what);
  };
  need(kind == "blobs" || kind == "images", "kind must be blobs or images");
  need(dim >= 1 && channels >= 1 && image_size >= 2, "dimensions must be positive");
  need(source_classes >= 1 && target_classes >= 1, "class counts must be positive");
  need(source_per_class >= 1 && target_per_class >= 1, "per-class counts must be positive");
  need(noise >= 0.0 && center_scale >= 0.0 && affine_scale >= 0.0, "scales must be non-negative");
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::config, "synthetic spec line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "kind") spec.kind = value;
      else if (key == "dim") spec.dim = std::stoi(value);
      else if (key == "channels") spec.channels = std::stoi(value);
      else if (key == "image_size") spec.image_size = std::stoi(value);
      else if (key == "source_classes") spec.source_classes = std::stoi(value);
      else if (key == "target_classes") spec.target_classes = std::stoi(value);
      else if (key == "source_per_class") spec.source_per_class = std::stoi(value);
      else if (key == "target_per_class") spec.target_per_class = std::stoi(value);
      else if (key == "center_scale") spec.center_scale = std::stod(value);
      else if (key == "noise") spec.noise = std::stod(value);
      else if (key == "affine_scale") spec.affine_scale = std::stod(value);
      else if (key == "shift") spec.shift = std::stod(value);
      else if (key == "scramble_labels") spec.scramble_labels = value == "true" || value == "1";
      else if (key == "seed") spec.seed = std::stoull(value);
      else fail(ErrorCode::config, "synthetic spec line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::logic_error&) {
      fail(ErrorCode::config, "synthetic spec line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  spec.validate();
  return spec;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const RngStream root(spec.seed, 0);
  const int total = spec.source_classes + spec.target_classes;
  SyntheticData out;
  if (spec.kind == "blobs") {
    RngStream gen = root.split(0);
    std::vector<Vector> centers;
    for (int g = 0; g < total; ++g) {
      Vector c(spec.dim);
      for (int j = 0; j < spec.dim; ++j) c(j) = spec.center_scale * gen.normal();
      centers.push_back(std::move(c));
    }
    RngStream shift_rng = root.split(1);
    Matrix affine = Matrix::Identity(spec.dim, spec.dim);
    for (Eigen::Index i = 0; i < affine.size(); ++i)
      affine.data()[i] += spec.affine_scale * shift_rng.normal() / std::sqrt(static_cast<double>(spec.dim));
    Vector offset(spec.dim);
    for (int j = 0; j < spec.dim; ++j) offset(j) = shift_rng.normal();
    if (offset.norm() > 0.0) offset *= spec.shift / offset.norm();
    out.source = make_blobs(spec, centers, 0, spec.source_classes, spec.source_per_class, nullptr, nullptr, root.split(2));
    out.target = make_blobs(spec, centers, spec.source_classes, spec.target_classes, spec.target_per_class, &affine, &offset,
                            root.split(3));
  } else {
    RngStream gen = root.split(0);
    std::vector<StripeGenerator> gens;
    for (int g = 0; g < total; ++g) {
      StripeGenerator s{};
      for (double& c : s.color) c = gen.uniform(0.25, 0.75);
      s.frequency = gen.uniform(1.0, 3.0);
      s.orientation = gen.uniform(0.0, std::numbers::pi);
      gens.push_back(s);
    }
    out.source = make_images(spec, gens, 0, spec.source_classes, spec.source_per_class, false, root.split(2));
    out.target = make_images(spec, gens, spec.source_classes, spec.target_classes, spec.target_per_class, true, root.split(3));
  }
  out.source.role = DatasetRole::source;
  out.target.role = DatasetRole::target;
  if (spec.scramble_labels) {
    scramble(out.source, spec.source_classes, root.split(4));
    scramble(out.target, spec.target_classes, root.split(5));
  }
  return out;
}

void write_synthetic(const SyntheticData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_dataset(data.source, (std::filesystem::path(dir) / "source.fte1").string());
  save_dataset(data.target, (std::filesystem::path(dir) / "target.fte1").string());
}

}  // namespace fte

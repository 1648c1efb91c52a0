#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fte/linalg.hpp"
#include "fte/rng.hpp"

namespace fte {

enum class DatasetRole { source, target };

// Rows of `inputs` are flattened items. Images are stored channel-major; for
// flat vectors height == width == 0 and the row length is `channels`.
struct Dataset {
  int channels = 0;
  int height = 0;
  int width = 0;
  Matrix inputs;
  std::vector<int> labels;
  DatasetRole role = DatasetRole::source;

  bool is_image() const { return height > 0 && width > 0; }
  int item_dim() const { return is_image() ? channels * height * width : channels; }
  std::size_t size() const { return labels.size(); }

  // Sorted distinct labels.
  std::vector<int> classes() const;
  // Item indices per label, in dataset order.
  std::map<int, std::vector<int>> class_index() const;
  void validate() const;
};

struct Episode {
  Matrix support;
  std::vector<int> support_labels;  // relabelled 0..K-1
  Matrix query;
  std::vector<int> query_labels;
  std::vector<int> classes;  // original label of each episode class
  std::vector<int> support_items;
  std::vector<int> query_items;

  int ways() const { return static_cast<int>(classes.size()); }
};

// K classes uniformly without replacement, then N + Q items per class without
// replacement; the first N go to the support set.
Episode sample_episode(const Dataset& target, int ways, int shots, int queries, RngStream rng);

struct Summary {
  double mean = 0.0;
  double ci95 = 0.0;
};

// Mean and 1.96 * s / sqrt(n) with the n - 1 sample standard deviation.
Summary evaluate(std::span<const double> accuracies);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

struct EpisodeResult {
  int index = 0;
  double accuracy = 0.0;
  std::vector<std::string> flags;
};

struct EvalReport {
  std::map<std::string, std::string> config;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<EpisodeResult> per_episode;
  double mean = 0.0;
  double ci95 = 0.0;

  void finalize();
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  static std::string csv_header();
  std::string csv_row() const;
};

}  // namespace fte

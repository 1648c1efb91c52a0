#include "fte/episodes.hpp"

#include <json.hpp>

#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace fte {

std::vector<int> Dataset::classes() const {
  std::set<int> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

std::map<int, std::vector<int>> Dataset::class_index() const {
  std::map<int, std::vector<int>> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) idx[labels[i]].push_back(static_cast<int>(i));
  return idx;
}

void Dataset::validate() const {
  if (labels.empty()) fail(ErrorCode::data, "dataset is empty");
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) fail(ErrorCode::data, "dataset: label count does not match item count");
  if (inputs.cols() != item_dim()) fail(ErrorCode::data, "dataset: item width does not match declared shape");
  if (!inputs.allFinite()) fail(ErrorCode::data, "dataset: non-finite input values");
  for (int y : labels)
    if (y < 0) fail(ErrorCode::data, "dataset: negative label " + std::to_string(y));
}

Episode sample_episode(const Dataset& target, int ways, int shots, int queries, RngStream rng) {
  if (ways < 1 || shots < 1 || queries < 1) fail(ErrorCode::config, "episode: ways, shots and queries must be positive");
  const auto index = target.class_index();
  std::vector<int> eligible;
  for (const auto& [label, items] : index)
    if (static_cast<int>(items.size()) >= shots + queries) eligible.push_back(label);
  if (static_cast<int>(index.size()) < ways)
    fail(ErrorCode::protocol, "episode: target has " + std::to_string(index.size()) + " classes, " + std::to_string(ways) + " needed");
  if (static_cast<int>(eligible.size()) != static_cast<int>(index.size())) {
    for (const auto& [label, items] : index)
      if (static_cast<int>(items.size()) < shots + queries)
        fail(ErrorCode::protocol, "episode: class " + std::to_string(label) + " has " + std::to_string(items.size()) + " items, " +
                                      std::to_string(shots + queries) + " needed");
  }

  std::vector<int> classes = eligible;
  for (int i = 0; i < ways; ++i) {
    const auto j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(classes.size() - i)));
    std::swap(classes[static_cast<std::size_t>(i)], classes[static_cast<std::size_t>(j)]);
  }
  classes.resize(static_cast<std::size_t>(ways));

  Episode ep;
  ep.classes = classes;
  const int d = static_cast<int>(target.inputs.cols());
  ep.support.resize(ways * shots, d);
  ep.query.resize(ways * queries, d);
  for (int k = 0; k < ways; ++k) {
    std::vector<int> items = index.at(classes[static_cast<std::size_t>(k)]);
    const int take = shots + queries;
    for (int i = 0; i < take; ++i) {
      const auto j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(items.size() - i)));
      std::swap(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(j)]);
    }
    for (int i = 0; i < take; ++i) {
      const int item = items[static_cast<std::size_t>(i)];
      if (i < shots) {
        ep.support.row(static_cast<Eigen::Index>(ep.support_items.size())) = target.inputs.row(item);
        ep.support_items.push_back(item);
        ep.support_labels.push_back(k);
      } else {
        ep.query.row(static_cast<Eigen::Index>(ep.query_items.size())) = target.inputs.row(item);
        ep.query_items.push_back(item);
        ep.query_labels.push_back(k);
      }
    }
  }
  return ep;
}

Summary evaluate(std::span<const double> accs) {
  require(!accs.empty(), "evaluate: no accuracies");
  const double n = static_cast<double>(accs.size());
  // Accumulate offsets from the first value: a constant list gives exactly zero spread.
  const double x0 = accs.front();
  double shift = 0.0;
  for (double a : accs) shift += a - x0;
  shift /= n;
  const double mean = x0 + shift;
  if (accs.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double a : accs) ss += (a - x0 - shift) * (a - x0 - shift);
  const double s = std::sqrt(ss / (n - 1.0));
  return {mean, 1.96 * s / std::sqrt(n)};
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  require(predicted.size() == truth.size() && !truth.empty(), "accuracy: prediction count does not match labels");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

void EvalReport::finalize() {
  std::vector<double> accs;
  accs.reserve(per_episode.size());
  for (const auto& e : per_episode) accs.push_back(e.accuracy);
  const Summary s = evaluate(accs);
  mean = s.mean;
  ci95 = s.ci95;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  auto& eps = j["per_episode"] = nlohmann::ordered_json::array();
  for (const auto& e : per_episode) eps.push_back({{"index", e.index}, {"accuracy", e.accuracy}, {"flags", e.flags}});
  j["mean"] = mean;
  j["ci95"] = ci95;
  return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.config = j.at("config").get<std::map<std::string, std::string>>();
    r.config_hash = j.value("config_hash", "");
    r.seed = j.value("seed", std::uint64_t{0});
    for (const auto& e : j.at("per_episode"))
      r.per_episode.push_back({e.at("index").get<int>(), e.at("accuracy").get<double>(), e.value("flags", std::vector<std::string>{})});
    r.mean = j.at("mean").get<double>();
    r.ci95 = j.at("ci95").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::data, std::string("report: ") + e.what());
  }
  return r;
}

std::string EvalReport::csv_header() { return "config_hash,seed,episodes,mean,ci95,fallbacks"; }

std::string EvalReport::csv_row() const {
  std::size_t fallbacks = 0;
  for (const auto& e : per_episode)
    for (const auto& f : e.flags) fallbacks += f.rfind("lp_fallback", 0) == 0;
  std::ostringstream os;
  os << config_hash << ',' << seed << ',' << per_episode.size() << ',' << std::setprecision(10) << mean << ',' << ci95 << ','
     << fallbacks;
  return os.str();
}

}  // namespace fte

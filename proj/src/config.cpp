#include "fte/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace fte {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  fail(ErrorCode::config, "config: key '" + key + "' expects " + expected + ", got '" + value + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (v.empty() || v == "none") return out;
  std::istringstream is(v);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(static_cast<int>(parse_int(key, trim(tok))));
  return out;
}

std::string join(const std::vector<int>& xs) {
  if (xs.empty()) return "none";
  std::string s;
  for (int x : xs) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}

// Shortest representation that round-trips.
std::string fmt(double d) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, res.ptr);
}

std::string fmt(bool b) { return b ? "true" : "false"; }

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto boolean = [&](const char* name, bool ExperimentConfig::*field) {
      t[name] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*field = parse_bool(k, v); };
    };
    auto integer = [&](const char* name, int ExperimentConfig::*field) {
      t[name] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.*field = static_cast<int>(parse_int(k, v));
      };
    };
    auto real = [&](const char* name, double ExperimentConfig::*field) {
      t[name] = [field](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*field = parse_double(k, v); };
    };
    auto text = [&](const char* name, std::string ExperimentConfig::*field) {
      t[name] = [field](ExperimentConfig& c, const std::string&, const std::string& v) { c.*field = v; };
    };
    boolean("bsr", &ExperimentConfig::bsr);
    boolean("lp", &ExperimentConfig::lp);
    boolean("ent", &ExperimentConfig::ent);
    boolean("da", &ExperimentConfig::da);
    boolean("ensemble", &ExperimentConfig::ensemble);
    real("lambda", &ExperimentConfig::lambda);
    real("beta", &ExperimentConfig::beta);
    integer("M", &ExperimentConfig::M);
    real("lr_pretrain", &ExperimentConfig::lr_pretrain);
    real("weight_decay", &ExperimentConfig::weight_decay);
    real("momentum", &ExperimentConfig::momentum);
    integer("pretrain_epochs", &ExperimentConfig::pretrain_epochs);
    integer("batch_size", &ExperimentConfig::batch_size);
    real("lr_finetune", &ExperimentConfig::lr_finetune);
    integer("finetune_epochs", &ExperimentConfig::finetune_epochs);
    integer("finetune_batch_size", &ExperimentConfig::finetune_batch_size);
    boolean("freeze_backbone", &ExperimentConfig::freeze_backbone);
    boolean("shared_backbone", &ExperimentConfig::shared_backbone);
    integer("K", &ExperimentConfig::K);
    integer("N", &ExperimentConfig::N);
    integer("Q", &ExperimentConfig::Q);
    integer("episodes", &ExperimentConfig::episodes);
    t["lp_k"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.lp_config.k = static_cast<int>(parse_int(k, v));
    };
    t["lp_delta"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.lp_config.delta = parse_double(k, v); };
    t["lp_alpha"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.lp_config.alpha = parse_double(k, v); };
    t["lp_gamma2"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      if (v == "mean-edge")
        c.lp_config.gamma2.reset();
      else
        c.lp_config.gamma2 = parse_double(k, v);
    };
    boolean("lp_on_ensemble", &ExperimentConfig::lp_on_ensemble);
    text("lp_debug_dir", &ExperimentConfig::lp_debug_dir);
    text("aug_mode", &ExperimentConfig::aug_mode);
    integer("aug_size", &ExperimentConfig::aug_size);
    boolean("tta_query", &ExperimentConfig::tta_query);
    t["hidden"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.hidden = parse_int_list(k, v); };
    t["conv_channels"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.conv_channels = parse_int_list(k, v);
    };
    integer("feature_dim", &ExperimentConfig::feature_dim);
    t["seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); };
    text("source_path", &ExperimentConfig::source_path);
    text("target_path", &ExperimentConfig::target_path);
    text("dataset_format", &ExperimentConfig::dataset_format);
    return t;
  }();
  return table;
}

void apply_protocol(ExperimentConfig& cfg, const std::string& name) {
  if (name == "full") {
    cfg.pretrain_epochs = 400;
    cfg.episodes = 600;
    cfg.M = 10;
  } else if (name == "desk") {
    cfg.pretrain_epochs = 50;
    cfg.episodes = 100;
  } else {
    fail(ErrorCode::config, "config: unknown protocol '" + name + "' (expected desk or full)");
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::config, "config: " + what);
  };
  need(lambda >= 0.0, "lambda must be >= 0");
  need(beta >= 0.0, "beta must be >= 0");
  need(M >= 1, "M must be >= 1");
  need(lr_pretrain > 0.0 && lr_finetune > 0.0, "learning rates must be > 0");
  need(weight_decay >= 0.0, "weight_decay must be >= 0");
  need(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  need(pretrain_epochs >= 1 && finetune_epochs >= 1, "epochs must be >= 1");
  need(batch_size >= 1 && finetune_batch_size >= 1, "batch sizes must be >= 1");
  need(K >= 1 && N >= 1 && Q >= 1 && episodes >= 1, "K, N, Q and episodes must be >= 1");
  need(feature_dim >= 2, "feature_dim must be >= 2");
  for (int h : hidden) need(h >= 1, "hidden widths must be >= 1");
  for (int c : conv_channels) need(c >= 1, "conv_channels must be >= 1");
  need(aug_size >= 0 && aug_size <= kMaxOutputSize, "aug_size out of range");
  need(dataset_format == "auto" || dataset_format == "fte1" || dataset_format == "ppm", "dataset_format must be auto, fte1 or ppm");
  lp_config.validate();
  CompoundMode::parse(aug_mode);
}

std::map<std::string, std::string> ExperimentConfig::echo() const {
  return {
      {"bsr", fmt(bsr)},
      {"lp", fmt(lp)},
      {"ent", fmt(ent)},
      {"da", fmt(da)},
      {"ensemble", fmt(ensemble)},
      {"lambda", fmt(lambda)},
      {"beta", fmt(beta)},
      {"M", std::to_string(M)},
      {"lr_pretrain", fmt(lr_pretrain)},
      {"weight_decay", fmt(weight_decay)},
      {"momentum", fmt(momentum)},
      {"pretrain_epochs", std::to_string(pretrain_epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"lr_finetune", fmt(lr_finetune)},
      {"finetune_epochs", std::to_string(finetune_epochs)},
      {"finetune_batch_size", std::to_string(finetune_batch_size)},
      {"freeze_backbone", fmt(freeze_backbone)},
      {"shared_backbone", fmt(shared_backbone)},
      {"K", std::to_string(K)},
      {"N", std::to_string(N)},
      {"Q", std::to_string(Q)},
      {"episodes", std::to_string(episodes)},
      {"lp_k", std::to_string(lp_config.k)},
      {"lp_delta", fmt(lp_config.delta)},
      {"lp_alpha", fmt(lp_config.alpha)},
      {"lp_gamma2", lp_config.gamma2 ? fmt(*lp_config.gamma2) : "mean-edge"},
      {"lp_on_ensemble", fmt(lp_on_ensemble)},
      {"lp_debug_dir", lp_debug_dir},
      {"aug_mode", aug_mode},
      {"aug_size", std::to_string(aug_size)},
      {"tta_query", fmt(tta_query)},
      {"hidden", join(hidden)},
      {"conv_channels", join(conv_channels)},
      {"feature_dim", std::to_string(feature_dim)},
      {"seed", std::to_string(seed)},
      {"source_path", source_path},
      {"target_path", target_path},
      {"dataset_format", dataset_format},
  };
}

std::string ExperimentConfig::hash() const {
  // FNV-1a over the canonical echo.
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [k, v] : echo()) {
    for (char ch : k + "=" + v + "\n") {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ull;
    }
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  struct Flags {
    bool bsr, lp, ent, da;
  };
  static const std::map<std::string, Flags> presets = {
      {"FT", {false, false, false, false}},       {"BSR", {true, false, false, false}},
      {"BSR+LP", {true, true, false, false}},     {"BSR+DA", {true, false, false, true}},
      {"BSR+LP+ENT", {true, true, true, false}}, {"BSR+LP+DA", {true, true, false, true}},
  };
  const auto it = presets.find(name);
  if (it == presets.end()) fail(ErrorCode::config, "config: unknown preset '" + name + "'");
  cfg.bsr = it->second.bsr;
  cfg.lp = it->second.lp;
  cfg.ent = it->second.ent;
  cfg.da = it->second.da;
}

std::vector<std::string> preset_names() { return {"FT", "BSR", "BSR+LP", "BSR+DA", "BSR+LP+ENT", "BSR+LP+DA"}; }

ExperimentConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::map<std::string, int> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::config, "config line " + std::to_string(lineno) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key != "preset" && key != "protocol" && !setters().contains(key))
      fail(ErrorCode::config, "config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (seen[key]++) fail(ErrorCode::config, "config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    entries.emplace_back(std::move(key), std::move(value));
  }

  ExperimentConfig cfg;
  for (const auto& [k, v] : entries)
    if (k == "protocol") apply_protocol(cfg, v);
  for (const auto& [k, v] : entries)
    if (k == "preset") apply_preset(cfg, v);
  for (const auto& [k, v] : entries)
    if (k != "preset" && k != "protocol") setters().at(k)(cfg, k, v);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::config, "cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig cfg = parse_config(ss.str());
  // Dataset paths are relative to the config file.
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(cfg.source_path);
  resolve(cfg.target_path);
  return cfg;
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out = "# config_hash " + cfg.hash() + "\n";
  for (const auto& [k, v] : cfg.echo()) out += k + " = " + v + "\n";
  return out;
}

}  // namespace fte

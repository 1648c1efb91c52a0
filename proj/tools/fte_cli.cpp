// fte: pre-train, evaluate and self-check few-shot transfer experiments.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <string>

#include "fte/config.hpp"
#include "fte/errors.hpp"
#include "fte/io.hpp"
#include "fte/pipeline.hpp"
#include "fte/synthetic.hpp"
#include "fte/verify.hpp"

namespace fs = std::filesystem;

namespace {

void write_model_dir(const fte::PretrainResult& pre, const fte::ExperimentConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  fte::save_ensemble(pre.model, (out / "model.ftee").string());
  fte::write_text((out / "pretrain_log.csv").string(), fte::pretrain_log_csv(pre.log, cfg));
  fte::write_text((out / "config.txt").string(), fte::format_config(cfg));
  nlohmann::ordered_json meta;
  meta["config_hash"] = cfg.hash();
  meta["seed"] = cfg.seed;
  meta["branches"] = pre.model.branches.size();
  meta["num_classes"] = pre.model.num_classes;
  fte::write_text((out / "model.json").string(), meta.dump(2) + "\n");
}

void write_report(const fte::EvalReport& report, const fs::path& json_path) {
  if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
  fte::write_text(json_path.string(), report.to_json());
  fs::path csv = json_path;
  csv.replace_filename("summary.csv");
  fte::write_text(csv.string(), fte::EvalReport::csv_header() + "\n" + report.csv_row() + "\n");
}

void print_summary(const fte::EvalReport& r) {
  std::cout << "episodes " << r.per_episode.size() << "  mean " << r.mean << "  ci95 " << r.ci95 << "  config "
            << r.config_hash << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain few-shot transfer experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::string model_path;
  std::string spec_path;
  bool full = false;
  std::string workdir = "fte_selftest";

  auto* pre = app.add_subcommand("pretrain", "Pre-train the backbone ensemble on the source dataset");
  pre->add_option("--config", config_path, "Experiment config file")->required();
  pre->add_option("--out", out_path, "Output directory")->required();

  auto* eval = app.add_subcommand("evaluate", "Run few-shot episodes on the target dataset");
  eval->add_option("--config", config_path, "Experiment config file")->required();
  eval->add_option("--model", model_path, "Model directory (or model.ftee file)")->required();
  eval->add_option("--out", out_path, "Report JSON path")->required();

  auto* run = app.add_subcommand("run", "Pre-train then evaluate");
  run->add_option("--config", config_path, "Experiment config file")->required();
  run->add_option("--out", out_path, "Output directory")->required();

  auto* self = app.add_subcommand("selftest", "Run the built-in oracle checks");
  self->add_flag("--full", full, "Include the end-to-end synthetic run");
  self->add_option("--workdir", workdir, "Scratch directory for the end-to-end run");

  auto* gen = app.add_subcommand("gen-synthetic", "Write synthetic source/target datasets");
  gen->add_option("--spec", spec_path, "Synthetic spec file")->required();
  gen->add_option("--out", out_path, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*pre) {
      const auto cfg = fte::load_config(config_path);
      const auto result = fte::pretrain(fte::load_dataset(cfg.source_path, cfg.dataset_format, fte::DatasetRole::source), cfg);
      write_model_dir(result, cfg, out_path);
      std::cout << "wrote " << (fs::path(out_path) / "model.ftee").string() << "\n";
    } else if (*eval) {
      const auto cfg = fte::load_config(config_path);
      fs::path model = model_path;
      if (fs::is_directory(model)) model /= "model.ftee";
      const auto ensemble = fte::load_ensemble(model.string());
      const auto target = fte::load_dataset(cfg.target_path, cfg.dataset_format, fte::DatasetRole::target);
      const auto report = fte::evaluate_model(ensemble, target, cfg);
      write_report(report, out_path);
      print_summary(report);
    } else if (*run) {
      const auto cfg = fte::load_config(config_path);
      const auto result = fte::run_experiment(cfg);
      write_model_dir(result.pretrained, cfg, out_path);
      write_report(result.report, fs::path(out_path) / "report.json");
      print_summary(result.report);
    } else if (*self) {
      fte::verify::Options opts;
      opts.include_end_to_end = full;
      opts.workdir = workdir;
      bool ok = true;
      for (const auto& r : fte::verify::run_all(opts)) {
        std::cout << fte::verify::format(r) << std::endl;
        ok = ok && r.passed;
      }
      return ok ? 0 : 4;
    } else if (*gen) {
      const auto spec = fte::parse_synthetic_spec(fte::read_text(spec_path));
      const auto data = fte::generate_synthetic(spec);
      fte::write_synthetic(data, out_path);
      std::cout << "wrote " << data.source.size() << " source and " << data.target.size() << " target items to " << out_path
                << "\n";
    }
  } catch (const fte::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return fte::exit_code(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

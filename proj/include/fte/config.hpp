#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fte/augment.hpp"
#include "fte/labelprop.hpp"

namespace fte {

// Every experiment knob. Config files are flat `key = value` lines using the
// member names below; '#' starts a comment.
struct ExperimentConfig {
  // Method flags.
  bool bsr = true;
  bool lp = false;
  bool ent = false;
  bool da = false;
  bool ensemble = false;

  double lambda = 0.001;
  double beta = 0.1;
  int M = 10;

  double lr_pretrain = 0.001;
  double weight_decay = 0.0005;
  double momentum = 0.9;
  int pretrain_epochs = 50;
  int batch_size = 32;

  double lr_finetune = 0.01;
  int finetune_epochs = 100;
  int finetune_batch_size = 25;
  bool freeze_backbone = false;
  bool shared_backbone = false;

  int K = 5;
  int N = 5;
  int Q = 15;
  int episodes = 100;

  LPConfig lp_config;
  bool lp_on_ensemble = false;
  std::string lp_debug_dir;

  std::string aug_mode = "S+SJHR+SR+SJ+SH";
  int aug_size = 0;  // 0: keep the dataset's image size
  bool tta_query = true;

  std::vector<int> hidden = {64};
  std::vector<int> conv_channels = {8, 16};
  int feature_dim = 32;

  std::uint64_t seed = 1;
  std::string source_path;
  std::string target_path;
  std::string dataset_format = "auto";

  int branch_count() const { return ensemble ? M : 1; }
  double effective_lambda() const { return bsr ? lambda : 0.0; }
  double effective_beta() const { return ent ? beta : 0.0; }

  void validate() const;

  // Canonical key -> value echo of every field.
  std::map<std::string, std::string> echo() const;
  std::string hash() const;
};

// Method presets: FT, BSR, BSR+LP, BSR+DA, BSR+LP+ENT, BSR+LP+DA.
// Each only sets the bsr/lp/ent/da flags.
void apply_preset(ExperimentConfig& cfg, const std::string& name);
std::vector<std::string> preset_names();

// Parses key=value text. Unknown keys, malformed values and duplicate keys
// are config errors. `preset` and `protocol` (desk | full) are applied before
// other keys.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string format_config(const ExperimentConfig& cfg);

}  // namespace fte

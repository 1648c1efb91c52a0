#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fte/config.hpp"
#include "fte/ensemble.hpp"
#include "fte/episodes.hpp"

namespace fte {

// Stream-id layout. Branch i pre-trains on stream kBranchStreamBase + i and
// episode e runs on stream kEpisodeStreamBase + e; sub-streams come from split().
inline constexpr std::uint64_t kBranchStreamBase = 0x1000;
inline constexpr std::uint64_t kEpisodeStreamBase = 0x100000000ull;

struct EpochLog {
  int branch = 0;
  int epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double bsr = 0.0;
};

struct PretrainResult {
  EnsembleModel model;
  std::vector<EpochLog> log;
};

BackboneConfig backbone_for(const Dataset& data, const ExperimentConfig& cfg);

// Minimises ce + lambda * bsr on shuffled mini-batches for every branch.
PretrainResult pretrain(const Dataset& source, const ExperimentConfig& cfg);

// Fresh classifier heads for the episode's K classes, then support
// cross-entropy (plus beta * query entropy when ent is on).
EnsembleModel finetune(const EnsembleModel& model, const Episode& episode, const ExperimentConfig& cfg, RngStream rng);

struct QueryScores {
  std::vector<Matrix> branch_scores;    // per branch, n_query x K
  std::vector<Matrix> branch_features;  // per branch projected features
  Matrix scores;                        // branch average
};

// Branch soft-max outputs for the query set, averaged over test-time variants
// when da and tta_query are on for image data.
QueryScores score_queries(const EnsembleModel& model, const Matrix& query, const ExperimentConfig& cfg, RngStream rng);

struct EpisodeOutcome {
  double accuracy = 0.0;
  double query_entropy = 0.0;  // mean soft-max entropy of the averaged scores
  std::vector<int> predictions;
  std::vector<std::string> flags;
};

EpisodeOutcome run_episode(const EnsembleModel& pretrained, const Dataset& target, const ExperimentConfig& cfg, int index);

// Every episode for a pre-trained model; order-stable and thread-count independent.
// Errors keep their code and gain an "episode <i>: " prefix.
EvalReport evaluate_model(const EnsembleModel& pretrained, const Dataset& target, const ExperimentConfig& cfg);

struct RunArtifacts {
  PretrainResult pretrained;
  EvalReport report;
};

RunArtifacts run_experiment(const ExperimentConfig& cfg, const Dataset& source, const Dataset& target);
RunArtifacts run_experiment(const ExperimentConfig& cfg);

// Per-epoch losses, each row tagged with the config hash and seed.
std::string pretrain_log_csv(const std::vector<EpochLog>& log, const ExperimentConfig& cfg);

}  // namespace fte

#include "fte/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <sstream>

#include "fte/io.hpp"
#include "fte/parallel.hpp"

namespace fte {

namespace {

struct TrainPlan {
  int epochs = 1;
  int batch_size = 1;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  LossTerms terms;
  bool freeze_backbone = false;
};

// Side length the backbone sees for image data.
std::pair<int, int> working_size(const Dataset& data, const ExperimentConfig& cfg) {
  if (cfg.aug_size > 0) return {cfg.aug_size, cfg.aug_size};
  return {data.height, data.width};
}

Matrix resize_rows(const Matrix& rows, int c, int h, int w, int out_h, int out_w) {
  if (h == out_h && w == out_w) return rows;
  Matrix out(rows.rows(), static_cast<Eigen::Index>(c) * out_h * out_w);
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    out.row(i) = resize_bilinear(Image::from_row(rows.row(i), c, h, w), out_h, out_w).to_row();
  return out;
}

Matrix prepare_inputs(const Dataset& data, const Matrix& rows, const BackboneConfig& bb) {
  if (bb.mode == InputMode::vector) return rows;
  return resize_rows(rows, data.channels, data.height, data.width, bb.height, bb.width);
}

AugmentSettings settings_for(const BackboneConfig& bb) {
  AugmentSettings s;
  s.out_h = bb.height;
  s.out_w = bb.width;
  s.crop.out_h = bb.height;
  s.crop.out_w = bb.width;
  return s;
}

// Variants without a scale step keep the input size; bring them back to the backbone's.
Image fit(Image img, const BackboneConfig& bb) {
  if (img.height != bb.height || img.width != bb.width) img = resize_bilinear(img, bb.height, bb.width);
  return img;
}

bool use_augmentation(const ExperimentConfig& cfg, const BackboneConfig& bb) {
  return cfg.da && bb.mode == InputMode::image;
}

Matrix gather_rows(const Matrix& m, std::span<const int> idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

void check_finite(const LossBreakdown& l, const NetParams& p, const std::string& where) {
  if (!std::isfinite(l.total) || !all_finite(p)) fail(ErrorCode::numerical, where + ": non-finite loss or parameters");
}

// Trains a group of branches in lock step. A group of more than one shares its
// backbone: backbone gradients are summed over the group and every copy takes
// the same step, so the copies never drift apart. Heads stay per branch.
std::vector<EpochLog> train_group(std::vector<Branch*> group, const BackboneConfig& bb, const Matrix& inputs,
                                  const std::vector<int>& labels, const Matrix* query, const TrainPlan& plan,
                                  RngStream shuffle_root, const std::string& where) {
  require(!group.empty(), "train_group: empty group");
  const int n = static_cast<int>(inputs.rows());
  const int nb = std::max(1, (n + plan.batch_size - 1) / plan.batch_size);
  const bool use_query = plan.terms.beta > 0.0 && query != nullptr && query->rows() > 0;
  std::vector<OptState> opts;
  for (Branch* b : group)
    opts.push_back(OptState::for_params(b->params, plan.learning_rate, plan.momentum, plan.weight_decay));
  std::vector<NetParams> grads(group.size());
  std::vector<EpochLog> log;

  for (int epoch = 0; epoch < plan.epochs; ++epoch) {
    RngStream rng = shuffle_root.split(static_cast<std::uint64_t>(epoch));
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    std::vector<int> qorder;
    if (use_query) {
      qorder.resize(static_cast<std::size_t>(query->rows()));
      std::iota(qorder.begin(), qorder.end(), 0);
      shuffle(qorder, rng);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.branch = group.front()->index;
    for (int b = 0; b < nb; ++b) {
      const int lo = b * plan.batch_size;
      const int hi = std::min(n, lo + plan.batch_size);
      if (lo >= hi) break;
      const std::span<const int> idx(order.data() + lo, static_cast<std::size_t>(hi - lo));
      TrainBatch batch{gather_rows(inputs, idx), {}};
      for (int i : idx) batch.labels.push_back(labels[static_cast<std::size_t>(i)]);
      Matrix qbatch;
      if (use_query) {
        // The query set is cut into as many slices as there are support batches.
        const std::size_t nq = qorder.size();
        const std::size_t qlo = nq * static_cast<std::size_t>(b) / static_cast<std::size_t>(nb);
        std::size_t qhi = nq * static_cast<std::size_t>(b + 1) / static_cast<std::size_t>(nb);
        if (qhi == qlo) qhi = std::min(nq, qlo + 1);
        qbatch = gather_rows(*query, std::span<const int>(qorder.data() + qlo, qhi - qlo));
      }
      const LossTerms terms{plan.terms.lambda, use_query ? plan.terms.beta : 0.0};
      for (std::size_t g = 0; g < group.size(); ++g) {
        const Branch& br = *group[g];
        const LossBreakdown l =
            backward(br.params, bb, br.projection.matrix, batch, use_query ? &qbatch : nullptr, terms, grads[g]);
        check_finite(l, br.params, where);
        const double w = static_cast<double>(hi - lo) / static_cast<double>(n * group.size());
        entry.loss += w * l.total;
        entry.ce += w * l.ce;
        entry.bsr += w * l.bsr;
      }
      if (group.size() > 1) {
        NetParams total = grads[0];
        for (std::size_t g = 1; g < group.size(); ++g) {
          for (std::size_t i = 0; i < total.conv.size(); ++i) {
            total.conv[i].weight += grads[g].conv[i].weight;
            total.conv[i].bias += grads[g].conv[i].bias;
          }
          for (std::size_t i = 0; i < total.backbone.size(); ++i) {
            total.backbone[i].weight += grads[g].backbone[i].weight;
            total.backbone[i].bias += grads[g].backbone[i].bias;
          }
        }
        for (std::size_t g = 0; g < group.size(); ++g) {
          grads[g].conv = total.conv;
          grads[g].backbone = total.backbone;
        }
      }
      for (std::size_t g = 0; g < group.size(); ++g) {
        NetParams& p = group[g]->params;
        if (plan.freeze_backbone) {
          const auto conv = p.conv;
          const auto dense = p.backbone;
          sgd_step(p, grads[g], opts[g]);
          p.conv = conv;
          p.backbone = dense;
        } else {
          sgd_step(p, grads[g], opts[g]);
        }
        if (!all_finite(p)) fail(ErrorCode::numerical, where + ": parameters diverged");
      }
    }
    log.push_back(entry);
  }
  return log;
}

std::vector<int> remap_labels(const std::vector<int>& labels, const std::vector<int>& classes) {
  std::map<int, int> pos;
  for (std::size_t i = 0; i < classes.size(); ++i) pos[classes[i]] = static_cast<int>(i);
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(pos.at(l));
  return out;
}

}  // namespace

BackboneConfig backbone_for(const Dataset& data, const ExperimentConfig& cfg) {
  BackboneConfig bb;
  if (data.is_image()) {
    const auto [h, w] = working_size(data, cfg);
    bb = BackboneConfig::image_mode(data.channels, h, w, cfg.conv_channels, cfg.hidden, cfg.feature_dim);
  } else {
    bb = BackboneConfig::vector_mode(data.channels, cfg.hidden, cfg.feature_dim);
  }
  bb.validate();
  return bb;
}

PretrainResult pretrain(const Dataset& source, const ExperimentConfig& cfg) {
  cfg.validate();
  source.validate();
  const BackboneConfig bb = backbone_for(source, cfg);
  const std::vector<int> classes = source.classes();
  const std::vector<int> labels = remap_labels(source.labels, classes);
  const Matrix inputs = prepare_inputs(source, source.inputs, bb);
  const int count = cfg.branch_count();

  PretrainResult out;
  out.model.backbone = bb;
  out.model.num_classes = static_cast<int>(classes.size());
  out.model.branches.resize(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    RngStream root(cfg.seed, kBranchStreamBase + static_cast<std::uint64_t>(i));
    Branch& br = out.model.branches[static_cast<std::size_t>(i)];
    br.index = i;
    br.projection = cfg.ensemble ? make_projection(cfg.feature_dim, root.split(1)) : identity_projection(cfg.feature_dim);
    RngStream init = root.split(0);
    br.params = init_params(bb, br.projection.out_dim(), out.model.num_classes, init);
  }

  TrainPlan plan;
  plan.epochs = cfg.pretrain_epochs;
  plan.batch_size = cfg.batch_size;
  plan.learning_rate = cfg.lr_pretrain;
  plan.momentum = cfg.momentum;
  plan.weight_decay = cfg.weight_decay;
  plan.terms.lambda = cfg.effective_lambda();

  if (cfg.shared_backbone && count > 1) {
    for (int i = 1; i < count; ++i) {
      out.model.branches[static_cast<std::size_t>(i)].params.conv = out.model.branches[0].params.conv;
      out.model.branches[static_cast<std::size_t>(i)].params.backbone = out.model.branches[0].params.backbone;
    }
    std::vector<Branch*> group;
    for (auto& b : out.model.branches) group.push_back(&b);
    out.log = train_group(group, bb, inputs, labels, nullptr, plan, RngStream(cfg.seed, kBranchStreamBase).split(2),
                          "pretrain");
  } else {
    std::vector<std::vector<EpochLog>> logs(static_cast<std::size_t>(count));
    parallel_for(count, [&](int i) {
      Branch& br = out.model.branches[static_cast<std::size_t>(i)];
      logs[static_cast<std::size_t>(i)] =
          train_group({&br}, bb, inputs, labels, nullptr, plan,
                      RngStream(cfg.seed, kBranchStreamBase + static_cast<std::uint64_t>(i)).split(2),
                      "pretrain branch " + std::to_string(i));
    });
    for (auto& l : logs) out.log.insert(out.log.end(), l.begin(), l.end());
  }
  out.model.validate();
  return out;
}

EnsembleModel finetune(const EnsembleModel& model, const Episode& episode, const ExperimentConfig& cfg, RngStream rng) {
  model.validate();
  const BackboneConfig& bb = model.backbone;
  const int ways = episode.ways();
  require(static_cast<std::size_t>(episode.support.rows()) == episode.support_labels.size(),
          "finetune: support rows and labels differ");

  Matrix support = episode.support;
  std::vector<int> support_labels = episode.support_labels;
  if (use_augmentation(cfg, bb)) {
    std::vector<LabeledImage> items;
    for (Eigen::Index i = 0; i < support.rows(); ++i)
      items.push_back({Image::from_row(support.row(i), bb.channels, bb.height, bb.width),
                       support_labels[static_cast<std::size_t>(i)]});
    RngStream aug = rng.split(99);
    const auto expanded = expand_support(items, CompoundMode::parse(cfg.aug_mode), settings_for(bb), aug);
    support.resize(static_cast<Eigen::Index>(expanded.size()), bb.flat_input());
    support_labels.clear();
    for (std::size_t i = 0; i < expanded.size(); ++i) {
      support.row(static_cast<Eigen::Index>(i)) = fit(expanded[i].image, bb).to_row();
      support_labels.push_back(expanded[i].label);
    }
  }

  EnsembleModel out = model;
  out.num_classes = ways;
  for (auto& br : out.branches) {
    RngStream head = rng.split(100 + static_cast<std::uint64_t>(br.index)).split(0);
    br.params.head = init_dense(br.projection.out_dim(), ways, head);
  }

  TrainPlan plan;
  plan.epochs = cfg.finetune_epochs;
  plan.batch_size = cfg.finetune_batch_size;
  plan.learning_rate = cfg.lr_finetune;
  plan.momentum = cfg.momentum;
  plan.weight_decay = cfg.weight_decay;
  plan.terms.beta = cfg.effective_beta();
  plan.freeze_backbone = cfg.freeze_backbone;
  const Matrix* query = plan.terms.beta > 0.0 ? &episode.query : nullptr;

  if (cfg.shared_backbone && out.branches.size() > 1) {
    std::vector<Branch*> group;
    for (auto& b : out.branches) group.push_back(&b);
    train_group(group, bb, support, support_labels, query, plan, rng.split(100).split(2), "finetune");
  } else {
    for (auto& br : out.branches)
      train_group({&br}, bb, support, support_labels, query, plan,
                  rng.split(100 + static_cast<std::uint64_t>(br.index)).split(2),
                  "finetune branch " + std::to_string(br.index));
  }
  out.validate();
  return out;
}

QueryScores score_queries(const EnsembleModel& model, const Matrix& query, const ExperimentConfig& cfg, RngStream rng) {
  const BackboneConfig& bb = model.backbone;
  QueryScores out;
  const bool tta = use_augmentation(cfg, bb) && cfg.tta_query;
  Matrix variants;
  std::size_t per_item = 1;
  if (tta) {
    const CompoundMode mode = CompoundMode::parse(cfg.aug_mode);
    const AugmentSettings settings = settings_for(bb);
    per_item = mode.size();
    variants.resize(query.rows() * static_cast<Eigen::Index>(per_item), bb.flat_input());
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
      const Image img = Image::from_row(query.row(i), bb.channels, bb.height, bb.width);
      RngStream r = rng.split(static_cast<std::uint64_t>(i));
      for (std::size_t v = 0; v < per_item; ++v)
        variants.row(i * static_cast<Eigen::Index>(per_item) + static_cast<Eigen::Index>(v)) =
            fit(apply_variant(mode.variants[v], img, settings, r), bb).to_row();
    }
  }
  for (const auto& br : model.branches) {
    Matrix feats = branch_features(br, bb, query);
    Matrix scores;
    if (tta) {
      const Matrix all = classify(br.params.head, branch_features(br, bb, variants));
      scores = Matrix::Zero(query.rows(), all.cols());
      for (Eigen::Index i = 0; i < query.rows(); ++i)
        for (std::size_t v = 0; v < per_item; ++v)
          scores.row(i) += all.row(i * static_cast<Eigen::Index>(per_item) + static_cast<Eigen::Index>(v));
      scores /= static_cast<double>(per_item);
    } else {
      scores = classify(br.params.head, feats);
    }
    out.branch_features.push_back(std::move(feats));
    out.branch_scores.push_back(std::move(scores));
  }
  out.scores = average_predictions(out.branch_scores);
  return out;
}

EpisodeOutcome run_episode(const EnsembleModel& pretrained, const Dataset& target, const ExperimentConfig& cfg, int index) {
  const BackboneConfig& bb = pretrained.backbone;
  const RngStream root(cfg.seed, kEpisodeStreamBase + static_cast<std::uint64_t>(index));
  Episode ep = sample_episode(target, cfg.K, cfg.N, cfg.Q, root.split(0));
  ep.support = prepare_inputs(target, ep.support, bb);
  ep.query = prepare_inputs(target, ep.query, bb);
  if (ep.support.cols() != bb.flat_input())
    fail(ErrorCode::data, "target items have " + std::to_string(ep.support.cols()) + " values, backbone expects " +
                              std::to_string(bb.flat_input()));

  const EnsembleModel tuned = finetune(pretrained, ep, cfg, root);
  const QueryScores qs = score_queries(tuned, ep.query, cfg, root.split(3));

  EpisodeOutcome out;
  if (cfg.lp) {
    const LPResult r = lp_predict(qs.branch_features, qs.branch_scores, cfg.lp_config, cfg.lp_on_ensemble);
    out.predictions = r.labels;
    if (r.fallback) out.flags.push_back("lp_fallback: " + r.reason);
    if (!cfg.lp_debug_dir.empty())
      dump_lp_debug(cfg.lp_debug_dir, "episode" + std::to_string(index), qs.branch_features.front(),
                    qs.branch_scores.front(), cfg.lp_config);
  } else {
    out.predictions = argmax_rows(qs.scores);
  }
  out.accuracy = accuracy(out.predictions, ep.query_labels);
  out.query_entropy = loss_entropy(qs.scores);
  return out;
}

EvalReport evaluate_model(const EnsembleModel& pretrained, const Dataset& target, const ExperimentConfig& cfg) {
  cfg.validate();
  target.validate();
  pretrained.validate();
  if (target.is_image() != (pretrained.backbone.mode == InputMode::image) ||
      target.channels != (pretrained.backbone.mode == InputMode::image ? pretrained.backbone.channels
                                                                       : pretrained.backbone.input_dim))
    fail(ErrorCode::data, "target data shape does not match the model");

  EvalReport report;
  report.config = cfg.echo();
  report.config_hash = cfg.hash();
  report.seed = cfg.seed;
  report.per_episode.resize(static_cast<std::size_t>(cfg.episodes));
  parallel_for(cfg.episodes, [&](int e) {
    try {
      const EpisodeOutcome o = run_episode(pretrained, target, cfg, e);
      report.per_episode[static_cast<std::size_t>(e)] = EpisodeResult{e, o.accuracy, o.flags};
    } catch (const Error& err) {
      fail(err.code(), "episode " + std::to_string(e) + ": " + err.what());
    }
  });
  report.finalize();
  return report;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg, const Dataset& source, const Dataset& target) {
  RunArtifacts out;
  out.pretrained = pretrain(source, cfg);
  out.report = evaluate_model(out.pretrained.model, target, cfg);
  return out;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  if (cfg.source_path.empty() || cfg.target_path.empty())
    fail(ErrorCode::config, "source_path and target_path are required");
  const Dataset source = load_dataset(cfg.source_path, cfg.dataset_format, DatasetRole::source);
  const Dataset target = load_dataset(cfg.target_path, cfg.dataset_format, DatasetRole::target);
  return run_experiment(cfg, source, target);
}

std::string pretrain_log_csv(const std::vector<EpochLog>& log, const ExperimentConfig& cfg) {
  const std::string tag = cfg.hash() + "," + std::to_string(cfg.seed) + ",";
  std::ostringstream os;
  os.precision(17);
  os << "config_hash,seed,branch,epoch,loss,ce,bsr\n";
  for (const auto& e : log) os << tag << e.branch << ',' << e.epoch << ',' << e.loss << ',' << e.ce << ',' << e.bsr << '\n';
  return os.str();
}

}  // namespace fte

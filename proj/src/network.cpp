#include "fte/network.hpp"

#include <cmath>

namespace fte {

namespace {

constexpr double kProbFloor = 1e-12;

// (H*W) x C view of a CHW-ordered input row.
Matrix chw_to_hwc(const double* row, int channels, int height, int width) {
  Matrix act(height * width, channels);
  for (int c = 0; c < channels; ++c)
    for (int p = 0; p < height * width; ++p) act(p, c) = row[c * height * width + p];
  return act;
}

Matrix im2col(const Matrix& act, int height, int width) {
  const auto channels = static_cast<int>(act.cols());
  Matrix patches = Matrix::Zero(height * width, channels * 9);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int row = y * width + x;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= width) continue;
          for (int c = 0; c < channels; ++c) patches(row, c * 9 + ky * 3 + kx) = act(sy * width + sx, c);
        }
      }
    }
  }
  return patches;
}

Matrix col2im(const Matrix& d_patches, int channels, int height, int width) {
  Matrix d_act = Matrix::Zero(height * width, channels);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int row = y * width + x;
      for (int ky = 0; ky < 3; ++ky) {
        const int sy = y + ky - 1;
        if (sy < 0 || sy >= height) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int sx = x + kx - 1;
          if (sx < 0 || sx >= width) continue;
          for (int c = 0; c < channels; ++c) d_act(sy * width + sx, c) += d_patches(row, c * 9 + ky * 3 + kx);
        }
      }
    }
  }
  return d_act;
}

Matrix avg_pool(const Matrix& act, int height, int width) {
  const int h2 = height / 2;
  const int w2 = width / 2;
  Matrix out(h2 * w2, act.cols());
  for (int y = 0; y < h2; ++y)
    for (int x = 0; x < w2; ++x)
      out.row(y * w2 + x) = 0.25 * (act.row(2 * y * width + 2 * x) + act.row(2 * y * width + 2 * x + 1) +
                                    act.row((2 * y + 1) * width + 2 * x) + act.row((2 * y + 1) * width + 2 * x + 1));
  return out;
}

Matrix avg_pool_backward(const Matrix& d_out, int height, int width) {
  const int h2 = height / 2;
  const int w2 = width / 2;
  Matrix d_act = Matrix::Zero(height * width, d_out.cols());
  for (int y = 0; y < h2; ++y) {
    for (int x = 0; x < w2; ++x) {
      const auto g = 0.25 * d_out.row(y * w2 + x);
      d_act.row(2 * y * width + 2 * x) += g;
      d_act.row(2 * y * width + 2 * x + 1) += g;
      d_act.row((2 * y + 1) * width + 2 * x) += g;
      d_act.row((2 * y + 1) * width + 2 * x + 1) += g;
    }
  }
  return d_act;
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& d_out, const Matrix& pre) {
  return (pre.array() > 0.0).select(d_out, 0.0);
}

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

// d(entropy)/d(logits) for one soft-max batch, scaled by `scale`.
Matrix entropy_logit_grad(const Matrix& probs, double scale) {
  Matrix d(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double row_plogp = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) row_plogp += plogp(probs(i, c));
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      d(i, c) = p > 0.0 ? -scale * p * (std::log(p) - row_plogp) : 0.0;
    }
  }
  return d;
}

void check_batch(const TrainBatch& batch, int num_classes) {
  require(batch.inputs.rows() >= 1, "train batch must contain at least one row");
  require(static_cast<std::size_t>(batch.inputs.rows()) == batch.labels.size(), "train batch: label count does not match inputs");
  for (int y : batch.labels)
    require(y >= 0 && y < num_classes, "train batch: label " + std::to_string(y) + " out of range");
}

}  // namespace

BackboneConfig BackboneConfig::vector_mode(int input_dim, std::vector<int> hidden, int feature_dim) {
  BackboneConfig cfg;
  cfg.mode = InputMode::vector;
  cfg.input_dim = input_dim;
  cfg.hidden = std::move(hidden);
  cfg.feature_dim = feature_dim;
  return cfg;
}

BackboneConfig BackboneConfig::image_mode(int channels, int height, int width, std::vector<int> conv_channels,
                                          std::vector<int> hidden, int feature_dim) {
  BackboneConfig cfg;
  cfg.mode = InputMode::image;
  cfg.channels = channels;
  cfg.height = height;
  cfg.width = width;
  cfg.conv_channels = std::move(conv_channels);
  cfg.hidden = std::move(hidden);
  cfg.feature_dim = feature_dim;
  return cfg;
}

int BackboneConfig::flat_input() const {
  return mode == InputMode::vector ? input_dim : channels * height * width;
}

int BackboneConfig::conv_output_dim() const {
  if (mode == InputMode::vector) return input_dim;
  int h = height;
  int w = width;
  int c = channels;
  for (int out : conv_channels) {
    h /= 2;
    w /= 2;
    c = out;
  }
  return h * w * c;
}

void BackboneConfig::validate() const {
  if (feature_dim < 2) fail(ErrorCode::config, "backbone: feature_dim must be >= 2");
  for (int w : hidden)
    if (w < 1) fail(ErrorCode::config, "backbone: hidden widths must be >= 1");
  if (mode == InputMode::vector) {
    if (input_dim < 1) fail(ErrorCode::config, "backbone: input_dim must be >= 1");
    if (!conv_channels.empty()) fail(ErrorCode::config, "backbone: convolution blocks need image input");
    return;
  }
  if (channels < 1 || height < 1 || width < 1) fail(ErrorCode::config, "backbone: image shape must be positive");
  int h = height;
  int w = width;
  for (int out : conv_channels) {
    if (out < 1) fail(ErrorCode::config, "backbone: conv channel counts must be >= 1");
    if (h < 2 || w < 2) fail(ErrorCode::config, "backbone: image too small for the convolution stack");
    h /= 2;
    w /= 2;
  }
}

NetParams NetParams::zeros_like(const NetParams& other) {
  NetParams z = other;
  zip_params([](bool, auto& t) { t.setZero(); }, z);
  return z;
}

std::size_t parameter_count(const NetParams& params) {
  std::size_t n = 0;
  zip_params([&](bool, const auto& t) { n += static_cast<std::size_t>(t.size()); }, params);
  return n;
}

bool all_finite(const NetParams& params) {
  bool ok = true;
  zip_params([&](bool, const auto& t) { ok = ok && t.allFinite(); }, params);
  return ok;
}

DenseLayer init_dense(int in, int out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer layer{Matrix(out, in), Vector::Zero(out)};
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = rng.uniform(-limit, limit);
  return layer;
}

NetParams init_params(const BackboneConfig& cfg, int projected_dim, int num_classes, RngStream& rng) {
  cfg.validate();
  require(projected_dim >= 1 && num_classes >= 1, "init_params: projected_dim and num_classes must be positive");
  NetParams params;
  int in_channels = cfg.channels;
  for (int out : cfg.conv_channels) {
    const double limit = std::sqrt(6.0 / static_cast<double>((in_channels + out) * 9));
    ConvLayer conv{Matrix(out, in_channels * 9), Vector::Zero(out)};
    for (Eigen::Index i = 0; i < conv.weight.size(); ++i) conv.weight.data()[i] = rng.uniform(-limit, limit);
    params.conv.push_back(std::move(conv));
    in_channels = out;
  }
  int in = cfg.conv_output_dim();
  for (int width : cfg.hidden) {
    params.backbone.push_back(init_dense(in, width, rng));
    in = width;
  }
  params.backbone.push_back(init_dense(in, cfg.feature_dim, rng));
  params.head = init_dense(projected_dim, num_classes, rng);
  return params;
}

void check_shapes(const NetParams& params, const BackboneConfig& cfg) {
  require(params.conv.size() == cfg.conv_channels.size(), "params: conv layer count does not match config");
  require(params.backbone.size() == cfg.hidden.size() + 1, "params: dense layer count does not match config");
  int in_channels = cfg.channels;
  for (std::size_t i = 0; i < params.conv.size(); ++i) {
    require(params.conv[i].weight.rows() == cfg.conv_channels[i] && params.conv[i].weight.cols() == in_channels * 9 &&
                params.conv[i].bias.size() == cfg.conv_channels[i],
            "params: conv layer " + std::to_string(i) + " has the wrong shape");
    in_channels = cfg.conv_channels[i];
  }
  Eigen::Index in = cfg.conv_output_dim();
  for (std::size_t i = 0; i < params.backbone.size(); ++i) {
    const Eigen::Index out = i < cfg.hidden.size() ? cfg.hidden[i] : cfg.feature_dim;
    require(params.backbone[i].weight.rows() == out && params.backbone[i].weight.cols() == in &&
                params.backbone[i].bias.size() == out,
            "params: dense layer " + std::to_string(i) + " has the wrong shape");
    in = out;
  }
  require(params.head.bias.size() == params.head.weight.rows(), "params: classifier bias has the wrong shape");
}

Matrix forward_features(const NetParams& params, const BackboneConfig& cfg, const Matrix& inputs, ForwardCache* cache) {
  if (inputs.cols() != cfg.flat_input())
    fail(ErrorCode::contract, "forward_features: input width " + std::to_string(inputs.cols()) + " does not match backbone input " +
                                  std::to_string(cfg.flat_input()));
  check_shapes(params, cfg);
  const Eigen::Index b = inputs.rows();
  if (cache) *cache = ForwardCache{};

  Matrix x;
  if (cfg.mode == InputMode::image && !params.conv.empty()) {
    const int nblocks = static_cast<int>(params.conv.size());
    if (cache) cache->conv.resize(static_cast<std::size_t>(nblocks));
    x.resize(b, cfg.conv_output_dim());
    for (Eigen::Index s = 0; s < b; ++s) {
      int h = cfg.height;
      int w = cfg.width;
      Matrix act = chw_to_hwc(inputs.row(s).data(), cfg.channels, h, w);
      for (int k = 0; k < nblocks; ++k) {
        const ConvLayer& conv = params.conv[static_cast<std::size_t>(k)];
        Matrix patches = im2col(act, h, w);
        Matrix pre = patches * conv.weight.transpose();
        pre.rowwise() += conv.bias.transpose();
        act = avg_pool(relu(pre), h, w);
        if (cache) {
          auto& blk = cache->conv[static_cast<std::size_t>(k)];
          blk.height = h;
          blk.width = w;
          blk.patches.push_back(std::move(patches));
          blk.pre.push_back(std::move(pre));
        }
        h /= 2;
        w /= 2;
      }
      x.row(s) = Eigen::Map<const Eigen::RowVectorXd>(act.data(), act.size());
    }
  } else {
    x = inputs;
  }

  const std::size_t nlayers = params.backbone.size();
  for (std::size_t l = 0; l < nlayers; ++l) {
    const DenseLayer& layer = params.backbone[l];
    Matrix pre = x * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    if (cache) cache->dense_inputs.push_back(x);
    x = l + 1 < nlayers ? relu(pre) : pre;
    if (cache) cache->dense_pre.push_back(std::move(pre));
  }
  return x;
}

void backward_features(const NetParams& params, const BackboneConfig& cfg, const ForwardCache& cache,
                       const Matrix& d_features, NetParams& grads) {
  const std::size_t nlayers = params.backbone.size();
  require(cache.dense_inputs.size() == nlayers, "backward_features: cache does not match parameters");
  Matrix d = d_features;
  for (std::size_t l = nlayers; l-- > 0;) {
    if (l + 1 < nlayers) d = relu_backward(d, cache.dense_pre[l]);
    grads.backbone[l].weight.noalias() += d.transpose() * cache.dense_inputs[l];
    grads.backbone[l].bias += d.colwise().sum().transpose();
    if (l > 0 || !params.conv.empty()) d = d * params.backbone[l].weight;
  }
  if (params.conv.empty()) return;

  const int nblocks = static_cast<int>(params.conv.size());
  const Eigen::Index b = d.rows();
  for (Eigen::Index s = 0; s < b; ++s) {
    const auto& last = cache.conv.back();
    const int out_c = cfg.conv_channels.back();
    Matrix d_act = Eigen::Map<const Matrix>(d.row(s).data(), (last.height / 2) * (last.width / 2), out_c);
    for (int k = nblocks; k-- > 0;) {
      const auto& blk = cache.conv[static_cast<std::size_t>(k)];
      const ConvLayer& conv = params.conv[static_cast<std::size_t>(k)];
      Matrix d_pre = relu_backward(avg_pool_backward(d_act, blk.height, blk.width), blk.pre[static_cast<std::size_t>(s)]);
      auto& g = grads.conv[static_cast<std::size_t>(k)];
      g.weight.noalias() += d_pre.transpose() * blk.patches[static_cast<std::size_t>(s)];
      g.bias += d_pre.colwise().sum().transpose();
      if (k > 0) {
        const int in_c = static_cast<int>(conv.weight.cols() / 9);
        d_act = col2im(d_pre * conv.weight, in_c, blk.height, blk.width);
      }
    }
  }
}

Matrix logits(const DenseLayer& head, const Matrix& features) {
  if (features.cols() != head.weight.cols())
    fail(ErrorCode::contract, "classify: feature width " + std::to_string(features.cols()) + " does not match classifier input " +
                                  std::to_string(head.weight.cols()));
  Matrix z = features * head.weight.transpose();
  z.rowwise() += head.bias.transpose();
  return z;
}

Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double top = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - top).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix classify(const DenseLayer& head, const Matrix& features) { return softmax_rows(logits(head, features)); }

double loss_ce(const Matrix& probs, std::span<const int> labels) {
  require(static_cast<std::size_t>(probs.rows()) == labels.size(), "loss_ce: label count does not match rows");
  require(probs.rows() >= 1, "loss_ce: empty batch");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < probs.rows(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= probs.cols()) fail(ErrorCode::contract, "loss_ce: label " + std::to_string(y) + " out of range");
    acc -= std::log(std::max(probs(j, y), kProbFloor));
  }
  return acc / static_cast<double>(probs.rows());
}

double loss_bsr(const Matrix& features) { return features.squaredNorm(); }

double loss_entropy(const Matrix& probs) {
  if (probs.rows() == 0) return 0.0;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) acc += plogp(probs.data()[i]);
  return -acc / static_cast<double>(probs.rows());
}

namespace {

LossBreakdown run_loss(const NetParams& params, const BackboneConfig& cfg, const Matrix& projection, const TrainBatch& batch,
                       const Matrix* query, const LossTerms& terms, NetParams* grads) {
  require(projection.cols() == cfg.feature_dim, "loss: projection width does not match feature_dim");
  check_batch(batch, params.num_classes());
  if (terms.beta > 0.0) require(query != nullptr && query->rows() >= 1, "loss: entropy term needs a non-empty query batch");
  if (grads) *grads = NetParams::zeros_like(params);

  LossBreakdown out;
  ForwardCache cache;
  const Matrix feats = forward_features(params, cfg, batch.inputs, grads ? &cache : nullptr);
  const Matrix projected = feats * projection.transpose();
  const Matrix probs = classify(params.head, projected);
  out.ce = loss_ce(probs, batch.labels);
  if (terms.lambda > 0.0) out.bsr = loss_bsr(projected);

  if (grads) {
    Matrix d_logits = probs;
    for (Eigen::Index j = 0; j < d_logits.rows(); ++j) d_logits(j, batch.labels[static_cast<std::size_t>(j)]) -= 1.0;
    d_logits /= static_cast<double>(probs.rows());
    grads->head.weight.noalias() += d_logits.transpose() * projected;
    grads->head.bias += d_logits.colwise().sum().transpose();
    Matrix d_projected = d_logits * params.head.weight;
    if (terms.lambda > 0.0) d_projected += 2.0 * terms.lambda * projected;
    backward_features(params, cfg, cache, d_projected * projection, *grads);
  }

  if (terms.beta > 0.0) {
    ForwardCache qcache;
    const Matrix qfeats = forward_features(params, cfg, *query, grads ? &qcache : nullptr);
    const Matrix qprojected = qfeats * projection.transpose();
    const Matrix qprobs = classify(params.head, qprojected);
    out.entropy = loss_entropy(qprobs);
    if (grads) {
      const Matrix d_logits = entropy_logit_grad(qprobs, terms.beta / static_cast<double>(qprobs.rows()));
      grads->head.weight.noalias() += d_logits.transpose() * qprojected;
      grads->head.bias += d_logits.colwise().sum().transpose();
      backward_features(params, cfg, qcache, (d_logits * params.head.weight) * projection, *grads);
    }
  }
  out.total = out.ce + terms.lambda * out.bsr + terms.beta * out.entropy;
  return out;
}

}  // namespace

LossBreakdown loss_value(const NetParams& params, const BackboneConfig& cfg, const Matrix& projection, const TrainBatch& batch,
                         const Matrix* query, const LossTerms& terms) {
  return run_loss(params, cfg, projection, batch, query, terms, nullptr);
}

LossBreakdown backward(const NetParams& params, const BackboneConfig& cfg, const Matrix& projection, const TrainBatch& batch,
                       const Matrix* query, const LossTerms& terms, NetParams& grads) {
  return run_loss(params, cfg, projection, batch, query, terms, &grads);
}

OptState OptState::for_params(const NetParams& params, double learning_rate, double momentum, double weight_decay) {
  return OptState{learning_rate, momentum, weight_decay, NetParams::zeros_like(params)};
}

void sgd_step(NetParams& params, const NetParams& grads, OptState& opt) {
  zip_params(
      [&](bool is_weight, auto& w, const auto& dw, auto& v) {
        require(w.rows() == dw.rows() && w.cols() == dw.cols() && v.rows() == w.rows() && v.cols() == w.cols(),
                "sgd_step: gradient shape does not match parameters");
        v = opt.momentum * v + dw;
        if (is_weight && opt.weight_decay != 0.0) v += opt.weight_decay * w;
        w -= opt.learning_rate * v;
      },
      params, grads, opt.velocity);
}

}  // namespace fte

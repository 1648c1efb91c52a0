#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fte/linalg.hpp"
#include "fte/rng.hpp"

namespace fte {

enum class InputMode { vector, image };

// Desk-scale stand-in for the CNN feature extractor.
//
// Vector mode: input_dim -> hidden... -> feature_dim (rectifier between layers,
// linear output). Image mode prepends one block per entry of conv_channels:
// 3x3 convolution (zero padding 1), rectifier, 2x2 average pooling. Pooled
// activations are flattened in (row, col, channel) order.
struct BackboneConfig {
  InputMode mode = InputMode::vector;
  int input_dim = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<int> conv_channels;
  std::vector<int> hidden;
  int feature_dim = 0;

  static BackboneConfig vector_mode(int input_dim, std::vector<int> hidden, int feature_dim);
  static BackboneConfig image_mode(int channels, int height, int width, std::vector<int> conv_channels,
                                   std::vector<int> hidden, int feature_dim);

  int flat_input() const;
  // Width of the flattened conv stack output (== flat_input() without convs).
  int conv_output_dim() const;
  void validate() const;

  bool operator==(const BackboneConfig&) const = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct ConvLayer {
  Matrix weight;  // out_channels x (in_channels * 9), column = c * 9 + ky * 3 + kx
  Vector bias;
};

struct NetParams {
  std::vector<ConvLayer> conv;
  std::vector<DenseLayer> backbone;  // last entry maps to feature_dim
  DenseLayer head;                   // classifier, num_classes x projected dim

  int num_classes() const { return static_cast<int>(head.weight.rows()); }

  static NetParams zeros_like(const NetParams& other);
};

// Calls fn(is_weight, tensors...) for each parameter tensor, zipped across
// several NetParams of identical structure, in declaration order:
// conv layers, backbone dense layers, head; weight before bias.
template <class Fn, class First, class... Rest>
void zip_params(Fn&& fn, First& first, Rest&... rest) {
  for (std::size_t i = 0; i < first.conv.size(); ++i) {
    fn(true, first.conv[i].weight, rest.conv[i].weight...);
    fn(false, first.conv[i].bias, rest.conv[i].bias...);
  }
  for (std::size_t i = 0; i < first.backbone.size(); ++i) {
    fn(true, first.backbone[i].weight, rest.backbone[i].weight...);
    fn(false, first.backbone[i].bias, rest.backbone[i].bias...);
  }
  fn(true, first.head.weight, rest.head.weight...);
  fn(false, first.head.bias, rest.head.bias...);
}

std::size_t parameter_count(const NetParams& params);
bool all_finite(const NetParams& params);

// Glorot-uniform weights, zero biases.
DenseLayer init_dense(int in, int out, RngStream& rng);
NetParams init_params(const BackboneConfig& cfg, int projected_dim, int num_classes, RngStream& rng);
void check_shapes(const NetParams& params, const BackboneConfig& cfg);

// Intermediate values kept by the forward pass for backpropagation.
struct ForwardCache {
  struct ConvBlock {
    std::vector<Matrix> patches;  // per sample: (H*W) x (Cin*9)
    std::vector<Matrix> pre;      // per sample: (H*W) x Cout
    int height = 0;
    int width = 0;
  };
  std::vector<ConvBlock> conv;
  std::vector<Matrix> dense_inputs;  // input to each backbone dense layer
  std::vector<Matrix> dense_pre;     // pre-activation of each backbone dense layer
};

Matrix forward_features(const NetParams& params, const BackboneConfig& cfg, const Matrix& inputs,
                        ForwardCache* cache = nullptr);

// Accumulates backbone gradients for the upstream gradient d_features into grads.
void backward_features(const NetParams& params, const BackboneConfig& cfg, const ForwardCache& cache,
                       const Matrix& d_features, NetParams& grads);

Matrix logits(const DenseLayer& head, const Matrix& features);
Matrix softmax_rows(const Matrix& logits);
Matrix classify(const DenseLayer& head, const Matrix& features);

double loss_ce(const Matrix& probs, std::span<const int> labels);
// Sum of squared singular values of the batch feature matrix, computed as its
// squared Frobenius norm.
double loss_bsr(const Matrix& features);
double loss_entropy(const Matrix& probs);

struct TrainBatch {
  Matrix inputs;
  std::vector<int> labels;
};

// Which terms of  ce(support) + lambda * bsr(E f) + beta * ent(query)  are active.
struct LossTerms {
  double lambda = 0.0;
  double beta = 0.0;
};

struct LossBreakdown {
  double ce = 0.0;
  double bsr = 0.0;
  double entropy = 0.0;
  double total = 0.0;
};

// Composite loss for a branch whose classifier sees projection * features.
// query may be null; it is required when terms.beta > 0.
LossBreakdown loss_value(const NetParams& params, const BackboneConfig& cfg, const Matrix& projection,
                         const TrainBatch& batch, const Matrix* query, const LossTerms& terms);

// Exact gradients of loss_value with respect to every parameter.
LossBreakdown backward(const NetParams& params, const BackboneConfig& cfg, const Matrix& projection,
                       const TrainBatch& batch, const Matrix* query, const LossTerms& terms, NetParams& grads);

struct OptState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  NetParams velocity;

  static OptState for_params(const NetParams& params, double learning_rate, double momentum, double weight_decay);
};

// v <- momentum * v + g + weight_decay * w (weights only);  w <- w - lr * v
void sgd_step(NetParams& params, const NetParams& grads, OptState& opt);

}  // namespace fte

#include <gtest/gtest.h>

#include <cmath>

#include "fte/ensemble.hpp"
#include "fte/network.hpp"

using namespace fte;

namespace {

Matrix gaussian(int r, int c, RngStream& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Direct-loop reference for one sample: conv blocks then dense layers.
Vector naive_features(const NetParams& p, const BackboneConfig& cfg, const Eigen::RowVectorXd& input) {
  int c = cfg.channels, h = cfg.height, w = cfg.width;
  std::vector<double> act(input.data(), input.data() + input.size());  // CHW
  for (const ConvLayer& conv : p.conv) {
    const int co = static_cast<int>(conv.weight.rows());
    std::vector<double> out(static_cast<std::size_t>(co * h * w));
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double s = conv.bias(o);
          for (int ci = 0; ci < c; ++ci)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int yy = y + ky - 1, xx = x + kx - 1;
                if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                s += conv.weight(o, ci * 9 + ky * 3 + kx) * act[static_cast<std::size_t>((ci * h + yy) * w + xx)];
              }
          out[static_cast<std::size_t>((o * h + y) * w + x)] = std::max(0.0, s);
        }
    const int ph = h / 2, pw = w / 2;
    std::vector<double> pooled(static_cast<std::size_t>(co * ph * pw));
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
          double s = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) s += out[static_cast<std::size_t>((o * h + 2 * y + dy) * w + 2 * x + dx)];
          pooled[static_cast<std::size_t>((o * ph + y) * pw + x)] = s / 4.0;
        }
    act = pooled;
    c = co;
    h = ph;
    w = pw;
  }
  Vector x(static_cast<Eigen::Index>(act.size()));
  if (!p.conv.empty()) {
    // flatten in (row, col, channel) order
    Eigen::Index k = 0;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch) x(k++) = act[static_cast<std::size_t>((ch * h + y) * w + xx)];
  } else {
    for (std::size_t i = 0; i < act.size(); ++i) x(static_cast<Eigen::Index>(i)) = act[i];
  }
  for (std::size_t l = 0; l < p.backbone.size(); ++l) {
    Vector z = p.backbone[l].weight * x + p.backbone[l].bias;
    if (l + 1 < p.backbone.size()) z = z.cwiseMax(0.0);
    x = z;
  }
  return x;
}

double fd_worst(NetParams params, const BackboneConfig& cfg, const Matrix& proj, const TrainBatch& batch, const Matrix& query,
                const LossTerms& terms) {
  NetParams grads;
  backward(params, cfg, proj, batch, &query, terms, grads);
  const double h = 1e-5;
  double worst = 0.0;
  zip_params(
      [&](bool, auto& w, const auto& g) {
        for (Eigen::Index i = 0; i < w.size(); ++i) {
          const double keep = w.data()[i];
          w.data()[i] = keep + h;
          const double up = loss_value(params, cfg, proj, batch, &query, terms).total;
          w.data()[i] = keep - h;
          const double down = loss_value(params, cfg, proj, batch, &query, terms).total;
          w.data()[i] = keep;
          const double num = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(num - g.data()[i]) / std::max({std::abs(num), std::abs(g.data()[i]), 1e-6}));
        }
      },
      params, grads);
  return worst;
}

}  // namespace

TEST(Network, ConfigValidation) {
  EXPECT_THROW(BackboneConfig::vector_mode(0, {4}, 3).validate(), Error);
  EXPECT_THROW(BackboneConfig::image_mode(3, 1, 1, {4}, {}, 3).validate(), Error);
  const auto cfg = BackboneConfig::image_mode(3, 8, 6, {4, 5}, {7}, 3);
  EXPECT_EQ(cfg.flat_input(), 3 * 8 * 6);
  EXPECT_EQ(cfg.conv_output_dim(), 5 * 2 * 1);
}

TEST(Network, ForwardMatchesDirectLoops) {
  RngStream rng(1, 0);
  for (const auto& cfg : {BackboneConfig::vector_mode(5, {6, 4}, 3), BackboneConfig::image_mode(2, 6, 5, {3, 2}, {4}, 3)}) {
    NetParams p = init_params(cfg, 3, 2, rng);
    for (auto& l : p.backbone) l.bias = gaussian(static_cast<int>(l.bias.size()), 1, rng);
    for (auto& l : p.conv) l.bias = gaussian(static_cast<int>(l.bias.size()), 1, rng);
    const Matrix in = gaussian(3, cfg.flat_input(), rng);
    const Matrix f = forward_features(p, cfg, in);
    for (int s = 0; s < 3; ++s) EXPECT_LT((f.row(s).transpose() - naive_features(p, cfg, in.row(s))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Network, InitIsGlorotUniformWithZeroBias) {
  RngStream rng(2, 0);
  const DenseLayer l = init_dense(30, 20, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  EXPECT_LE(l.weight.cwiseAbs().maxCoeff(), bound);
  EXPECT_GT(l.weight.cwiseAbs().maxCoeff(), 0.8 * bound);
  EXPECT_EQ(l.bias, Vector::Zero(20));
}

TEST(Network, SoftmaxAndLosses) {
  Matrix z(2, 3);
  z << 1000, 1000, 1000, 0, std::log(2.0), std::log(3.0);
  const Matrix p = softmax_rows(z);
  EXPECT_NEAR(p(0, 1), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(1, 2), 0.5, 1e-15);
  const std::vector<int> labels = {0, 2};
  EXPECT_NEAR(loss_ce(p, labels), (std::log(3.0) + std::log(2.0)) / 2.0, 1e-12);
  EXPECT_NEAR(loss_entropy(p.topRows(1)), std::log(3.0), 1e-12);
  Matrix onehot = Matrix::Zero(1, 3);
  onehot(0, 1) = 1.0;
  EXPECT_EQ(loss_entropy(onehot), 0.0);
  const std::vector<int> bad = {0, 3};
  EXPECT_THROW(loss_ce(p, bad), Error);
  Matrix f(2, 2);
  f << 1, 2, 3, 4;
  EXPECT_EQ(loss_bsr(f), 30.0);
}

TEST(Network, GradientsOddImageAndDeepStack) {
  RngStream rng(3, 0);
  const auto cfg = BackboneConfig::image_mode(2, 5, 7, {3, 2}, {5, 4}, 4);
  const Projection proj = make_projection(4, rng.split(9));
  const NetParams p = init_params(cfg, 3, 3, rng);
  TrainBatch batch{gaussian(4, cfg.flat_input(), rng), {0, 1, 2, 1}};
  const Matrix q = gaussian(3, cfg.flat_input(), rng);
  EXPECT_LE(fd_worst(p, cfg, proj.matrix, batch, q, {0.05, 0.1}), 1e-4);
}

TEST(Network, EntropyNeedsQuery) {
  RngStream rng(4, 0);
  const auto cfg = BackboneConfig::vector_mode(3, {}, 2);
  const NetParams p = init_params(cfg, 2, 2, rng);
  TrainBatch batch{gaussian(2, 3, rng), {0, 1}};
  EXPECT_THROW(loss_value(p, cfg, Matrix::Identity(2, 2), batch, nullptr, {0.0, 0.1}), Error);
}

TEST(Network, SgdStepHandComputed) {
  NetParams p;
  p.backbone.push_back({Matrix::Constant(1, 1, 2.0), Vector::Constant(1, 1.0)});
  p.head = {Matrix::Constant(1, 1, 1.0), Vector::Zero(1)};
  NetParams g = NetParams::zeros_like(p);
  g.backbone[0].weight(0, 0) = 0.5;
  g.backbone[0].bias(0) = 0.5;
  OptState opt = OptState::for_params(p, 0.1, 0.9, 0.01);
  sgd_step(p, g, opt);
  // weight: v = 0.5 + 0.01 * 2 = 0.52; w = 2 - 0.052
  EXPECT_NEAR(p.backbone[0].weight(0, 0), 1.948, 1e-15);
  // bias: no decay
  EXPECT_NEAR(p.backbone[0].bias(0), 0.95, 1e-15);
  sgd_step(p, g, opt);
  // v = 0.9 * 0.52 + 0.5 + 0.01 * 1.948
  EXPECT_NEAR(p.backbone[0].weight(0, 0), 1.948 - 0.1 * (0.468 + 0.5 + 0.01948), 1e-14);
}

TEST(Network, TrainingReducesLoss) {
  RngStream rng(5, 0);
  const auto cfg = BackboneConfig::vector_mode(4, {8}, 4);
  NetParams p = init_params(cfg, 4, 2, rng);
  TrainBatch batch{gaussian(20, 4, rng), {}};
  for (int i = 0; i < 20; ++i) batch.labels.push_back(batch.inputs(i, 0) > 0 ? 1 : 0);
  OptState opt = OptState::for_params(p, 0.1, 0.9, 0.0);
  const Matrix id = Matrix::Identity(4, 4);
  const double before = loss_value(p, cfg, id, batch, nullptr, {}).total;
  NetParams g;
  for (int s = 0; s < 100; ++s) {
    backward(p, cfg, id, batch, nullptr, {}, g);
    sgd_step(p, g, opt);
  }
  EXPECT_LT(loss_value(p, cfg, id, batch, nullptr, {}).total, 0.5 * before);
}

TEST(Network, ZipParamsOrder) {
  RngStream rng(6, 0);
  const auto cfg = BackboneConfig::image_mode(1, 4, 4, {2}, {3}, 2);
  const NetParams p = init_params(cfg, 2, 2, rng);
  std::vector<std::pair<bool, Eigen::Index>> seen;
  zip_params([&](bool w, const auto& t) { seen.emplace_back(w, t.size()); }, p);
  ASSERT_EQ(seen.size(), 8u);
  EXPECT_EQ(seen[0], std::make_pair(true, Eigen::Index{2 * 9}));
  EXPECT_EQ(seen[1], std::make_pair(false, Eigen::Index{2}));
  EXPECT_EQ(seen[6], std::make_pair(true, Eigen::Index{4}));
  EXPECT_EQ(parameter_count(p), std::size_t{18 + 2 + 8 * 3 + 3 + 3 * 2 + 2 + 4 + 2});
}

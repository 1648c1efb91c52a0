#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fte/ensemble.hpp"
#include "fte/labelprop.hpp"

using namespace fte;

namespace {

Matrix gaussian(int r, int c, RngStream& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Brute-force graph: explicit neighbour sets, no sorting helpers shared with the library.
Matrix naive_weights(const Matrix& x, int k) {
  const int n = static_cast<int>(x.rows());
  Matrix d(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) d(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  Matrix adj = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    std::vector<bool> taken(static_cast<std::size_t>(n), false);
    taken[static_cast<std::size_t>(i)] = true;
    for (int r = 0; r < k; ++r) {
      int best = -1;
      for (int j = 0; j < n; ++j)
        if (!taken[static_cast<std::size_t>(j)] && (best < 0 || d(i, j) < d(i, best))) best = j;
      taken[static_cast<std::size_t>(best)] = true;
      adj(i, best) = adj(best, i) = 1;
    }
  }
  double sum = 0;
  int count = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (adj(i, j) > 0) {
        sum += d(i, j);
        ++count;
      }
  const double g2 = sum / count;
  Matrix w = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (adj(i, j) > 0) w(i, j) = std::exp(-d(i, j) / (2 * g2));
  return w;
}

}  // namespace

TEST(Ensemble, ProjectionShapeAndProvenance) {
  const Projection p = make_projection(6, RngStream(9, 4));
  EXPECT_EQ(p.out_dim(), 5);
  EXPECT_EQ(p.in_dim(), 6);
  EXPECT_EQ(p.seed, 9u);
  EXPECT_EQ(p.stream, 4u);
  EXPECT_LT(max_abs(Matrix(p.matrix * p.matrix.transpose() - Matrix::Identity(5, 5))), 1e-12);
  EXPECT_THROW(make_projection(1, RngStream(1, 1)), Error);
}

TEST(Ensemble, ProjectionIsEigenbasisOfTheSeedMatrix) {
  RngStream rng(9, 4);
  const Matrix z = random_symmetric(6, rng);
  const Matrix e = make_projection(6, RngStream(9, 4)).matrix;
  // Each row v satisfies Z v = lambda v.
  for (int r = 0; r < 5; ++r) {
    const Vector v = e.row(r).transpose();
    const double lambda = v.dot(z * v);
    EXPECT_LT((z * v - lambda * v).norm(), 1e-10);
  }
}

TEST(Ensemble, TransformAndAverage) {
  const Projection id = identity_projection(3);
  Matrix f(2, 3);
  f << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(transform(id, f), f);
  EXPECT_THROW(transform(id, Matrix::Zero(2, 4)), Error);
  Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0, 1;
  const Matrix avg = average_predictions({a, b});
  EXPECT_EQ(avg(0, 0), 0.5);
  EXPECT_EQ(avg(0, 1), 0.5);
  EXPECT_THROW(average_predictions({}), Error);
}

TEST(Ensemble, PredictAveragesBranches) {
  RngStream rng(2, 2);
  EnsembleModel m;
  m.backbone = BackboneConfig::vector_mode(4, {5}, 4);
  m.num_classes = 3;
  for (int i = 0; i < 3; ++i) {
    Branch b;
    b.index = i;
    b.projection = make_projection(4, rng.split(static_cast<std::uint64_t>(i)));
    RngStream init = rng.split(10 + static_cast<std::uint64_t>(i));
    b.params = init_params(m.backbone, 3, 3, init);
    m.branches.push_back(b);
  }
  const Matrix x = gaussian(5, 4, rng);
  Matrix expected = Matrix::Zero(5, 3);
  for (const auto& b : m.branches) expected += branch_predict(b, m.backbone, x) / 3.0;
  EXPECT_LT(max_abs(Matrix(ensemble_predict(m, x) - expected)), 1e-15);
}

TEST(LabelProp, ConfidenceFilterKeepsTopPerColumn) {
  Matrix s(5, 2);
  s << 0.9, 0.1, 0.5, 0.5, 0.5, 0.4, 0.1, 0.9, 0.2, 0.8;
  const Matrix f = confidence_filter(s, 0.4);  // keep 2 per column
  Matrix expect(5, 2);
  expect << 0.9, 0, 0.5, 0, 0, 0, 0, 0.9, 0, 0.8;
  EXPECT_EQ(f, expect);
  // ceil(0.2 * 5) = 1
  EXPECT_EQ((confidence_filter(s, 0.2).array() != 0).count(), 2);
  EXPECT_EQ(confidence_filter(s, 1.0), s);
}

TEST(LabelProp, GraphMatchesBruteForce) {
  RngStream rng(3, 3);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix x = gaussian(30, 4, rng);
    LPConfig cfg;
    cfg.k = 3 + trial;
    const AffinityGraph g = knn_graph(x, cfg);
    EXPECT_LT(max_abs(Matrix(g.weights - naive_weights(x, cfg.k))), 1e-14);
    EXPECT_EQ(g.weights, g.weights.transpose());
    EXPECT_EQ(g.weights.diagonal(), Vector::Zero(30));
  }
}

TEST(LabelProp, FixedGammaUsed) {
  Matrix x(3, 1);
  x << 0, 1, 3;
  LPConfig cfg;
  cfg.k = 1;
  cfg.gamma2 = 0.5;
  const AffinityGraph g = knn_graph(x, cfg);
  EXPECT_DOUBLE_EQ(g.weights(0, 1), std::exp(-1.0));
  EXPECT_DOUBLE_EQ(g.weights(1, 2), std::exp(-4.0));
  EXPECT_EQ(g.weights(0, 2), 0.0);
}

TEST(LabelProp, LaplacianIsSymmetricNormalised) {
  RngStream rng(4, 4);
  const Matrix x = gaussian(20, 3, rng);
  LPConfig cfg;
  const AffinityGraph g = knn_graph(x, cfg);
  const Matrix l = normalized_laplacian(g);
  EXPECT_EQ(l, l.transpose());
  const Vector d = g.weights.rowwise().sum();
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) EXPECT_NEAR(l(i, j), g.weights(i, j) / std::sqrt(d(i) * d(j)), 1e-15);
  // Largest eigenvalue of a normalised affinity is 1.
  EXPECT_NEAR(sym_eig(l).values(0), 1.0, 1e-10);
}

TEST(LabelProp, DegenerateInputs) {
  const Matrix same = Matrix::Ones(6, 3);
  LPConfig cfg;
  cfg.k = 2;
  try {
    knn_graph(same, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::degenerate_graph);
  }
  AffinityGraph g;
  g.weights = Matrix::Zero(3, 3);
  g.weights(0, 1) = g.weights(1, 0) = 1.0;
  try {
    normalized_laplacian(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::isolated_node);
    EXPECT_NE(std::string(e.what()).find("node 2"), std::string::npos);
  }
  // lp_predict falls back to the base scores.
  Matrix scores(6, 2);
  scores << 0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7, 0.5, 0.5, 0.1, 0.9;
  const LPResult r = lp_predict(same, scores, cfg);
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 1, 0, 1, 0, 1}));
}

TEST(LabelProp, SmallQueryClampsK) {
  RngStream rng(5, 5);
  const Matrix x = gaussian(3, 2, rng);
  Matrix scores(3, 2);
  scores << 0.9, 0.1, 0.4, 0.6, 0.2, 0.8;
  LPConfig cfg;  // k = 10 > n - 1
  const LPResult r = lp_predict(x, scores, cfg);
  EXPECT_FALSE(r.fallback);
  EXPECT_EQ(r.labels.size(), 3u);
}

TEST(LabelProp, EnsembleModes) {
  RngStream rng(6, 6);
  const std::vector<Matrix> feats = {gaussian(12, 3, rng), gaussian(12, 3, rng)};
  Matrix s1 = Matrix::Random(12, 3).cwiseAbs();
  Matrix s2 = Matrix::Random(12, 3).cwiseAbs();
  LPConfig cfg;
  cfg.k = 4;
  const LPResult per = lp_predict(feats, {s1, s2}, cfg, false);
  const Matrix expected = (lp_predict(feats[0], s1, cfg).refined + lp_predict(feats[1], s2, cfg).refined) / 2.0;
  EXPECT_LT(max_abs(Matrix(per.refined - expected)), 1e-15);
  Matrix joined(12, 6);
  joined << feats[0], feats[1];
  const LPResult cat = lp_predict(feats, {s1, s2}, cfg, true);
  EXPECT_LT(max_abs(Matrix(cat.refined - lp_predict(joined, (s1 + s2) / 2.0, cfg).refined)), 1e-15);
}

TEST(LabelProp, DebugDumpWritesMatrices) {
  RngStream rng(7, 7);
  const auto dir = std::filesystem::temp_directory_path() / "fte_lp_dump_test";
  std::filesystem::remove_all(dir);
  LPConfig cfg;
  cfg.k = 3;
  dump_lp_debug(dir.string(), "ep0", gaussian(8, 2, rng), Matrix::Random(8, 2).cwiseAbs(), cfg);
  for (const char* name : {"ep0_Y0.csv", "ep0_W.csv", "ep0_L.csv", "ep0_Ystar.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
}

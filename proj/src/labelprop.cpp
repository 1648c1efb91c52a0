#include "fte/labelprop.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace fte {

void LPConfig::validate() const {
  if (k < 1) fail(ErrorCode::config, "label propagation: k must be >= 1");
  if (!(delta > 0.0 && delta <= 1.0)) fail(ErrorCode::config, "label propagation: delta must lie in (0, 1]");
  if (!(alpha >= 0.0 && alpha < 1.0)) fail(ErrorCode::config, "label propagation: alpha must lie in [0, 1)");
  if (gamma2 && !(*gamma2 > 0.0)) fail(ErrorCode::config, "label propagation: fixed gamma2 must be positive");
}

Matrix confidence_filter(const Matrix& scores, double delta) {
  const Eigen::Index n = scores.rows();
  require(n >= 1, "confidence_filter: empty score matrix");
  require(delta > 0.0 && delta <= 1.0, "confidence_filter: delta must lie in (0, 1]");
  const double wanted = std::ceil(delta * static_cast<double>(n) - 1e-12);
  const auto keep = static_cast<Eigen::Index>(std::clamp(wanted, 1.0, static_cast<double>(n)));
  Matrix out = Matrix::Zero(n, scores.cols());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores(a, c) > scores(b, c); });
    for (Eigen::Index r = 0; r < keep; ++r) out(order[static_cast<std::size_t>(r)], c) = scores(order[static_cast<std::size_t>(r)], c);
  }
  return out;
}

AffinityGraph knn_graph(const Matrix& features, const LPConfig& cfg) {
  const auto n = static_cast<int>(features.rows());
  require(n >= 2, "knn_graph: need at least two points");
  require(cfg.k >= 1 && cfg.k < n, "knn_graph: k must satisfy 1 <= k < n");

  Matrix dist(n, n);
  for (int i = 0; i < n; ++i) {
    dist(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      const double d = (features.row(i) - features.row(j)).squaredNorm();
      dist(i, j) = d;
      dist(j, i) = d;
    }
  }

  std::vector<std::vector<char>> adjacent(static_cast<std::size_t>(n), std::vector<char>(static_cast<std::size_t>(n), 0));
  std::vector<int> order;
  for (int i = 0; i < n; ++i) {
    order.clear();
    for (int j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dist(i, a) < dist(i, b); });
    for (int r = 0; r < cfg.k; ++r) {
      const int j = order[static_cast<std::size_t>(r)];
      adjacent[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 1;
      adjacent[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = 1;
    }
  }

  AffinityGraph g;
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (adjacent[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) {
        g.edges.emplace_back(i, j);
        total += dist(i, j);
      }

  g.gamma2 = cfg.gamma2 ? *cfg.gamma2 : total / static_cast<double>(g.edges.size());
  if (!(g.gamma2 > 0.0) || !std::isfinite(g.gamma2))
    fail(ErrorCode::degenerate_graph, "knn_graph: all edge distances are zero (gamma^2 = 0)");

  g.weights = Matrix::Zero(n, n);
  for (const auto& [i, j] : g.edges) {
    const double w = std::exp(-dist(i, j) / (2.0 * g.gamma2));
    g.weights(i, j) = w;
    g.weights(j, i) = w;
  }
  return g;
}

Matrix normalized_laplacian(const AffinityGraph& g) {
  const Eigen::Index n = g.weights.rows();
  const Vector degree = g.weights.rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(degree(i) > 0.0)) fail(ErrorCode::isolated_node, "normalized_laplacian: node " + std::to_string(i) + " is isolated");
  const Vector inv_sqrt = degree.cwiseSqrt().cwiseInverse();
  Matrix l = inv_sqrt.asDiagonal() * g.weights * inv_sqrt.asDiagonal();
  // Bitwise symmetry regardless of evaluation order.
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) l(j, i) = l(i, j);
  return l;
}

Matrix propagate(const Matrix& laplacian, const Matrix& y0, double alpha) {
  require(alpha >= 0.0 && alpha < 1.0, "propagate: alpha must lie in [0, 1)");
  require(laplacian.rows() == laplacian.cols() && laplacian.rows() == y0.rows(), "propagate: shape mismatch");
  if (alpha == 0.0) return y0;
  const Matrix system = Matrix::Identity(laplacian.rows(), laplacian.cols()) - alpha * laplacian;
  try {
    return solve(system, y0);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::singular_matrix) fail(ErrorCode::numerical, std::string("propagate: ") + e.what());
    throw;
  }
}

std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) out[static_cast<std::size_t>(i)] = static_cast<int>(argmax(scores.row(i)));
  return out;
}

namespace {

Matrix refine(const Matrix& features, const Matrix& base_scores, const LPConfig& cfg) {
  require(features.rows() == base_scores.rows(), "lp_predict: feature and score row counts differ");
  const Matrix y0 = confidence_filter(base_scores, cfg.delta);
  if (cfg.alpha == 0.0) return y0;
  if (features.rows() < 2) return y0;
  // Small query sets cannot supply k neighbours; use all of them.
  LPConfig local = cfg;
  local.k = std::min(cfg.k, static_cast<int>(features.rows()) - 1);
  const AffinityGraph g = knn_graph(features, local);
  return propagate(normalized_laplacian(g), y0, cfg.alpha);
}

bool is_graph_failure(const Error& e) {
  return e.code() == ErrorCode::degenerate_graph || e.code() == ErrorCode::isolated_node || e.code() == ErrorCode::numerical;
}

}  // namespace

LPResult lp_predict(const Matrix& features, const Matrix& base_scores, const LPConfig& cfg) {
  cfg.validate();
  LPResult out;
  try {
    out.refined = refine(features, base_scores, cfg);
    out.labels = argmax_rows(out.refined);
  } catch (const Error& e) {
    if (!is_graph_failure(e)) throw;
    out.fallback = true;
    out.reason = e.what();
    out.refined = base_scores;
    out.labels = argmax_rows(base_scores);
  }
  return out;
}

LPResult lp_predict(const std::vector<Matrix>& branch_features, const std::vector<Matrix>& branch_scores, const LPConfig& cfg,
                    bool on_concatenated) {
  require(!branch_features.empty() && branch_features.size() == branch_scores.size(), "lp_predict: branch count mismatch");
  const Matrix averaged = average_predictions(branch_scores);
  if (on_concatenated || branch_features.size() == 1) {
    Eigen::Index width = 0;
    for (const Matrix& f : branch_features) width += f.cols();
    Matrix joined(branch_features.front().rows(), width);
    Eigen::Index col = 0;
    for (const Matrix& f : branch_features) {
      joined.middleCols(col, f.cols()) = f;
      col += f.cols();
    }
    return lp_predict(joined, averaged, cfg);
  }

  cfg.validate();
  LPResult out;
  try {
    std::vector<Matrix> refined;
    refined.reserve(branch_features.size());
    for (std::size_t i = 0; i < branch_features.size(); ++i) refined.push_back(refine(branch_features[i], branch_scores[i], cfg));
    out.refined = average_predictions(refined);
    out.labels = argmax_rows(out.refined);
  } catch (const Error& e) {
    if (!is_graph_failure(e)) throw;
    out.fallback = true;
    out.reason = e.what();
    out.refined = averaged;
    out.labels = argmax_rows(averaged);
  }
  return out;
}

namespace {

void write_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream os(path);
  if (!os) fail(ErrorCode::data, "cannot write " + path.string());
  os << std::setprecision(17);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m(i, j);
    os << '\n';
  }
}

}  // namespace

void dump_lp_debug(const std::string& dir, const std::string& prefix, const Matrix& features, const Matrix& base_scores,
                   const LPConfig& cfg) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  const Matrix y0 = confidence_filter(base_scores, cfg.delta);
  write_csv(base / (prefix + "_Y0.csv"), y0);
  try {
    const AffinityGraph g = knn_graph(features, cfg);
    write_csv(base / (prefix + "_W.csv"), g.weights);
    const Matrix l = normalized_laplacian(g);
    write_csv(base / (prefix + "_L.csv"), l);
    write_csv(base / (prefix + "_Ystar.csv"), propagate(l, y0, cfg.alpha));
  } catch (const Error& e) {
    if (!is_graph_failure(e)) throw;
  }
}

}  // namespace fte

#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fte/ensemble.hpp"
#include "fte/linalg.hpp"

namespace fte {

struct LPConfig {
  int k = 10;
  double delta = 0.2;
  double alpha = 0.5;
  // Fixed RBF radius; unset means the mean squared distance over graph edges.
  std::optional<double> gamma2;

  void validate() const;
};

struct AffinityGraph {
  Matrix weights;  // symmetric, zero diagonal
  double gamma2 = 0.0;
  std::vector<std::pair<int, int>> edges;  // i < j
};

// Keeps the top ceil(delta * n) entries of each column, zeroing the rest.
// Equal scores prefer the lower row index.
Matrix confidence_filter(const Matrix& scores, double delta);

// Squared-distance k-NN graph (self excluded, ties to the lower index) joined
// under "i in KNN(j) or j in KNN(i)", with RBF weights exp(-d / (2 gamma^2)).
AffinityGraph knn_graph(const Matrix& features, const LPConfig& cfg);

// Q^{-1/2} W Q^{-1/2} with Q the diagonal degree matrix.
Matrix normalized_laplacian(const AffinityGraph& g);

// Solves (I - alpha L) Y = Y0.
Matrix propagate(const Matrix& laplacian, const Matrix& y0, double alpha);

struct LPResult {
  std::vector<int> labels;
  Matrix refined;
  bool fallback = false;
  std::string reason;
};

// filter -> graph -> laplacian -> propagate -> row argmax.
// Degenerate graphs fall back to the argmax of base_scores and set `fallback`.
LPResult lp_predict(const Matrix& features, const Matrix& base_scores, const LPConfig& cfg);

// Per-branch propagation on each branch's projected features and scores; the
// refined matrices are averaged before the argmax. With on_concatenated, one
// propagation runs on the column-joined branch features and averaged scores.
LPResult lp_predict(const std::vector<Matrix>& branch_features, const std::vector<Matrix>& branch_scores, const LPConfig& cfg,
                    bool on_concatenated);

std::vector<int> argmax_rows(const Matrix& scores);

// Writes W.csv, L.csv, Y0.csv and Ystar.csv under dir/prefix_*.
void dump_lp_debug(const std::string& dir, const std::string& prefix, const Matrix& features, const Matrix& base_scores,
                   const LPConfig& cfg);

}  // namespace fte

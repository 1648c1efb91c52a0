#pragma once

#include <cstdint>
#include <vector>

#include "fte/linalg.hpp"
#include "fte/network.hpp"
#include "fte/rng.hpp"

namespace fte {

// Fixed orthonormal row map applied between the backbone and the classifier.
struct Projection {
  Matrix matrix;  // rows x feature_dim, orthonormal rows
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  int in_dim() const { return static_cast<int>(matrix.cols()); }
  int out_dim() const { return static_cast<int>(matrix.rows()); }
};

// Eigenvectors of a random symmetric matrix, descending eigenvalue order, with
// the last one dropped: an (m - 1) x m matrix with orthonormal rows.
Projection make_projection(int m, RngStream rng);

// m x m identity, used by the single-network (non-ensemble) configuration.
Projection identity_projection(int m);

Matrix transform(const Projection& p, const Matrix& features);

struct Branch {
  int index = 0;
  Projection projection;
  NetParams params;
};

struct EnsembleModel {
  BackboneConfig backbone;
  int num_classes = 0;
  std::vector<Branch> branches;

  void validate() const;
};

Matrix branch_features(const Branch& branch, const BackboneConfig& cfg, const Matrix& inputs);
Matrix branch_predict(const Branch& branch, const BackboneConfig& cfg, const Matrix& inputs);

// Mean of the branch soft-max outputs.
Matrix average_predictions(const std::vector<Matrix>& per_branch);
Matrix ensemble_predict(const EnsembleModel& model, const Matrix& inputs);

}  // namespace fte

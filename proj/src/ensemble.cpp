#include "fte/ensemble.hpp"

namespace fte {

Projection make_projection(int m, RngStream rng) {
  const std::uint64_t seed = rng.seed();
  const std::uint64_t stream = rng.stream_id();
  const Matrix z = random_symmetric(m, rng);
  const auto eig = sym_eig(z);
  return Projection{eig.vectors.leftCols(m - 1).transpose(), seed, stream};
}

Projection identity_projection(int m) {
  require(m >= 1, "identity_projection: dimension must be positive");
  return Projection{Matrix::Identity(m, m), 0, 0};
}

Matrix transform(const Projection& p, const Matrix& features) {
  if (features.cols() != p.matrix.cols())
    fail(ErrorCode::contract, "transform: feature width " + std::to_string(features.cols()) + " does not match projection input " +
                                  std::to_string(p.matrix.cols()));
  return features * p.matrix.transpose();
}

void EnsembleModel::validate() const {
  if (branches.empty()) fail(ErrorCode::contract, "ensemble has no branches");
  backbone.validate();
  for (const Branch& b : branches) {
    check_shapes(b.params, backbone);
    require(b.projection.in_dim() == backbone.feature_dim, "ensemble: projection width does not match feature_dim");
    require(b.params.head.weight.cols() == b.projection.out_dim(), "ensemble: classifier input does not match projection");
    require(b.params.num_classes() == num_classes, "ensemble: classifier output does not match num_classes");
  }
}

Matrix branch_features(const Branch& branch, const BackboneConfig& cfg, const Matrix& inputs) {
  return transform(branch.projection, forward_features(branch.params, cfg, inputs));
}

Matrix branch_predict(const Branch& branch, const BackboneConfig& cfg, const Matrix& inputs) {
  return classify(branch.params.head, branch_features(branch, cfg, inputs));
}

Matrix average_predictions(const std::vector<Matrix>& per_branch) {
  if (per_branch.empty()) fail(ErrorCode::contract, "average_predictions: no branch outputs");
  Matrix acc = per_branch.front();
  for (std::size_t i = 1; i < per_branch.size(); ++i) {
    require(per_branch[i].rows() == acc.rows() && per_branch[i].cols() == acc.cols(), "average_predictions: shape mismatch");
    acc += per_branch[i];
  }
  return acc / static_cast<double>(per_branch.size());
}

Matrix ensemble_predict(const EnsembleModel& model, const Matrix& inputs) {
  if (model.branches.empty()) fail(ErrorCode::contract, "ensemble_predict: ensemble has no branches");
  std::vector<Matrix> outputs;
  outputs.reserve(model.branches.size());
  for (const Branch& b : model.branches) outputs.push_back(branch_predict(b, model.backbone, inputs));
  return average_predictions(outputs);
}

}  // namespace fte

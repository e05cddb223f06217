#pragma once
/**
 * diffeo_iter.hpp - iterative diffeomorphic matching backend.
 *
 * The position map is a composition of K locally weighted translations
 *   phi_j(x) = x + exp(-rho1_j^2 |x - c1_j|^2) v1_j
 * and the orientation offset a product of K locally weighted rotations
 *   g(x) = v2_K^{k_K(z_K)} * ... * v2_1^{k_1(z_1)},
 * where z_j = phi_j o ... o phi_1 (x) is the position after translation
 * stage j. Each translation is a diffeomorphism as long as
 * rho1 < exp(1/2) / (sqrt(2) |v1|).
 */

#include "bimap/correspondence.hpp"
#include "bimap/mapping.hpp"

#include <vector>

namespace bimap {

struct TranslationLayer {
  Vec3 center = Vec3::Zero();
  Vec3 direction = Vec3::Zero();
  double rho = 1.0;

  double kernel(const Vec3& x) const { return std::exp(-rho * rho * (x - center).squaredNorm()); }
  Vec3 apply(const Vec3& x) const { return x + kernel(x) * direction; }
  /// I + v1 grad(k)^T.
  Mat3 jacobian(const Vec3& x) const;
  /// Solves apply(x) = y by damped Newton; throws NumericalError on failure.
  Vec3 invert(const Vec3& y) const;
};

/// Upper bound on rho1 that keeps a translation layer invertible.
double max_translation_width(const Vec3& direction);

struct RotationLayer {
  Vec3 center = Vec3::Zero();
  Quat direction;
  double rho = 1.0;

  RotationLayer() = default;
  RotationLayer(const Vec3& c, const Quat& v, double r);

  double kernel(const Vec3& x) const { return std::exp(-rho * rho * (x - center).squaredNorm()); }
  /// direction^k via the cached logarithm.
  Quat power(double k) const;
  const RotVec& log_direction() const { return log_direction_; }

 private:
  RotVec log_direction_ = RotVec::Zero();
};

struct IterHyper {
  int K = 100;
  double mu = 0.3;
  double beta1 = 0.5;
  double beta2 = 1.0;

  void validate() const;
};

struct FitReport {
  double position_error = 0.0;
  double orientation_error = 0.0;
  std::vector<double> position_history;
  std::vector<double> orientation_history;
};

class DiffeoMap final : public PoseMapping {
 public:
  /// Identity map (no layers).
  DiffeoMap() = default;
  /// Checks equal layer counts and the invertibility bound on every layer.
  DiffeoMap(IterHyper hyper, std::vector<TranslationLayer> translations, std::vector<RotationLayer> rotations);

  static DiffeoMap fit(const Correspondence& corr, const IterHyper& hyper);
  static DiffeoMap from_json(const nlohmann::json& doc);

  std::string backend() const override { return "iter"; }
  Vec3 forward_pos(const Vec3& x) const override;
  Vec3 backward_pos(const Vec3& x_prime) const override;
  Mat3 jacobian(const Vec3& x) const override;
  Quat offset(const Vec3& x) const override;
  /// Central differences with h = 1e-6.
  OffsetJacobian offset_jacobian(const Vec3& x) const override;
  Pose forward(const Pose& p) const override;
  nlohmann::json to_json() const override;

  const IterHyper& hyper() const { return hyper_; }
  const std::vector<TranslationLayer>& translations() const { return translations_; }
  const std::vector<RotationLayer>& rotations() const { return rotations_; }
  const FitReport& report() const { return report_; }
  std::size_t layer_count() const { return translations_.size(); }

  /// Product over layers of (1 + |v1| rho1 sqrt(2) e^{-1/2}), a global
  /// Lipschitz bound for forward_pos.
  double lipschitz_bound() const;

 private:
  IterHyper hyper_;
  std::vector<TranslationLayer> translations_;
  std::vector<RotationLayer> rotations_;
  FitReport report_;
};

}  // namespace bimap

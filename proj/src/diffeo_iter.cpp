#include "bimap/diffeo_iter.hpp"

#include "bimap/errors.hpp"
#include "bimap/golden_section.hpp"

#include <limits>

namespace bimap {

using nlohmann::json;

namespace {

constexpr int kNewtonMaxIterations = 50;
constexpr double kNewtonTolerance = 1e-12;
constexpr double kWidthSearchTolerance = 1e-6;
constexpr double kOffsetFdStep = 1e-6;

// Index of the largest value; lowest index wins ties.
std::size_t argmax(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

double mean_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  return position_error(a, b);
}

}  // namespace

double max_translation_width(const Vec3& direction) {
  const double n = direction.norm();
  if (n == 0.0) return std::numeric_limits<double>::infinity();
  return std::exp(0.5) / (std::sqrt(2.0) * n);
}

Mat3 TranslationLayer::jacobian(const Vec3& x) const {
  const Vec3 grad = -2.0 * rho * rho * kernel(x) * (x - center);
  return Mat3::Identity() + direction * grad.transpose();
}

Vec3 TranslationLayer::invert(const Vec3& y) const {
  if (direction.isZero(0.0)) return y;
  const double tol = kNewtonTolerance * std::max(1.0, y.norm());
  Vec3 x = y;
  Vec3 r = apply(x) - y;
  double rn = r.norm();
  for (int it = 0; it < kNewtonMaxIterations && rn > tol; ++it) {
    const Vec3 grad = -2.0 * rho * rho * kernel(x) * (x - center);
    // Sherman-Morrison inverse of I + v grad^T.
    const Vec3 step = -(r - direction * (grad.dot(r) / (1.0 + grad.dot(direction))));
    double scale = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving) {
      const Vec3 xn = x + scale * step;
      const Vec3 rnew = apply(xn) - y;
      if (rnew.norm() < rn) {
        x = xn;
        r = rnew;
        rn = rnew.norm();
        improved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!improved) break;
  }
  if (!(rn <= tol)) {
    throw NumericalError("translation layer inversion did not converge", rn);
  }
  return x;
}

RotationLayer::RotationLayer(const Vec3& c, const Quat& v, double r)
    : center(c), direction(v.canonical()), rho(r), log_direction_(quat_log(direction)) {}

Quat RotationLayer::power(double k) const {
  if (k == 0.0) return Quat::identity();
  return quat_exp(k * log_direction_);
}

void IterHyper::validate() const {
  if (K < 1) throw ValidationError("K must be >= 1");
  if (!(mu > 0.0 && mu < 1.0)) throw ValidationError("mu must lie in (0, 1)");
  if (!(beta1 > 0.0 && beta1 <= 1.0)) throw ValidationError("beta1 must lie in (0, 1]");
  if (!(beta2 > 0.0 && beta2 <= 1.0)) throw ValidationError("beta2 must lie in (0, 1]");
}

DiffeoMap::DiffeoMap(IterHyper hyper, std::vector<TranslationLayer> translations,
                     std::vector<RotationLayer> rotations)
    : hyper_(hyper), translations_(std::move(translations)), rotations_(std::move(rotations)) {
  if (translations_.size() != rotations_.size()) {
    throw ValidationError("translation and rotation layer counts differ");
  }
  for (std::size_t j = 0; j < translations_.size(); ++j) {
    const auto& t = translations_[j];
    if (!(t.rho > 0.0) || !(t.rho < max_translation_width(t.direction))) {
      throw ValidationError("translation layer " + std::to_string(j) + " violates the width bound");
    }
    if (!(rotations_[j].rho > 0.0)) {
      throw ValidationError("rotation layer " + std::to_string(j) + " has non-positive width");
    }
  }
}

DiffeoMap DiffeoMap::fit(const Correspondence& corr, const IterHyper& hyper) {
  hyper.validate();
  const std::size_t n = corr.size();
  const std::vector<Vec3> targets = corr.remote_positions();
  const std::vector<Quat> target_q = corr.remote_orientations();
  std::vector<Vec3> z = corr.local_positions();
  std::vector<Quat> zq = corr.local_orientations();

  std::vector<TranslationLayer> translations;
  std::vector<RotationLayer> rotations;
  FitReport report;
  std::vector<double> dist(n);
  std::vector<Vec3> trial(n);

  for (int j = 0; j < hyper.K; ++j) {
    // Translation stage.
    for (std::size_t i = 0; i < n; ++i) dist[i] = (z[i] - targets[i]).norm();
    const std::size_t m = argmax(dist);
    TranslationLayer t;
    t.center = z[m];
    t.direction = hyper.beta1 * (targets[m] - t.center);
    if (t.direction.norm() == 0.0) {
      t.direction.setZero();
      t.rho = 1.0;
    } else {
      const auto cost = [&](double rho) {
        TranslationLayer probe = t;
        probe.rho = rho;
        for (std::size_t i = 0; i < n; ++i) trial[i] = probe.apply(z[i]);
        return mean_distance(trial, targets);
      };
      t.rho = optim::golden_section_minimize(cost, 0.0, hyper.mu * max_translation_width(t.direction),
                                             kWidthSearchTolerance)
                  .x;
      for (auto& p : z) p = t.apply(p);
    }
    translations.push_back(t);

    // Rotation stage, kernels evaluated at the translated points.
    for (std::size_t i = 0; i < n; ++i) dist[i] = quat_distance(zq[i], target_q[i]);
    const std::size_t r = argmax(dist);
    const Quat diff = quat_mul(target_q[r], zq[r].conj()).canonical();
    RotationLayer rot;
    if (dist[r] == 0.0) {
      rot = RotationLayer(z[r], Quat::identity(), 1.0);
    } else {
      const Quat v2 = quat_pow(diff, hyper.beta2);
      double d_min = std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) d_min = std::min(d_min, (z[a] - z[b]).norm());
      }
      const auto cost = [&](double rho) {
        const RotationLayer probe(z[r], v2, rho);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          sum += quat_distance(quat_mul(probe.power(probe.kernel(z[i])), zq[i]), target_q[i]);
        }
        return sum / static_cast<double>(n);
      };
      const double rho2 =
          optim::golden_section_minimize(cost, 0.0, 10.0 / d_min, kWidthSearchTolerance).x;
      rot = RotationLayer(z[r], v2, rho2);
      for (std::size_t i = 0; i < n; ++i) zq[i] = quat_mul(rot.power(rot.kernel(z[i])), zq[i]);
    }
    rotations.push_back(rot);

    report.position_history.push_back(position_error(z, targets));
    report.orientation_history.push_back(orientation_error(zq, target_q));
  }

  DiffeoMap map(hyper, std::move(translations), std::move(rotations));
  report.position_error = report.position_history.back();
  report.orientation_error = report.orientation_history.back();
  map.report_ = std::move(report);
  return map;
}

Vec3 DiffeoMap::forward_pos(const Vec3& x) const {
  Vec3 z = x;
  for (const auto& t : translations_) z = t.apply(z);
  return z;
}

Vec3 DiffeoMap::backward_pos(const Vec3& x_prime) const {
  Vec3 x = x_prime;
  for (auto it = translations_.rbegin(); it != translations_.rend(); ++it) x = it->invert(x);
  return x;
}

Mat3 DiffeoMap::jacobian(const Vec3& x) const {
  Mat3 jac = Mat3::Identity();
  Vec3 z = x;
  for (const auto& t : translations_) {
    jac = t.jacobian(z) * jac;
    z = t.apply(z);
  }
  return jac;
}

Quat DiffeoMap::offset(const Vec3& x) const {
  Quat g;
  Vec3 z = x;
  for (std::size_t j = 0; j < translations_.size(); ++j) {
    z = translations_[j].apply(z);
    const auto& rot = rotations_[j];
    g = hamilton(rot.power(rot.kernel(z)), g);
  }
  return g.normalized();
}

OffsetJacobian DiffeoMap::offset_jacobian(const Vec3& x) const {
  OffsetJacobian jac;
  for (int k = 0; k < 3; ++k) {
    Vec3 dx = Vec3::Zero();
    dx(k) = kOffsetFdStep;
    jac.col(k) = (offset(x + dx).coeffs() - offset(x - dx).coeffs()) / (2.0 * kOffsetFdStep);
  }
  return jac;
}

Pose DiffeoMap::forward(const Pose& p) const {
  Quat g;
  Vec3 z = p.x;
  for (std::size_t j = 0; j < translations_.size(); ++j) {
    z = translations_[j].apply(z);
    const auto& rot = rotations_[j];
    g = hamilton(rot.power(rot.kernel(z)), g);
  }
  return {z, quat_mul(g.normalized(), p.q)};
}

double DiffeoMap::lipschitz_bound() const {
  double bound = 1.0;
  for (const auto& t : translations_) {
    bound *= 1.0 + t.direction.norm() * t.rho * std::sqrt(2.0) * std::exp(-0.5);
  }
  return bound;
}

json DiffeoMap::to_json() const {
  json layers = json::array();
  for (std::size_t j = 0; j < translations_.size(); ++j) {
    const auto& t = translations_[j];
    const auto& r = rotations_[j];
    layers.push_back({{"c1", vec3_to_json(t.center)},
                      {"v1", vec3_to_json(t.direction)},
                      {"rho1", t.rho},
                      {"c2", vec3_to_json(r.center)},
                      {"v2", quat_to_json(r.direction)},
                      {"rho2", r.rho}});
  }
  return {{"backend", "iter"},
          {"hyper", {{"K", hyper_.K}, {"mu", hyper_.mu}, {"beta1", hyper_.beta1}, {"beta2", hyper_.beta2}}},
          {"fit", {{"position_error", report_.position_error}, {"orientation_error", report_.orientation_error}}},
          {"layers", layers}};
}

DiffeoMap DiffeoMap::from_json(const json& doc) {
  try {
    IterHyper hyper;
    const auto& h = doc.at("hyper");
    hyper.K = h.at("K").get<int>();
    hyper.mu = h.at("mu").get<double>();
    hyper.beta1 = h.at("beta1").get<double>();
    hyper.beta2 = h.at("beta2").get<double>();
    std::vector<TranslationLayer> translations;
    std::vector<RotationLayer> rotations;
    for (const auto& l : doc.at("layers")) {
      TranslationLayer t;
      t.center = json_to_vec3(l.at("c1"), "c1");
      t.direction = json_to_vec3(l.at("v1"), "v1");
      t.rho = l.at("rho1").get<double>();
      translations.push_back(t);
      // The stored quaternion is already canonical and unit; keep it bitwise.
      RotationLayer r(json_to_vec3(l.at("c2"), "c2"), json_to_quat(l.at("v2"), "v2"), l.at("rho2").get<double>());
      rotations.push_back(r);
    }
    DiffeoMap map(hyper, std::move(translations), std::move(rotations));
    if (doc.contains("fit")) {
      map.report_.position_error = doc["fit"].value("position_error", 0.0);
      map.report_.orientation_error = doc["fit"].value("orientation_error", 0.0);
    }
    return map;
  } catch (const json::exception& e) {
    throw ParseError(std::string("iterative map: ") + e.what());
  }
}

}  // namespace bimap

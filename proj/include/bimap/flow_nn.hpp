#pragma once
/**
 * flow_nn.hpp - learned backend: affine coupling flow for positions and a
 * dense tanh network for the orientation offset.
 *
 * Each coupling layer keeps `split` coordinates and transforms the rest:
 *   y_pass = x_pass
 *   y_rest = x_rest * exp(s(x_pass)) + t(x_pass)
 * which is inverted in closed form. The coordinate order rotates by one
 * position per layer so that every coordinate gets transformed.
 *
 * The offset network maps x to a rotation vector r and g(x) = exp(r).
 */

#include "bimap/correspondence.hpp"
#include "bimap/mapping.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace bimap {

/// Fully connected network: tanh on every hidden layer, linear output.
/// h_{l+1} = tanh(W_l h_l + b_l) with W_l of shape (out x in).
struct DenseNet {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;

  /// Widths are {in, hidden..., out}.
  static DenseNet zeros(const std::vector<int>& widths);

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  std::size_t parameter_count() const;

  Eigen::VectorXd eval(const Eigen::VectorXd& x) const;
  /// Output and d output / d input (out x in).
  Eigen::VectorXd eval(const Eigen::VectorXd& x, Eigen::MatrixXd& jac) const;
  /// Allocation-free variant; y receives output_dim() values.
  void eval(const double* x, double* y) const;

  nlohmann::json to_json() const;
  static DenseNet from_json(const nlohmann::json& j);
};

struct CouplingLayer {
  int split = 1;                   ///< number of pass-through coordinates, 1 or 2
  std::array<int, 3> order{0, 1, 2};  ///< first `split` entries pass through
  DenseNet scale_net;
  DenseNet shift_net;

  std::vector<int> pass_indices() const { return {order.begin(), order.begin() + split}; }
  std::vector<int> transformed_indices() const { return {order.begin() + split, order.end()}; }

  Vec3 forward(const Vec3& x) const;
  Vec3 backward(const Vec3& y) const;
  Mat3 jacobian(const Vec3& x) const;
};

struct FlowArch {
  int coupling_layers = 6;
  int st_hidden = 32;
  int st_depth = 2;
  int ori_hidden = 24;
  int ori_depth = 4;

  /// split of layer i: 1, 2, 1, 2, ...
  int split(int layer) const { return layer % 2 == 0 ? 1 : 2; }
  /// Coordinate order of layer i: cyclic rotation by i.
  std::array<int, 3> order(int layer) const {
    return {layer % 3, (layer + 1) % 3, (layer + 2) % 3};
  }
};

struct TrainConfig {
  std::array<double, 4> lambda{0.02, 3.0, 0.1, 9.0};
  double alpha = 1.0;
  int samples = 200;  ///< N1
  long loops = 50000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainLog {
  std::vector<double> q;
  std::vector<double> q1;
  std::vector<double> q2;
};

class FlowMap final : public PoseMapping {
 public:
  /// Identity map with the initialization used for training: final layers of
  /// every network zero, other weights uniform in +-0.05.
  static FlowMap initial(const FlowArch& arch, std::uint64_t seed);
  static FlowMap train(const Correspondence& corr, const TrainConfig& cfg, const FlowArch& arch = {});
  static FlowMap from_json(const nlohmann::json& doc);

  std::string backend() const override { return "flow"; }
  Vec3 forward_pos(const Vec3& x) const override;
  Vec3 backward_pos(const Vec3& x_prime) const override;
  Mat3 jacobian(const Vec3& x) const override;
  Quat offset(const Vec3& x) const override;
  /// Analytic: d exp(r)/dr * dr/dx.
  OffsetJacobian offset_jacobian(const Vec3& x) const override;
  nlohmann::json to_json() const override;

  RotVec offset_log(const Vec3& x) const;

  const FlowArch& arch() const { return arch_; }
  std::vector<CouplingLayer>& layers() { return layers_; }
  const std::vector<CouplingLayer>& layers() const { return layers_; }
  DenseNet& ori_net() { return ori_net_; }
  const DenseNet& ori_net() const { return ori_net_; }
  bool trained() const { return trained_; }
  const TrainLog& training_log() const { return log_; }
  /// Residuals on the training correspondence, if trained.
  double position_error() const { return position_error_; }
  double orientation_error() const { return orientation_error_; }

 private:
  FlowArch arch_;
  std::vector<CouplingLayer> layers_;
  DenseNet ori_net_;
  bool trained_ = false;
  TrainLog log_;
  double position_error_ = 0.0;
  double orientation_error_ = 0.0;

  friend class FlowTrainer;
};

/// Training objective Q = Q1 + lambda4 Q2 on a fixed sample set, exposed so
/// gradient checks can probe it directly.
class FlowTrainer {
 public:
  struct Objective {
    double q = 0.0;
    double q1 = 0.0;
    double q2 = 0.0;
  };

  FlowTrainer(const Correspondence& corr, const TrainConfig& cfg, FlowMap init);

  /// Flattened parameters: coupling layers (scale then shift net, weights then
  /// bias per layer), then the offset network.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& theta);
  std::size_t parameter_count() const;

  Objective evaluate() const;
  Objective evaluate(Eigen::VectorXd& gradient) const;

  /// One Adam step on the current parameters; returns the objective before the step.
  Objective step();
  /// Runs cfg.loops steps, recording the log; throws TrainingError on divergence.
  FlowMap run();

  const FlowMap& map() const { return map_; }
  const Eigen::MatrixXd& samples() const { return samples_; }

 private:
  TrainConfig cfg_;
  FlowMap map_;
  Eigen::MatrixXd samples_;       // N1 x 3
  Eigen::MatrixXd data_in_;       // N x 3
  Eigen::MatrixXd data_out_;      // N x 3
  Eigen::MatrixXd offset_target_; // N x 3
  std::vector<Quat> local_q_;
  std::vector<Quat> remote_q_;
  Eigen::VectorXd adam_m_;
  Eigen::VectorXd adam_v_;
  long steps_ = 0;
};

/// Samples x_s ~ N(mu_a, 3 Sigma_a) with Sigma_a regularized for planar sets.
Eigen::MatrixXd draw_position_samples(const std::vector<Vec3>& positions, int count, std::uint64_t seed);

}  // namespace bimap

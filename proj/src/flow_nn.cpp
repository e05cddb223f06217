#include "bimap/flow_nn.hpp"

#include "bimap/autodiff.hpp"
#include "bimap/errors.hpp"
#include "vec_tanh.hpp"

#include <Eigen/Eigenvalues>

#include <limits>
#include <optional>
#include <random>

namespace bimap {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

// ---------------------------------------------------------------------------
// DenseNet

DenseNet DenseNet::zeros(const std::vector<int>& widths) {
  DenseNet net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    net.weights.push_back(MatrixXd::Zero(widths[l + 1], widths[l]));
    net.biases.push_back(VectorXd::Zero(widths[l + 1]));
  }
  return net;
}

std::size_t DenseNet::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

VectorXd DenseNet::eval(const VectorXd& x) const {
  VectorXd out(output_dim());
  eval(x.data(), out.data());
  return out;
}

VectorXd DenseNet::eval(const VectorXd& x, MatrixXd& jac) const {
  VectorXd h = x;
  jac = MatrixXd::Identity(x.size(), x.size());
  const std::size_t last = weights.size() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    VectorXd a = weights[l] * h + biases[l];
    MatrixXd ja = weights[l] * jac;
    if (l < last) {
      h = vec_tanh(a.array());
      jac = (1.0 - h.array().square()).matrix().asDiagonal() * ja;
    } else {
      h = std::move(a);
      jac = std::move(ja);
    }
  }
  return h;
}

namespace {

template <class Vector>
void eval_into(const DenseNet& net, const double* x, double* y) {
  const std::size_t last = net.weights.size() - 1;
  Vector h = Eigen::Map<const VectorXd>(x, net.input_dim());
  for (std::size_t l = 0; l < last; ++l) {
    Vector a = net.biases[l];
    a.noalias() += net.weights[l] * h;
    h = vec_tanh(a.array());
  }
  Eigen::Map<VectorXd> out(y, net.output_dim());
  out = net.biases[last];
  out.noalias() += net.weights[last] * h;
}

// Fixed-size kernels for the common shapes (uniform hidden width H); the
// generic path handles everything else.
template <int In, int H, int Out>
void eval_fixed(const DenseNet& net, const double* x, double* y) {
  using Hidden = Eigen::Matrix<double, H, 1>;
  const std::size_t last = net.weights.size() - 1;
  Hidden a = Eigen::Map<const Hidden>(net.biases[0].data());
  a.noalias() += Eigen::Map<const Eigen::Matrix<double, H, In>>(net.weights[0].data()) *
                 Eigen::Map<const Eigen::Matrix<double, In, 1>>(x);
  Hidden h = vec_tanh(a.array());
  for (std::size_t l = 1; l < last; ++l) {
    a = Eigen::Map<const Hidden>(net.biases[l].data());
    a.noalias() += Eigen::Map<const Eigen::Matrix<double, H, H>>(net.weights[l].data()) * h;
    h = vec_tanh(a.array());
  }
  Eigen::Map<Eigen::Matrix<double, Out, 1>> out(y);
  out = Eigen::Map<const Eigen::Matrix<double, Out, 1>>(net.biases[last].data());
  out.noalias() += Eigen::Map<const Eigen::Matrix<double, Out, H>>(net.weights[last].data()) * h;
}

template <int H>
bool eval_hidden(const DenseNet& net, const double* x, double* y) {
  switch (net.input_dim() * 4 + net.output_dim()) {
    case 1 * 4 + 1: eval_fixed<1, H, 1>(net, x, y); return true;
    case 1 * 4 + 2: eval_fixed<1, H, 2>(net, x, y); return true;
    case 2 * 4 + 1: eval_fixed<2, H, 1>(net, x, y); return true;
    case 2 * 4 + 2: eval_fixed<2, H, 2>(net, x, y); return true;
    case 3 * 4 + 3: eval_fixed<3, H, 3>(net, x, y); return true;
    default: return false;
  }
}

// Two nets of identical fixed shape evaluated in lockstep on the same input;
// the stacked hidden state keeps both dependency chains in flight.
template <int In, int H, int Out>
void eval_pair_fixed(const DenseNet& na, const DenseNet& nb, const double* x, double* ya, double* yb) {
  using Stack = Eigen::Matrix<double, 2 * H, 1>;
  using W = Eigen::Map<const Eigen::Matrix<double, H, H>>;
  using B = Eigen::Map<const Eigen::Matrix<double, H, 1>>;
  const std::size_t last = na.weights.size() - 1;
  const Eigen::Map<const Eigen::Matrix<double, In, 1>> in(x);
  Stack a;
  a.template head<H>() = B(na.biases[0].data());
  a.template tail<H>() = B(nb.biases[0].data());
  a.template head<H>().noalias() += Eigen::Map<const Eigen::Matrix<double, H, In>>(na.weights[0].data()) * in;
  a.template tail<H>().noalias() += Eigen::Map<const Eigen::Matrix<double, H, In>>(nb.weights[0].data()) * in;
  Stack h = vec_tanh(a.array());
  for (std::size_t l = 1; l < last; ++l) {
    a.template head<H>() = B(na.biases[l].data());
    a.template tail<H>() = B(nb.biases[l].data());
    a.template head<H>().noalias() += W(na.weights[l].data()) * h.template head<H>();
    a.template tail<H>().noalias() += W(nb.weights[l].data()) * h.template tail<H>();
    h = vec_tanh(a.array());
  }
  using O = Eigen::Matrix<double, Out, 1>;
  using WO = Eigen::Map<const Eigen::Matrix<double, Out, H>>;
  Eigen::Map<O> oa(ya), ob(yb);
  oa = Eigen::Map<const O>(na.biases[last].data());
  ob = Eigen::Map<const O>(nb.biases[last].data());
  oa.noalias() += WO(na.weights[last].data()) * h.template head<H>();
  ob.noalias() += WO(nb.weights[last].data()) * h.template tail<H>();
}

bool same_shape(const DenseNet& a, const DenseNet& b) {
  if (a.weights.size() != b.weights.size()) return false;
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    if (a.weights[l].rows() != b.weights[l].rows() || a.weights[l].cols() != b.weights[l].cols()) return false;
  }
  return true;
}

bool uniform_hidden(const DenseNet& net, Eigen::Index width) {
  const std::size_t last = net.weights.size() - 1;
  if (last < 1 || net.weights.front().rows() != width) return false;
  for (std::size_t l = 1; l <= last; ++l) {
    if (net.weights[l].cols() != width || (l < last && net.weights[l].rows() != width)) return false;
  }
  return true;
}

// Shapes used by the coupling layers with 32-wide hidden layers.
void eval_pair(const DenseNet& na, const DenseNet& nb, const double* x, double* ya, double* yb) {
  if (same_shape(na, nb) && uniform_hidden(na, 32)) {
    switch (na.input_dim() * 4 + na.output_dim()) {
      case 1 * 4 + 2: return eval_pair_fixed<1, 32, 2>(na, nb, x, ya, yb);
      case 2 * 4 + 1: return eval_pair_fixed<2, 32, 1>(na, nb, x, ya, yb);
      default: break;
    }
  }
  na.eval(x, ya);
  nb.eval(x, yb);
}

}  // namespace

void DenseNet::eval(const double* x, double* y) const {
  const std::size_t last = weights.size() - 1;
  bool uniform = last >= 1;
  const Eigen::Index hidden = weights.front().rows();
  for (std::size_t l = 1; uniform && l <= last; ++l) uniform = weights[l].cols() == hidden;
  for (std::size_t l = 1; uniform && l < last; ++l) uniform = weights[l].rows() == hidden;
  if (uniform && hidden == 32 && eval_hidden<32>(*this, x, y)) return;
  if (uniform && hidden == 24 && eval_hidden<24>(*this, x, y)) return;
  constexpr Eigen::Index cap = 128;
  for (const auto& w : weights) {
    if (w.rows() > cap) return eval_into<VectorXd>(*this, x, y);
  }
  eval_into<Eigen::Matrix<double, Eigen::Dynamic, 1, 0, cap, 1>>(*this, x, y);
}

json DenseNet::to_json() const {
  json ws = json::array(), bs = json::array();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
      rows.push_back(std::vector<double>(weights[l].row(r).begin(), weights[l].row(r).end()));
    }
    ws.push_back(rows);
    bs.push_back(std::vector<double>(biases[l].begin(), biases[l].end()));
  }
  return {{"weights", ws}, {"biases", bs}};
}

DenseNet DenseNet::from_json(const json& j) {
  DenseNet net;
  const auto& ws = j.at("weights");
  const auto& bs = j.at("biases");
  if (ws.size() != bs.size() || ws.empty()) throw ParseError("dense net: weights/biases mismatch");
  for (std::size_t l = 0; l < ws.size(); ++l) {
    const auto rows = ws[l].get<std::vector<std::vector<double>>>();
    const auto bias = bs[l].get<std::vector<double>>();
    if (rows.empty()) throw ParseError("dense net: empty weight matrix");
    MatrixXd w(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != static_cast<std::size_t>(w.cols())) throw ParseError("dense net: ragged weights");
      for (std::size_t c = 0; c < rows[r].size(); ++c) w(r, c) = rows[r][c];
    }
    if (bias.size() != static_cast<std::size_t>(w.rows())) throw ParseError("dense net: bias width mismatch");
    if (l > 0 && net.weights.back().rows() != w.cols()) throw ParseError("dense net: layer widths mismatch");
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::Map<const VectorXd>(bias.data(), bias.size()));
  }
  return net;
}

// ---------------------------------------------------------------------------
// CouplingLayer

namespace {

VectorXd gather(const Vec3& x, const std::vector<int>& idx) {
  VectorXd out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out(i) = x(idx[i]);
  return out;
}

}  // namespace

Vec3 CouplingLayer::forward(const Vec3& x) const {
  double in[2], s[2], t[2];
  for (int i = 0; i < split; ++i) in[i] = x(order[i]);
  eval_pair(scale_net, shift_net, in, s, t);
  Vec3 y = x;
  for (int i = 0; i < 3 - split; ++i) y(order[split + i]) = x(order[split + i]) * std::exp(s[i]) + t[i];
  return y;
}

Vec3 CouplingLayer::backward(const Vec3& y) const {
  double in[2], s[2], t[2];
  for (int i = 0; i < split; ++i) in[i] = y(order[i]);
  eval_pair(scale_net, shift_net, in, s, t);
  Vec3 x = y;
  for (int i = 0; i < 3 - split; ++i) x(order[split + i]) = (y(order[split + i]) - t[i]) * std::exp(-s[i]);
  return x;
}

Mat3 CouplingLayer::jacobian(const Vec3& x) const {
  const auto pass = pass_indices(), rest = transformed_indices();
  const VectorXd x1 = gather(x, pass);
  MatrixXd ds, dt;
  const VectorXd s = scale_net.eval(x1, ds);
  const VectorXd t = shift_net.eval(x1, dt);
  Mat3 jac = Mat3::Identity();
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const double es = std::exp(s(i));
    jac(rest[i], rest[i]) = es;
    for (std::size_t j = 0; j < pass.size(); ++j) {
      jac(rest[i], pass[j]) = x(rest[i]) * es * ds(i, j) + dt(i, j);
    }
  }
  return jac;
}

// ---------------------------------------------------------------------------
// FlowMap

void TrainConfig::validate() const {
  for (double l : lambda) {
    if (!(l > 0.0)) throw ValidationError("all lambda weights must be positive");
  }
  if (!(alpha > 0.0)) throw ValidationError("alpha must be positive");
  if (samples < 1) throw ValidationError("sample count N1 must be >= 1");
  if (loops < 1) throw ValidationError("loops must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
}

namespace {

DenseNet random_net(const std::vector<int>& widths, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-0.05, 0.05);
  DenseNet net = DenseNet::zeros(widths);
  for (std::size_t l = 0; l + 1 < net.weights.size(); ++l) {
    net.weights[l] = net.weights[l].unaryExpr([&](double) { return unif(rng); });
    net.biases[l] = net.biases[l].unaryExpr([&](double) { return unif(rng); });
  }
  return net;
}

std::vector<int> widths(int in, int hidden, int depth, int out) {
  std::vector<int> w{in};
  for (int i = 0; i < depth; ++i) w.push_back(hidden);
  w.push_back(out);
  return w;
}

}  // namespace

FlowMap FlowMap::initial(const FlowArch& arch, std::uint64_t seed) {
  if (arch.coupling_layers < 1 || arch.st_depth < 1 || arch.ori_depth < 1) {
    throw ValidationError("flow architecture needs at least one layer of each kind");
  }
  std::mt19937_64 rng(seed);
  FlowMap map;
  map.arch_ = arch;
  for (int i = 0; i < arch.coupling_layers; ++i) {
    CouplingLayer layer;
    layer.split = arch.split(i);
    layer.order = arch.order(i);
    layer.scale_net = random_net(widths(layer.split, arch.st_hidden, arch.st_depth, 3 - layer.split), rng);
    layer.shift_net = random_net(widths(layer.split, arch.st_hidden, arch.st_depth, 3 - layer.split), rng);
    map.layers_.push_back(std::move(layer));
  }
  map.ori_net_ = random_net(widths(3, arch.ori_hidden, arch.ori_depth, 3), rng);
  return map;
}

Vec3 FlowMap::forward_pos(const Vec3& x) const {
  Vec3 y = x;
  for (const auto& l : layers_) y = l.forward(y);
  return y;
}

Vec3 FlowMap::backward_pos(const Vec3& x_prime) const {
  Vec3 x = x_prime;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) x = it->backward(x);
  return x;
}

Mat3 FlowMap::jacobian(const Vec3& x) const {
  Mat3 jac = Mat3::Identity();
  Vec3 y = x;
  for (const auto& l : layers_) {
    jac = l.jacobian(y) * jac;
    y = l.forward(y);
  }
  return jac;
}

RotVec FlowMap::offset_log(const Vec3& x) const {
  RotVec r;
  ori_net_.eval(x.data(), r.data());
  return r;
}

Quat FlowMap::offset(const Vec3& x) const { return quat_exp(offset_log(x)); }

OffsetJacobian FlowMap::offset_jacobian(const Vec3& x) const {
  MatrixXd dr;
  const RotVec r = ori_net_.eval(x, dr);
  return quat_exp_jacobian(r) * dr;
}

json FlowMap::to_json() const {
  json layers = json::array();
  for (const auto& l : layers_) {
    layers.push_back({{"split", l.split},
                      {"order", l.order},
                      {"scale_net", l.scale_net.to_json()},
                      {"shift_net", l.shift_net.to_json()}});
  }
  return {{"backend", "flow"},
          {"arch",
           {{"coupling_layers", arch_.coupling_layers},
            {"st_hidden", arch_.st_hidden},
            {"st_depth", arch_.st_depth},
            {"ori_hidden", arch_.ori_hidden},
            {"ori_depth", arch_.ori_depth}}},
          {"trained", trained_},
          {"fit", {{"position_error", position_error_}, {"orientation_error", orientation_error_}}},
          {"coupling", layers},
          {"ori_net", ori_net_.to_json()}};
}

FlowMap FlowMap::from_json(const json& doc) {
  try {
    FlowMap map;
    const auto& a = doc.at("arch");
    map.arch_.coupling_layers = a.at("coupling_layers").get<int>();
    map.arch_.st_hidden = a.at("st_hidden").get<int>();
    map.arch_.st_depth = a.at("st_depth").get<int>();
    map.arch_.ori_hidden = a.at("ori_hidden").get<int>();
    map.arch_.ori_depth = a.at("ori_depth").get<int>();
    for (const auto& l : doc.at("coupling")) {
      CouplingLayer layer;
      layer.split = l.at("split").get<int>();
      layer.order = l.at("order").get<std::array<int, 3>>();
      layer.scale_net = DenseNet::from_json(l.at("scale_net"));
      layer.shift_net = DenseNet::from_json(l.at("shift_net"));
      if (layer.split < 1 || layer.split > 2 || layer.scale_net.input_dim() != layer.split ||
          layer.scale_net.output_dim() != 3 - layer.split || layer.shift_net.input_dim() != layer.split ||
          layer.shift_net.output_dim() != 3 - layer.split) {
        throw ParseError("flow map: coupling layer shape mismatch");
      }
      map.layers_.push_back(std::move(layer));
    }
    map.ori_net_ = DenseNet::from_json(doc.at("ori_net"));
    if (map.ori_net_.input_dim() != 3 || map.ori_net_.output_dim() != 3) {
      throw ParseError("flow map: offset network must map R^3 to R^3");
    }
    map.trained_ = doc.value("trained", false);
    if (doc.contains("fit")) {
      map.position_error_ = doc["fit"].value("position_error", 0.0);
      map.orientation_error_ = doc["fit"].value("orientation_error", 0.0);
    }
    return map;
  } catch (const json::exception& e) {
    throw ParseError(std::string("flow map: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training

MatrixXd draw_position_samples(const std::vector<Vec3>& positions, int count, std::uint64_t seed) {
  const double n = static_cast<double>(positions.size());
  Vec3 mean = Vec3::Zero();
  for (const auto& p : positions) mean += p;
  mean /= n;
  Mat3 cov = Mat3::Zero();
  for (const auto& p : positions) cov += (p - mean) * (p - mean).transpose();
  cov /= n;
  const double trace = cov.trace();
  cov += 1e-6 * trace * Mat3::Identity();
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 variances = eig.eigenvalues().cwiseMax(1e-4 * trace);
  const Mat3 factor = eig.eigenvectors() * (3.0 * variances).cwiseSqrt().asDiagonal();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd out(count, 3);
  for (int i = 0; i < count; ++i) {
    Vec3 z;
    for (int k = 0; k < 3; ++k) z(k) = normal(rng);
    out.row(i) = (mean + factor * z).transpose();
  }
  return out;
}

namespace {

// Visits every parameter tensor of the map in the flattening order.
template <class Map, class F>
void for_each_parameter(Map& map, F&& f) {
  auto visit_net = [&](auto& net) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      f(net.weights[l], true);
      f(net.biases[l], false);
    }
  };
  for (auto& layer : map.layers()) {
    visit_net(layer.scale_net);
    visit_net(layer.shift_net);
  }
  visit_net(map.ori_net());
}

struct NetVars {
  std::vector<ad::Var> weights;
  std::vector<ad::Var> biases;
};

struct GraphParams {
  std::vector<NetVars> scale;
  std::vector<NetVars> shift;
  NetVars ori;
  std::vector<ad::Var> all;  // flattening order
};

NetVars net_vars(ad::Tape& tape, const DenseNet& net, std::vector<ad::Var>& all) {
  NetVars v;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    v.weights.push_back(tape.variable(net.weights[l]));
    all.push_back(v.weights.back());
    v.biases.push_back(tape.variable(net.biases[l].transpose()));
    all.push_back(v.biases.back());
  }
  return v;
}

struct Tangent {
  ad::Var value;
  std::optional<ad::Var> dot;  // three stacked directional derivatives
};

Tangent net_graph(const NetVars& p, const Tangent& in) {
  Tangent h = in;
  const std::size_t last = p.weights.size() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    ad::Var a = ad::add_row(ad::matmul_nt(h.value, p.weights[l]), p.biases[l]);
    std::optional<ad::Var> adot;
    if (h.dot) adot = ad::matmul_nt(*h.dot, p.weights[l]);
    if (l < last) {
      h.value = ad::tanh(a);
      if (adot) h.dot = ad::mul(ad::tile_rows(ad::affine(ad::square(h.value), -1.0, 1.0), 3), *adot);
    } else {
      h.value = a;
      h.dot = adot;
    }
  }
  return h;
}

Tangent flow_graph(const FlowMap& map, const GraphParams& p, Tangent x) {
  for (std::size_t i = 0; i < map.layers().size(); ++i) {
    const auto& layer = map.layers()[i];
    const auto pass = layer.pass_indices(), rest = layer.transformed_indices();
    std::vector<int> inverse(3);
    for (int c = 0; c < 3; ++c) inverse[layer.order[c]] = c;

    Tangent x1{ad::select_cols(x.value, pass), std::nullopt};
    if (x.dot) x1.dot = ad::select_cols(*x.dot, pass);
    const ad::Var x2 = ad::select_cols(x.value, rest);
    const Tangent s = net_graph(p.scale[i], x1);
    const Tangent t = net_graph(p.shift[i], x1);
    const ad::Var es = ad::exp(s.value);
    const ad::Var x2es = ad::mul(x2, es);
    const ad::Var y2 = ad::add(x2es, t.value);

    Tangent y{ad::select_cols(ad::hcat(x1.value, y2), inverse), std::nullopt};
    if (x.dot) {
      const ad::Var x2dot = ad::select_cols(*x.dot, rest);
      const ad::Var y2dot = ad::add(
          ad::add(ad::mul(x2dot, ad::tile_rows(es, 3)), ad::mul(ad::tile_rows(x2es, 3), *s.dot)), *t.dot);
      y.dot = ad::select_cols(ad::hcat(*x1.dot, y2dot), inverse);
    }
    x = y;
  }
  return x;
}

}  // namespace

FlowTrainer::FlowTrainer(const Correspondence& corr, const TrainConfig& cfg, FlowMap init)
    : cfg_(cfg), map_(std::move(init)) {
  cfg_.validate();
  const auto local = corr.local_positions();
  const auto remote = corr.remote_positions();
  const auto offsets = corr.orientation_offsets();
  const Eigen::Index n = static_cast<Eigen::Index>(corr.size());
  data_in_.resize(n, 3);
  data_out_.resize(n, 3);
  offset_target_.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    data_in_.row(i) = local[i].transpose();
    data_out_.row(i) = remote[i].transpose();
    offset_target_.row(i) = offsets[i].transpose();
  }
  local_q_ = corr.local_orientations();
  remote_q_ = corr.remote_orientations();
  samples_ = draw_position_samples(local, cfg_.samples, cfg_.seed);
  adam_m_ = VectorXd::Zero(static_cast<Eigen::Index>(parameter_count()));
  adam_v_ = adam_m_;
}

std::size_t FlowTrainer::parameter_count() const {
  std::size_t n = 0;
  for_each_parameter(const_cast<FlowMap&>(map_), [&](const auto& m, bool) { n += m.size(); });
  return n;
}

VectorXd FlowTrainer::parameters() const {
  VectorXd theta(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for_each_parameter(const_cast<FlowMap&>(map_), [&](const auto& m, bool) {
    theta.segment(at, m.size()) = Eigen::Map<const VectorXd>(m.data(), m.size());
    at += m.size();
  });
  return theta;
}

void FlowTrainer::set_parameters(const VectorXd& theta) {
  Eigen::Index at = 0;
  for_each_parameter(map_, [&](auto& m, bool) {
    Eigen::Map<VectorXd>(m.data(), m.size()) = theta.segment(at, m.size());
    at += m.size();
  });
}

FlowTrainer::Objective FlowTrainer::evaluate() const {
  VectorXd unused;
  return evaluate(unused);
}

FlowTrainer::Objective FlowTrainer::evaluate(VectorXd& gradient) const {
  const auto& lambda = cfg_.lambda;
  ad::Tape tape;
  GraphParams p;
  for (const auto& layer : map_.layers()) {
    p.scale.push_back(net_vars(tape, layer.scale_net, p.all));
    p.shift.push_back(net_vars(tape, layer.shift_net, p.all));
  }
  p.ori = net_vars(tape, map_.ori_net(), p.all);

  const auto n = static_cast<double>(data_in_.rows());
  const Eigen::Index n1 = samples_.rows();

  // Position data term: mean Euclidean residual at the objects.
  const Tangent data = flow_graph(map_, p, {tape.constant(data_in_), std::nullopt});
  const ad::Var fp = ad::affine(ad::sum(ad::row_norms(ad::sub(data.value, tape.constant(data_out_)))), 1.0 / n);

  // Jacobian penalty: entrywise L1 distance of J(x_s) to alpha I.
  MatrixXd seeds = MatrixXd::Zero(3 * n1, 3);
  for (int k = 0; k < 3; ++k) seeds.block(k * n1, k, n1, 1).setOnes();
  const Tangent sampled = flow_graph(map_, p, {tape.constant(samples_), tape.constant(seeds)});
  const ad::Var jac_pen = ad::affine(
      ad::sum(ad::abs(ad::sub(*sampled.dot, tape.constant(cfg_.alpha * seeds)))), lambda[0] / static_cast<double>(n1));
  const ad::Var q1 = ad::add(fp, jac_pen);

  // Orientation: squared log-space residual at the objects, squared identity
  // pull on the samples, mean squared weight of the offset network.
  const Tangent r_data = net_graph(p.ori, {tape.constant(data_in_), std::nullopt});
  const ad::Var ori_fit =
      ad::affine(ad::sum(ad::square(ad::sub(r_data.value, tape.constant(offset_target_)))), 1.0 / n);
  const Tangent r_samples = net_graph(p.ori, {tape.constant(samples_), std::nullopt});
  const ad::Var pull = ad::affine(ad::sum(ad::square(r_samples.value)), lambda[1] / static_cast<double>(n1));
  ad::Var decay = ad::sum(ad::square(p.ori.weights.front()));
  double weight_count = static_cast<double>(p.ori.weights.front().value().size());
  for (std::size_t l = 1; l < p.ori.weights.size(); ++l) {
    decay = ad::add(decay, ad::sum(ad::square(p.ori.weights[l])));
    weight_count += static_cast<double>(p.ori.weights[l].value().size());
  }
  const ad::Var q2 = ad::add(ad::add(ori_fit, pull), ad::affine(decay, lambda[2] / weight_count));

  const ad::Var q = ad::add(q1, ad::affine(q2, lambda[3]));
  const Objective obj{q.value()(0, 0), q1.value()(0, 0), q2.value()(0, 0)};

  tape.backward(q);
  gradient.resize(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for (const auto& v : p.all) {
    const MatrixXd g = tape.grad(v);
    // Eigen storage is column-major, matching the Map used for flattening.
    gradient.segment(at, g.size()) = Eigen::Map<const VectorXd>(g.data(), g.size());
    at += g.size();
  }
  return obj;
}

FlowTrainer::Objective FlowTrainer::step() {
  VectorXd grad;
  const Objective obj = evaluate(grad);
  ++steps_;
  adam_m_ = cfg_.beta1 * adam_m_ + (1.0 - cfg_.beta1) * grad;
  adam_v_ = cfg_.beta2 * adam_v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  const VectorXd update =
      ((adam_m_ / c1).array() / ((adam_v_ / c2).array().sqrt() + cfg_.epsilon)).matrix() * cfg_.learning_rate;
  set_parameters(parameters() - update);
  return obj;
}

FlowMap FlowTrainer::run() {
  TrainLog log;
  log.q.reserve(cfg_.loops);
  log.q1.reserve(cfg_.loops);
  log.q2.reserve(cfg_.loops);
  // Adam keeps oscillating around the optimum, so the iterate with the lowest
  // objective is returned rather than the last one.
  VectorXd best = parameters();
  double best_q = std::numeric_limits<double>::infinity();
  for (long epoch = 0; epoch < cfg_.loops; ++epoch) {
    VectorXd theta = parameters();
    const Objective obj = step();
    if (!std::isfinite(obj.q)) {
      throw TrainingError("training diverged at epoch " + std::to_string(epoch), epoch);
    }
    if (obj.q < best_q) {
      best_q = obj.q;
      best = std::move(theta);
    }
    log.q.push_back(obj.q);
    log.q1.push_back(obj.q1);
    log.q2.push_back(obj.q2);
  }
  if (!parameters().allFinite()) throw TrainingError("training produced non-finite parameters", cfg_.loops);
  if (evaluate().q > best_q) set_parameters(best);

  FlowMap out = map_;
  out.trained_ = true;
  out.log_ = std::move(log);
  std::vector<Vec3> mapped, targets;
  std::vector<Quat> mapped_q;
  for (Eigen::Index i = 0; i < data_in_.rows(); ++i) {
    const Vec3 x = data_in_.row(i).transpose();
    mapped.push_back(out.forward_pos(x));
    targets.push_back(data_out_.row(i).transpose());
    mapped_q.push_back(out.forward_ori(x, local_q_[i]));
  }
  out.position_error_ = position_error(mapped, targets);
  out.orientation_error_ = orientation_error(mapped_q, remote_q_);
  return out;
}

FlowMap FlowMap::train(const Correspondence& corr, const TrainConfig& cfg, const FlowArch& arch) {
  FlowTrainer trainer(corr, cfg, initial(arch, cfg.seed));
  return trainer.run();
}

}  // namespace bimap

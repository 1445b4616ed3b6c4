#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "msb/errors.hpp"
#include "msb/io.hpp"
#include "msb/rng.hpp"
#include "msb/sde.hpp"

namespace msb {

/// Fully connected drift network. Input is concat(x, enc(t), sigma) where
/// enc(t) = (sin(k pi t), cos(k pi t)) for k = 1..time_frequencies; hidden
/// layers use SiLU; the output layer is linear with dimension `dim`.
struct MLPArchitecture {
  std::size_t dim = 1;
  std::size_t hidden_width = 128;
  std::size_t hidden_layers = 4;
  std::size_t time_frequencies = 8;

  std::size_t input_dim() const noexcept { return dim + 2 * time_frequencies + 1; }
  bool operator==(const MLPArchitecture&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;

  bool operator==(const DenseLayer& o) const { return weight == o.weight && bias == o.bias; }
};

class MLPParams {
 public:
  MLPParams() = default;

  /// Every weight and bias zero.
  static MLPParams zeros(const MLPArchitecture& arch) {
    MLPParams p;
    p.arch_ = arch;
    std::size_t in = arch.input_dim();
    for (std::size_t l = 0; l <= arch.hidden_layers; ++l) {
      const std::size_t out = l == arch.hidden_layers ? arch.dim : arch.hidden_width;
      p.layers_.push_back({Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                           Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))});
      in = out;
    }
    return p;
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static MLPParams initialize(const MLPArchitecture& arch, std::uint64_t seed) {
    MLPParams p = zeros(arch);
    CounterRng rng(stream_key(seed, {0x1417}));
    for (auto& layer : p.layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = rng.uniform(-bound, bound);
      for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias[r] = rng.uniform(-bound, bound);
    }
    return p;
  }

  /// Builds from explicit layers; validates that shapes chain.
  static MLPParams from_layers(const MLPArchitecture& arch, std::vector<DenseLayer> layers) {
    MLPParams p = zeros(arch);
    if (layers.size() != p.layers_.size()) throw InvalidArgument("layer count does not match architecture");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].weight.rows() != p.layers_[l].weight.rows() || layers[l].weight.cols() != p.layers_[l].weight.cols() ||
          layers[l].bias.size() != p.layers_[l].bias.size())
        throw InvalidArgument("layer " + std::to_string(l) + " has the wrong shape");
    }
    p.layers_ = std::move(layers);
    return p;
  }

  const MLPArchitecture& architecture() const noexcept { return arch_; }
  std::size_t dim() const noexcept { return arch_.dim; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& layers() noexcept { return layers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool same_shape(const MLPParams& o) const {
    if (!(arch_ == o.arch_) || layers_.size() != o.layers_.size()) return false;
    for (std::size_t l = 0; l < layers_.size(); ++l)
      if (layers_[l].weight.rows() != o.layers_[l].weight.rows() ||
          layers_[l].weight.cols() != o.layers_[l].weight.cols())
        return false;
    return true;
  }

  bool all_finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  bool operator==(const MLPParams& o) const { return arch_ == o.arch_ && layers_ == o.layers_; }

 private:
  MLPArchitecture arch_;
  std::vector<DenseLayer> layers_;
};

namespace detail {

inline Eigen::ArrayXXd logistic(const Eigen::ArrayXXd& z) { return 1.0 / (1.0 + (-z).exp()); }

}  // namespace detail

/// Network input features, one column per sample.
inline Eigen::MatrixXd encode_inputs(const MLPArchitecture& arch, const Eigen::VectorXd& t, const Batch& x,
                                     const Eigen::VectorXd& sigma) {
  const Eigen::Index n = x.cols();
  const auto d = static_cast<Eigen::Index>(arch.dim);
  const auto freqs = static_cast<Eigen::Index>(arch.time_frequencies);
  if (x.rows() != d || t.size() != n || sigma.size() != n) throw InvalidArgument("network input shape mismatch");
  Eigen::MatrixXd in(static_cast<Eigen::Index>(arch.input_dim()), n);
  in.topRows(d) = x;
  if (freqs > 0) {
    // sin/cos of (k+1) pi t by angle addition from the k = 0 pair.
    const Eigen::ArrayXd phase = t.array() * std::numbers::pi;
    const Eigen::RowVectorXd s1 = phase.sin().matrix().transpose();
    const Eigen::RowVectorXd c1 = phase.cos().matrix().transpose();
    in.row(d) = s1;
    in.row(d + freqs) = c1;
    for (Eigen::Index k = 1; k < freqs; ++k) {
      const auto sp = in.row(d + k - 1).array();
      const auto cp = in.row(d + freqs + k - 1).array();
      in.row(d + k) = (sp * c1.array() + cp * s1.array()).matrix();
      in.row(d + freqs + k) = (cp * c1.array() - sp * s1.array()).matrix();
    }
  }
  in.row(d + 2 * freqs) = sigma.transpose();
  return in;
}

/// Batched forward pass, one output column per sample.
inline Batch forward_batch(const MLPParams& params, const Eigen::VectorXd& t, const Batch& x,
                           const Eigen::VectorXd& sigma) {
  Eigen::MatrixXd h = encode_inputs(params.architecture(), t, x, sigma);
  const auto& layers = params.layers();
  Eigen::MatrixXd z;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    z.noalias() = layers[l].weight * h;
    z.colwise() += layers[l].bias;
    if (l + 1 < layers.size()) {
      h = (z.array() / (1.0 + (-z.array()).exp())).matrix();
    } else {
      h.swap(z);
    }
    if (!h.allFinite()) throw NumericError("non-finite activation in layer " + std::to_string(l));
  }
  return h;
}

inline Point forward(const MLPParams& params, double t, const Point& x, double sigma) {
  return forward_batch(params, Eigen::VectorXd::Constant(1, t), x, Eigen::VectorXd::Constant(1, sigma)).col(0);
}

/// Regression samples, one column per sample. An empty weight vector means
/// unit weights.
struct RegressionBatch {
  Eigen::VectorXd t;
  Batch x;
  Batch target;
  Eigen::VectorXd sigma;
  Eigen::VectorXd weight;

  std::size_t size() const noexcept { return static_cast<std::size_t>(t.size()); }
};

struct LossAndGradient {
  double loss = 0.0;
  MLPParams grad;
};

/// loss = mean_j w_j ||forward(t_j, x_j, sigma_j) - target_j||^2 and its exact
/// reverse-mode gradient.
inline LossAndGradient loss_and_gradient(const MLPParams& params, const RegressionBatch& batch) {
  const Eigen::Index n = batch.t.size();
  if (n == 0) throw InvalidArgument("loss_and_gradient needs a nonempty batch");
  if (batch.target.rows() != static_cast<Eigen::Index>(params.dim()) || batch.target.cols() != n)
    throw InvalidArgument("target shape does not match network output");
  if (batch.weight.size() != 0 && batch.weight.size() != n) throw InvalidArgument("one weight per sample required");

  const auto& layers = params.layers();
  const std::size_t depth = layers.size();
  std::vector<Eigen::MatrixXd> inputs(depth);  // input to layer l
  std::vector<Eigen::ArrayXXd> pre(depth);     // pre-activation of hidden layer l
  std::vector<Eigen::ArrayXXd> gate(depth);    // logistic(pre[l])
  inputs[0] = encode_inputs(params.architecture(), batch.t, batch.x, batch.sigma);
  Eigen::MatrixXd out;
  for (std::size_t l = 0; l < depth; ++l) {
    Eigen::MatrixXd z;
    z.noalias() = layers[l].weight * inputs[l];
    z.colwise() += layers[l].bias;
    if (l + 1 < depth) {
      pre[l] = z.array();
      gate[l] = detail::logistic(pre[l]);
      inputs[l + 1] = (pre[l] * gate[l]).matrix();
      if (!inputs[l + 1].allFinite()) throw NumericError("non-finite activation in layer " + std::to_string(l));
    } else {
      out = std::move(z);
      if (!out.allFinite()) throw NumericError("non-finite activation in layer " + std::to_string(l));
    }
  }

  Eigen::MatrixXd residual = out - batch.target;
  Eigen::RowVectorXd sq = residual.colwise().squaredNorm();
  Eigen::MatrixXd delta;
  LossAndGradient result;
  const double inv_n = 1.0 / static_cast<double>(n);
  if (batch.weight.size() == 0) {
    result.loss = sq.sum() * inv_n;
    delta = (2.0 * inv_n) * residual;
  } else {
    result.loss = sq.dot(batch.weight.transpose()) * inv_n;
    delta = residual * ((2.0 * inv_n) * batch.weight).asDiagonal();
  }

  result.grad = MLPParams::zeros(params.architecture());
  auto& grads = result.grad.layers();
  for (std::size_t l = depth; l-- > 0;) {
    grads[l].weight.noalias() = delta * inputs[l].transpose();
    grads[l].bias = delta.rowwise().sum();
    if (l == 0) break;
    Eigen::MatrixXd back;
    back.noalias() = layers[l].weight.transpose() * delta;
    const auto& s = gate[l - 1];
    delta = (back.array() * (s * (1.0 + pre[l - 1] * (1.0 - s)))).matrix();
  }
  return result;
}

/// Adam moments and hyperparameters.
struct AdamState {
  MLPParams first_moment;
  MLPParams second_moment;
  std::uint64_t step = 0;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const MLPParams& params, double learning_rate, double beta1 = 0.9,
                              double beta2 = 0.999, double epsilon = 1e-8) {
    return {MLPParams::zeros(params.architecture()), MLPParams::zeros(params.architecture()), 0, learning_rate,
            beta1, beta2, epsilon};
  }
};

struct AdamResult {
  MLPParams params;
  AdamState state;
};

/// One bias-corrected Adam update; returns new snapshots and leaves the
/// inputs untouched.
inline AdamResult adam_step(const MLPParams& params, const MLPParams& grad, const AdamState& state) {
  if (!params.same_shape(grad) || !params.same_shape(state.first_moment) || !params.same_shape(state.second_moment))
    throw InvalidArgument("adam_step shape mismatch");
  AdamResult r{params, state};
  r.state.step += 1;
  const double t = static_cast<double>(r.state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1, b2 = state.beta2;
  const double lr = state.learning_rate, eps = state.epsilon;
  auto update = [&](auto& p, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < r.params.layers().size(); ++l) {
    auto& pl = r.params.layers()[l];
    auto& ml = r.state.first_moment.layers()[l];
    auto& vl = r.state.second_moment.layers()[l];
    const auto& gl = grad.layers()[l];
    update(pl.weight, ml.weight, vl.weight, gl.weight);
    update(pl.bias, ml.bias, vl.bias, gl.bias);
  }
  return r;
}

// Weights blob: "MSBW", u32 version, u64 dim, u64 time_frequencies, u64 layer
// count, per-layer u64 rows and u64 cols, then per layer the row-major weight
// matrix followed by the bias, all float64.
inline constexpr std::uint32_t kWeightsFormatVersion = 1;

inline std::string serialize_weights(const MLPParams& params) {
  std::ostringstream out(std::ios::binary);
  out.write("MSBW", 4);
  io::put<std::uint32_t>(out, kWeightsFormatVersion);
  io::put<std::uint64_t>(out, params.architecture().dim);
  io::put<std::uint64_t>(out, params.architecture().time_frequencies);
  io::put<std::uint64_t>(out, params.layers().size());
  for (const auto& l : params.layers()) {
    io::put<std::uint64_t>(out, static_cast<std::uint64_t>(l.weight.rows()));
    io::put<std::uint64_t>(out, static_cast<std::uint64_t>(l.weight.cols()));
  }
  for (const auto& l : params.layers()) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = l.weight;
    io::put_doubles(out, rm.data(), static_cast<std::size_t>(rm.size()));
    io::put_doubles(out, l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return std::move(out).str();
}

inline MLPParams parse_weights(const std::string& blob) {
  std::istringstream in(blob, std::ios::binary);
  io::expect_magic(in, "MSBW");
  if (io::get<std::uint32_t>(in) != kWeightsFormatVersion) throw IntegrityError("unsupported weights version");
  MLPArchitecture arch;
  arch.dim = io::get<std::uint64_t>(in);
  arch.time_frequencies = io::get<std::uint64_t>(in);
  const auto count = io::get<std::uint64_t>(in);
  if (count == 0 || count > 1024) throw IntegrityError("implausible layer count");
  std::vector<std::pair<std::uint64_t, std::uint64_t>> dims(count);
  for (auto& [r, c] : dims) {
    r = io::get<std::uint64_t>(in);
    c = io::get<std::uint64_t>(in);
    if (r == 0 || c == 0 || r * c > (std::uint64_t{1} << 28)) throw IntegrityError("implausible layer shape");
  }
  arch.hidden_layers = count - 1;
  arch.hidden_width = count > 1 ? dims.front().first : 0;
  if (dims.front().second != arch.input_dim() || dims.back().first != arch.dim)
    throw IntegrityError("weights header inconsistent with architecture");
  std::vector<DenseLayer> layers;
  for (const auto& [r, c] : dims) {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Eigen::Index>(r),
                                                                              static_cast<Eigen::Index>(c));
    io::get_doubles(in, rm.data(), r * c);
    Eigen::VectorXd bias(static_cast<Eigen::Index>(r));
    io::get_doubles(in, bias.data(), r);
    layers.push_back({rm, bias});
  }
  try {
    return MLPParams::from_layers(arch, std::move(layers));
  } catch (const InvalidArgument& e) {
    throw IntegrityError(std::string("weights blob: ") + e.what());
  }
}

}  // namespace msb

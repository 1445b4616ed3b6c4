#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "msb/errors.hpp"
#include "msb/io.hpp"
#include "msb/mlp.hpp"
#include "msb/sde.hpp"
#include "msb/sha256.hpp"
#include "msb/time_grid.hpp"

namespace msb {

enum class DriftKind { ou, affine, neural, average };

inline std::string to_string(DriftKind k) {
  switch (k) {
    case DriftKind::ou: return "ou";
    case DriftKind::affine: return "affine";
    case DriftKind::neural: return "neural";
    case DriftKind::average: return "average";
  }
  return "?";
}

/// Reference drift -alpha x.
struct OUDrift {
  double alpha = 1.0;
  std::size_t dim = 1;
};

/// A x + c on [start, next piece's start).
struct AffinePiece {
  double start = 0.0;
  Eigen::MatrixXd a;
  Eigen::VectorXd c;
};

/// Piecewise-constant-in-time affine drift.
class AffineDrift {
 public:
  static AffineDrift constant(Eigen::MatrixXd a, Eigen::VectorXd c) {
    return piecewise({AffinePiece{0.0, std::move(a), std::move(c)}});
  }

  static AffineDrift piecewise(std::vector<AffinePiece> pieces) {
    if (pieces.empty()) throw InvalidArgument("affine drift needs at least one piece");
    const auto d = pieces.front().c.size();
    if (d == 0) throw InvalidArgument("affine drift dimension must be positive");
    if (pieces.front().start != 0.0) throw InvalidArgument("first affine piece must start at t = 0");
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const auto& p = pieces[i];
      if (p.a.rows() != d || p.a.cols() != d || p.c.size() != d)
        throw InvalidArgument("affine piece " + std::to_string(i) + " has inconsistent shape");
      if (!p.a.allFinite() || !p.c.allFinite()) throw InvalidArgument("affine coefficients must be finite");
      if (i > 0 && !(p.start > pieces[i - 1].start)) throw InvalidArgument("affine breakpoints must increase");
      if (p.start < 0.0 || p.start >= 1.0) throw InvalidArgument("affine breakpoints must lie in [0, 1)");
    }
    AffineDrift out;
    out.pieces_ = std::move(pieces);
    return out;
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(pieces_.front().c.size()); }
  const std::vector<AffinePiece>& pieces() const noexcept { return pieces_; }

  std::size_t piece_index(double t) const {
    std::size_t idx = 0;
    while (idx + 1 < pieces_.size() && pieces_[idx + 1].start <= t + 1e-9) ++idx;
    return idx;
  }

  const AffinePiece& piece_at(double t) const { return pieces_[piece_index(t)]; }

  Batch eval_batch(double t, const Batch& x) const {
    const auto& p = piece_at(t);
    Batch out = p.a * x;
    out.colwise() += p.c;
    return out;
  }

 private:
  std::vector<AffinePiece> pieces_;
};

struct NeuralDrift {
  std::shared_ptr<const MLPParams> params;
};

class DriftModel;

/// Lazy pointwise mean of two drifts.
struct AverageDrift {
  std::shared_ptr<const DriftModel> first;
  std::shared_ptr<const DriftModel> second;
};

/// Evaluable drift v(t, x, sigma). Immutable; copies share payloads.
class DriftModel {
 public:
  using Variant = std::variant<OUDrift, AffineDrift, NeuralDrift, AverageDrift>;

  static DriftModel ou(double alpha, std::size_t dim) {
    if (!(alpha > 0.0)) throw InvalidArgument("OU alpha must be positive");
    if (dim == 0) throw InvalidArgument("drift dimension must be positive");
    return DriftModel(OUDrift{alpha, dim});
  }
  static DriftModel affine(AffineDrift a) { return DriftModel(std::move(a)); }
  static DriftModel neural(MLPParams p) {
    if (!p.all_finite()) throw InvalidArgument("network parameters must be finite");
    return DriftModel(NeuralDrift{std::make_shared<const MLPParams>(std::move(p))});
  }
  static DriftModel neural(std::shared_ptr<const MLPParams> p) { return DriftModel(NeuralDrift{std::move(p)}); }

  DriftKind kind() const noexcept { return static_cast<DriftKind>(payload_.index()); }
  const Variant& payload() const noexcept { return payload_; }

  std::size_t dim() const {
    return std::visit(
        [](const auto& v) -> std::size_t {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, OUDrift>) return v.dim;
          else if constexpr (std::is_same_v<T, AffineDrift>) return v.dim();
          else if constexpr (std::is_same_v<T, NeuralDrift>) return v.params->dim();
          else return v.first->dim();
        },
        payload_);
  }

  Batch eval_batch(double t, const Batch& x, const Eigen::VectorXd& sigma) const {
    if (static_cast<std::size_t>(x.rows()) != dim()) throw InvalidArgument("drift input dimension mismatch");
    Batch out = std::visit(
        [&](const auto& v) -> Batch {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, OUDrift>) return -v.alpha * x;
          else if constexpr (std::is_same_v<T, AffineDrift>) return v.eval_batch(t, x);
          else if constexpr (std::is_same_v<T, NeuralDrift>)
            return forward_batch(*v.params, Eigen::VectorXd::Constant(x.cols(), t), x, sigma);
          else return 0.5 * (v.first->eval_batch(t, x, sigma) + v.second->eval_batch(t, x, sigma));
        },
        payload_);
    if (!out.allFinite()) throw NumericError("non-finite output from " + to_string(kind()) + " drift");
    return out;
  }

  /// Per-sample times; used by training code that mixes times in one batch.
  Batch eval_batch(const Eigen::VectorXd& t, const Batch& x, const Eigen::VectorXd& sigma) const {
    if (const auto* nn = std::get_if<NeuralDrift>(&payload_)) {
      Batch out = forward_batch(*nn->params, t, x, sigma);
      if (!out.allFinite()) throw NumericError("non-finite output from neural drift");
      return out;
    }
    if (const auto* avg = std::get_if<AverageDrift>(&payload_))
      return 0.5 * (avg->first->eval_batch(t, x, sigma) + avg->second->eval_batch(t, x, sigma));
    Batch out(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      out.col(j) = eval_batch(t[j], x.col(j), sigma.segment(j, 1)).col(0);
    return out;
  }

  Point eval(double t, const Point& x, double sigma) const {
    return eval_batch(t, Batch(x), Eigen::VectorXd::Constant(1, sigma)).col(0);
  }

 private:
  explicit DriftModel(Variant v) : payload_(std::move(v)) {}
  friend DriftModel average_drifts(const DriftModel&, const DriftModel&);

  Variant payload_;
};

/// v(t, x, sigma) for t in [0, 1] and finite x.
inline Point eval_drift(const DriftModel& model, double t, const Point& x, double sigma) {
  if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("drift time must lie in [0, 1]");
  if (!x.allFinite()) throw InvalidArgument("drift input must be finite");
  return model.eval(t, x, sigma);
}

/// The pointwise mean (f + b) / 2 as a lazy Average. Nesting is limited to a
/// single pending average: children may not themselves be averages.
inline DriftModel average_drifts(const DriftModel& forward, const DriftModel& backward) {
  if (forward.dim() != backward.dim()) throw InvalidArgument("average_drifts dimension mismatch");
  if (forward.kind() == DriftKind::average || backward.kind() == DriftKind::average)
    throw InvalidArgument("average_drifts: children must not be pending averages");
  return DriftModel(AverageDrift{std::make_shared<const DriftModel>(forward), std::make_shared<const DriftModel>(backward)});
}

/// Exact affine form of an affine (or OU) drift.
inline AffineDrift as_affine(const DriftModel& model) {
  if (const auto* a = std::get_if<AffineDrift>(&model.payload())) return *a;
  if (const auto* ou = std::get_if<OUDrift>(&model.payload())) {
    const auto d = static_cast<Eigen::Index>(ou->dim);
    return AffineDrift::constant(-ou->alpha * Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d));
  }
  throw InvalidArgument("drift of kind " + to_string(model.kind()) + " is not affine");
}

/// Collapses an average of two affine (or OU) drifts into one affine drift
/// over the union of both breakpoint sets.
inline AffineDrift collapse_affine_average(const DriftModel& avg) {
  const auto* node = std::get_if<AverageDrift>(&avg.payload());
  if (!node) throw InvalidArgument("collapse_affine_average expects an average drift");
  const AffineDrift f = as_affine(*node->first);
  const AffineDrift b = as_affine(*node->second);
  std::vector<double> starts;
  for (const auto& p : f.pieces()) starts.push_back(p.start);
  for (const auto& p : b.pieces()) starts.push_back(p.start);
  std::sort(starts.begin(), starts.end());
  starts.erase(std::unique(starts.begin(), starts.end(), [](double x, double y) { return std::abs(x - y) <= 1e-12; }),
               starts.end());
  std::vector<AffinePiece> pieces;
  for (double s : starts) {
    const auto& pf = f.piece_at(s);
    const auto& pb = b.piece_at(s);
    pieces.push_back({s, 0.5 * (pf.a + pb.a), 0.5 * (pf.c + pb.c)});
  }
  return AffineDrift::piecewise(std::move(pieces));
}

// JSON documents. Neural payloads reference their weights blob by SHA-256;
// the blob is stored next to the document as <sha>.msbw.

inline nlohmann::json drift_to_json(const DriftModel& model, const std::filesystem::path& blob_dir) {
  using nlohmann::json;
  return std::visit(
      [&](const auto& v) -> json {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, OUDrift>) {
          return {{"variant", "ou"}, {"alpha", v.alpha}, {"dim", v.dim}};
        } else if constexpr (std::is_same_v<T, AffineDrift>) {
          json pieces = json::array();
          for (const auto& p : v.pieces()) {
            json a = json::array();
            for (Eigen::Index r = 0; r < p.a.rows(); ++r) {
              json row = json::array();
              for (Eigen::Index c = 0; c < p.a.cols(); ++c) row.push_back(p.a(r, c));
              a.push_back(row);
            }
            pieces.push_back({{"start", p.start}, {"A", a}, {"c", std::vector<double>(p.c.data(), p.c.data() + p.c.size())}});
          }
          return {{"variant", "affine"}, {"dim", v.dim()}, {"pieces", pieces}};
        } else if constexpr (std::is_same_v<T, NeuralDrift>) {
          const std::string blob = serialize_weights(*v.params);
          const std::string hash = sha256_hex(blob);
          const std::string file = hash + ".msbw";
          if (!std::filesystem::exists(blob_dir / file)) io::write_text(blob_dir / file, blob);
          const auto& arch = v.params->architecture();
          return {{"variant", "neural"},
                  {"weights_sha256", hash},
                  {"weights_file", file},
                  {"dim", arch.dim},
                  {"hidden_width", arch.hidden_width},
                  {"hidden_layers", arch.hidden_layers},
                  {"time_frequencies", arch.time_frequencies}};
        } else {
          return {{"variant", "average"},
                  {"children", json::array({drift_to_json(*v.first, blob_dir), drift_to_json(*v.second, blob_dir)})}};
        }
      },
      model.payload());
}

inline DriftModel drift_from_json(const nlohmann::json& doc, const std::filesystem::path& blob_dir) {
  const std::string variant = doc.at("variant").get<std::string>();
  if (variant == "ou") return DriftModel::ou(doc.at("alpha").get<double>(), doc.at("dim").get<std::size_t>());
  if (variant == "affine") {
    std::vector<AffinePiece> pieces;
    for (const auto& p : doc.at("pieces")) {
      const auto rows = p.at("A").get<std::vector<std::vector<double>>>();
      const auto c = p.at("c").get<std::vector<double>>();
      const auto d = static_cast<Eigen::Index>(c.size());
      Eigen::MatrixXd a(d, d);
      if (static_cast<Eigen::Index>(rows.size()) != d) throw InvalidArgument("affine A has wrong row count");
      for (Eigen::Index r = 0; r < d; ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != d) throw InvalidArgument("affine A has wrong column count");
        for (Eigen::Index k = 0; k < d; ++k) a(r, k) = rows[r][k];
      }
      pieces.push_back({p.at("start").get<double>(), a, Eigen::Map<const Eigen::VectorXd>(c.data(), d)});
    }
    return DriftModel::affine(AffineDrift::piecewise(std::move(pieces)));
  }
  if (variant == "neural") {
    const std::string hash = doc.at("weights_sha256").get<std::string>();
    const auto file = blob_dir / doc.at("weights_file").get<std::string>();
    if (!std::filesystem::exists(file)) throw IntegrityError("missing weights blob " + file.string());
    const std::string blob = io::read_text(file);
    if (sha256_hex(blob) != hash) throw IntegrityError("weights blob hash mismatch for " + file.string());
    return DriftModel::neural(parse_weights(blob));
  }
  if (variant == "average") {
    const auto& children = doc.at("children");
    if (children.size() != 2) throw InvalidArgument("average drift needs exactly two children");
    return average_drifts(drift_from_json(children[0], blob_dir), drift_from_json(children[1], blob_dir));
  }
  throw InvalidArgument("unknown drift variant '" + variant + "'");
}

}  // namespace msb

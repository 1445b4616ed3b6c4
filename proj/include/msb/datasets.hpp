#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msb/errors.hpp"
#include "msb/io.hpp"
#include "msb/rng.hpp"
#include "msb/sde.hpp"

namespace msb {

enum class DatasetKind { gaussian, two_circles, checkerboard, moons };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::gaussian: return "gaussian";
    case DatasetKind::two_circles: return "two_circles";
    case DatasetKind::checkerboard: return "checkerboard";
    case DatasetKind::moons: return "moons";
  }
  return "?";
}

inline DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "gaussian") return DatasetKind::gaussian;
  if (s == "two_circles") return DatasetKind::two_circles;
  if (s == "checkerboard") return DatasetKind::checkerboard;
  if (s == "moons") return DatasetKind::moons;
  throw InvalidArgument("unknown dataset kind '" + s + "'");
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::gaussian;
  std::size_t dim = 1;  // gaussian only; the 2-D sets ignore it
  double r_inner = 1.0;
  double r_outer = 2.0;
  double jitter = 0.0;
  std::size_t cells = 4;
  double extent = 2.0;
  std::size_t count = 10000;
  std::uint64_t seed = 0;

  std::size_t data_dim() const noexcept { return kind == DatasetKind::gaussian ? dim : 2; }

  void validate() const {
    if (kind == DatasetKind::gaussian && dim == 0) throw InvalidArgument("gaussian dimension must be positive");
    if (kind == DatasetKind::two_circles && !(r_inner > 0.0 && r_inner < r_outer))
      throw InvalidArgument("two_circles requires 0 < r_inner < r_outer");
    if (!(jitter >= 0.0)) throw InvalidArgument("jitter must be >= 0");
    if (kind == DatasetKind::checkerboard && (cells == 0 || !(extent > 0.0)))
      throw InvalidArgument("checkerboard requires cells > 0 and extent > 0");
  }
};

struct SampleBatch {
  Batch points;  // d x N
  std::optional<std::vector<int>> labels;

  std::size_t size() const noexcept { return static_cast<std::size_t>(points.cols()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(points.rows()); }
};

namespace detail {

struct CheckerCell {
  int row;
  int col;
};

inline std::vector<CheckerCell> checker_on_cells(std::size_t cells) {
  std::vector<CheckerCell> on;
  for (std::size_t r = 0; r < cells; ++r)
    for (std::size_t c = 0; c < cells; ++c)
      if ((r + c) % 2 == 0) on.push_back({static_cast<int>(r), static_cast<int>(c)});
  return on;
}

}  // namespace detail

/// Deterministic given spec.seed; sample j uses its own RNG stream. Labels:
/// two_circles 0 = inner / 1 = outer, moons 0 = upper / 1 = lower, checkerboard
/// the index of the occupied cell. Gaussian data is unlabeled.
inline SampleBatch sample_dataset(const DatasetSpec& spec) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.count);
  SampleBatch out;
  out.points.resize(static_cast<Eigen::Index>(spec.data_dim()), n);
  std::vector<int> labels;
  if (spec.kind != DatasetKind::gaussian) labels.resize(spec.count);
  const auto on_cells = detail::checker_on_cells(spec.cells);
  const double cell_size = 2.0 * spec.extent / static_cast<double>(spec.cells);

  for (Eigen::Index j = 0; j < n; ++j) {
    CounterRng rng(stream_key(spec.seed, {0xDA7A, static_cast<std::uint64_t>(j)}));
    switch (spec.kind) {
      case DatasetKind::gaussian:
        for (Eigen::Index k = 0; k < out.points.rows(); ++k) out.points(k, j) = rng.normal();
        break;
      case DatasetKind::two_circles: {
        const int outer = rng.uniform() < 0.5 ? 0 : 1;
        const double theta = 2.0 * std::numbers::pi * rng.uniform();
        double r = outer ? spec.r_outer : spec.r_inner;
        if (spec.jitter > 0.0) r += spec.jitter * rng.normal();
        out.points(0, j) = r * std::cos(theta);
        out.points(1, j) = r * std::sin(theta);
        labels[j] = outer;
        break;
      }
      case DatasetKind::checkerboard: {
        const auto idx = static_cast<std::size_t>(rng.below(on_cells.size()));
        const auto& cell = on_cells[idx];
        out.points(0, j) = -spec.extent + (cell.col + rng.uniform()) * cell_size;
        out.points(1, j) = -spec.extent + (cell.row + rng.uniform()) * cell_size;
        labels[j] = static_cast<int>(idx);
        break;
      }
      case DatasetKind::moons: {
        const int lower = rng.uniform() < 0.5 ? 0 : 1;
        const double theta = std::numbers::pi * rng.uniform();
        double x = lower ? 1.0 - std::cos(theta) : std::cos(theta);
        double y = lower ? 0.5 - std::sin(theta) : std::sin(theta);
        if (spec.jitter > 0.0) {
          x += spec.jitter * rng.normal();
          y += spec.jitter * rng.normal();
        }
        out.points(0, j) = x - 0.5;
        out.points(1, j) = y - 0.25;
        labels[j] = lower;
        break;
      }
    }
  }
  if (spec.kind != DatasetKind::gaussian) out.labels = std::move(labels);
  return out;
}

/// Nearest-mode labels for arbitrary points, matching sample_dataset's label
/// convention.
inline std::vector<int> assign_modes(const DatasetSpec& spec, const Batch& points) {
  std::vector<int> labels(static_cast<std::size_t>(points.cols()));
  switch (spec.kind) {
    case DatasetKind::gaussian:
      throw InvalidArgument("gaussian data has no modes");
    case DatasetKind::two_circles:
      for (Eigen::Index j = 0; j < points.cols(); ++j) {
        const double r = points.col(j).norm();
        labels[j] = std::abs(r - spec.r_outer) < std::abs(r - spec.r_inner) ? 1 : 0;
      }
      break;
    case DatasetKind::checkerboard: {
      const auto on = detail::checker_on_cells(spec.cells);
      const double cs = 2.0 * spec.extent / static_cast<double>(spec.cells);
      for (Eigen::Index j = 0; j < points.cols(); ++j) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < on.size(); ++c) {
          const double cx = -spec.extent + (on[c].col + 0.5) * cs;
          const double cy = -spec.extent + (on[c].row + 0.5) * cs;
          const double dist = std::hypot(points(0, j) - cx, points(1, j) - cy);
          if (dist < best) {
            best = dist;
            labels[j] = static_cast<int>(c);
          }
        }
      }
      break;
    }
    case DatasetKind::moons:
      // Distance to each moon's centre arc.
      for (Eigen::Index j = 0; j < points.cols(); ++j) {
        const double x = points(0, j) + 0.5, y = points(1, j) + 0.25;
        auto arc_dist = [](double px, double py, double cx, double cy, bool upper) {
          const double ang = std::atan2(py - cy, px - cx);
          const bool on_arc = upper ? (ang >= 0.0) : (ang <= 0.0);
          if (on_arc) return std::abs(std::hypot(px - cx, py - cy) - 1.0);
          const double ex1 = cx + 1.0, ex2 = cx - 1.0;
          return std::min(std::hypot(px - ex1, py - cy), std::hypot(px - ex2, py - cy));
        };
        labels[j] = arc_dist(x, y, 1.0, 0.5, false) < arc_dist(x, y, 0.0, 0.0, true) ? 1 : 0;
      }
      break;
  }
  return labels;
}

/// Draws n fresh points from the data distribution for a given stream seed.
struct DataSampler {
  std::size_t dim = 1;
  std::function<Batch(std::size_t n, std::uint64_t seed)> draw;
};

inline DataSampler make_sampler(DatasetSpec spec) {
  spec.validate();
  const std::size_t d = spec.data_dim();
  return {d, [spec](std::size_t n, std::uint64_t seed) {
            DatasetSpec s = spec;
            s.count = n;
            s.seed = seed;
            return sample_dataset(s).points;
          }};
}

/// Columns: idx, x_0..x_{d-1}, label (empty when unlabeled).
inline void write_sample_csv(const SampleBatch& batch, std::ostream& out) {
  out << "idx";
  for (std::size_t k = 0; k < batch.dim(); ++k) out << ",x_" << k;
  out << ",label\n";
  for (std::size_t j = 0; j < batch.size(); ++j) {
    out << j;
    for (std::size_t k = 0; k < batch.dim(); ++k)
      out << ',' << io::format_double(batch.points(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)));
    out << ',';
    if (batch.labels) out << (*batch.labels)[j];
    out << '\n';
  }
}

inline SampleBatch read_sample_csv(const std::filesystem::path& path) {
  const auto table = io::read_csv(path);
  std::vector<std::size_t> cols;
  for (std::size_t k = 0;; ++k) {
    const std::string name = "x_" + std::to_string(k);
    bool found = false;
    for (std::size_t c = 0; c < table.header.size(); ++c)
      if (table.header[c] == name) {
        cols.push_back(c);
        found = true;
      }
    if (!found) break;
  }
  if (cols.empty()) throw InvalidArgument("sample CSV has no x_0 column: " + path.string());
  std::optional<std::size_t> label_col;
  for (std::size_t c = 0; c < table.header.size(); ++c)
    if (table.header[c] == "label") label_col = c;

  SampleBatch batch;
  batch.points.resize(static_cast<Eigen::Index>(cols.size()), static_cast<Eigen::Index>(table.rows.size()));
  std::vector<int> labels;
  bool all_labeled = label_col.has_value() && !table.rows.empty();
  for (std::size_t j = 0; j < table.rows.size(); ++j) {
    for (std::size_t k = 0; k < cols.size(); ++k)
      batch.points(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = io::parse_double(table.rows[j][cols[k]]);
    if (label_col) {
      const auto& f = table.rows[j][*label_col];
      if (f.empty()) all_labeled = false;
      else labels.push_back(std::stoi(f));
    }
  }
  if (!batch.points.allFinite()) throw InvalidArgument("sample CSV contains non-finite values");
  if (all_labeled) batch.labels = std::move(labels);
  return batch;
}

}  // namespace msb

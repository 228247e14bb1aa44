// Coarse-grained densities and the coarse-grained H-function.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qrelax/dynamics.hpp"
#include "qrelax/ensemble.hpp"

namespace qrelax {

/// Uniform rows x cols partition of a box. Row index follows x_b, column index x_a.
struct CoarseGrid {
  Box box;
  int rows = 16;
  int cols = 16;
  int subsamples = 8;  // s x s Gauss-Legendre nodes per cell for |psi|^2

  void validate() const;
  std::size_t cell_count() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  double cell_width() const { return (box.xmax - box.xmin) / cols; }
  double cell_height() const { return (box.ymax - box.ymin) / rows; }
  double cell_area() const { return cell_width() * cell_height(); }
  /// Flat index row * cols + col, or nullopt outside the box.
  std::optional<std::size_t> cell_of(Point2 p) const;
};

/// Per-cell values, row-major.
struct CellArray {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  CellArray() = default;
  CellArray(int r, int c, double fill = 0.0)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), fill) {}
  double& at(int r, int c) { return values[static_cast<std::size_t>(r * cols + c)]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r * cols + c)]; }
  /// sum(values) * area
  double integral(double cell_area) const;
  void write(std::ostream& out) const;  // rows x cols numeric matrix
};

struct CoarseRho {
  CellArray density;
  std::size_t in_box = 0;
  std::size_t out_of_box = 0;
  std::size_t empty_cells = 0;
};

/// Histogram / (in-box count * cell area). Throws if no point lies in the box.
CoarseRho coarse_rho(std::span<const Point2> positions, const CoarseGrid& grid);

struct Psi2Thresholds {
  double fail_below = 0.95;
  double warn_below = 0.99;
};

struct CoarsePsi2 {
  CellArray density;
  double raw_box_mass = 0.0;
  bool low_mass_warning = false;
};

/// Per-cell mean of density_original by s x s Gauss-Legendre quadrature, renormalised over the box.
CoarsePsi2 coarse_psi2(const WaveFunction& wf, double t, const CoarseGrid& grid,
                       const Psi2Thresholds& thresholds = {});

/// sum rho ln(rho/psi2) * cell_area with 0 ln 0 = 0 and psi2 floored at 1e-300.
double h_function(const CellArray& rho, const CellArray& psi2, const CoarseGrid& grid);

enum class HMethod { kForward, kBacktracking };
const char* to_string(HMethod method);

struct HPoint {
  double time = 0.0;
  double h = 0.0;
  std::size_t empty_cells = 0;
  double out_of_box_fraction = 0.0;
  std::size_t floored_cells = 0;  // rho > 0 where psi2 hit the floor
  double psi2_box_mass = 1.0;     // raw |psi|^2 mass inside the box before renormalising
};

struct HSeries {
  HMethod method = HMethod::kForward;
  std::vector<HPoint> points;

  std::vector<double> times() const;
  std::vector<double> values() const;
  /// CSV: time,H,method,empty_cells,oob_frac
  void write_csv(std::ostream& out, bool header = true) const;
  static HSeries read_csv(const std::filesystem::path& path);
};

/// FTM: coarse_rho of each snapshot against coarse_psi2 at the same time.
/// Optional sinks receive the per-time cell arrays.
struct GridSink {
  std::function<void(std::size_t index, const CellArray& rho, const CellArray& psi2)> on_time;
};
HSeries h_series_ftm(const SnapshotSet& snapshots, const WaveFunction& wf, const CoarseGrid& grid,
                     const GridSink* sink = nullptr, const Psi2Thresholds& thresholds = {});

/// Bootstrap standard deviation of the FTM H-value for one snapshot.
double bootstrap_h_ftm(std::span<const Point2> positions, const CellArray& psi2, const CoarseGrid& grid,
                       int replicates, std::uint64_t seed);

using InitialDensity = std::function<double(Point2)>;

struct BacktrackOptions {
  int points_per_cell = 16;  // must be a perfect square; lattice side = sqrt
  unsigned workers = 0;
  int bootstrap_replicates = 0;  // 0 disables error estimates
  std::uint64_t bootstrap_seed = 1;
  Psi2Thresholds thresholds;
};

struct BacktrackResult {
  HSeries series;
  std::vector<double> bootstrap_std;  // per time; empty if disabled
  std::size_t rejected_points = 0;
};

/// Backtracking estimator: for each time t, a Gauss-Legendre lattice of points per cell
/// is integrated back to t = 0; rho(q, t) = |psi(q,t)|^2 rho0(q0) / |psi(q0,0)|^2
/// since rho/|psi|^2 is constant along trajectories. Cell means give rho-bar,
/// renormalised over the box. Throws if every point of some cell is rejected.
BacktrackResult h_series_backtracking(const WaveFunction& wf, const InitialDensity& rho0,
                                      const CoarseGrid& grid, std::span<const double> times,
                                      const IntegratorConfig& cfg, const BacktrackOptions& options = {});

}  // namespace qrelax

#include "qrelax/metrics.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

#include "qrelax/csv.hpp"
#include "qrelax/parallel.hpp"

namespace qrelax {

namespace {
constexpr double kPsi2Floor = 1e-300;
}

void CoarseGrid::validate() const {
  box.validate();
  if (rows < 2 || cols < 2) throw std::domain_error("coarse grid: need at least 2x2 cells");
  if (subsamples < 1) throw std::domain_error("coarse grid: subsamples must be >= 1");
}

std::optional<std::size_t> CoarseGrid::cell_of(Point2 p) const {
  if (!box.contains(p)) return std::nullopt;
  int c = static_cast<int>((p.x - box.xmin) / cell_width());
  int r = static_cast<int>((p.y - box.ymin) / cell_height());
  // Guard against rounding at the upper edge.
  c = std::min(c, cols - 1);
  r = std::min(r, rows - 1);
  return static_cast<std::size_t>(r * cols + c);
}

double CellArray::integral(double cell_area) const {
  double s = 0.0;
  for (double v : values) s += v;
  return s * cell_area;
}

void CellArray::write(std::ostream& out) const {
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (c) out << ',';
      out << format_double(at(r, c));
    }
    out << '\n';
  }
}

CoarseRho coarse_rho(std::span<const Point2> positions, const CoarseGrid& grid) {
  grid.validate();
  std::vector<std::size_t> counts(grid.cell_count(), 0);
  CoarseRho out;
  for (const auto& p : positions) {
    if (auto cell = grid.cell_of(p)) {
      ++counts[*cell];
      ++out.in_box;
    } else {
      ++out.out_of_box;
    }
  }
  if (out.in_box == 0) throw std::runtime_error("coarse_rho: no points inside the box");
  out.density = CellArray(grid.rows, grid.cols);
  const double norm = 1.0 / (static_cast<double>(out.in_box) * grid.cell_area());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.density.values[i] = static_cast<double>(counts[i]) * norm;
    if (counts[i] == 0) ++out.empty_cells;
  }
  return out;
}

namespace {

struct GaussRule {
  std::vector<double> nodes;    // on [0, 1]
  std::vector<double> weights;  // sum to 1
};

// Gauss-Legendre nodes by Newton iteration on P_n.
GaussRule gauss_legendre(int n) {
  GaussRule rule;
  for (int i = 1; i <= n; ++i) {
    double x = std::cos(std::numbers::pi * (i - 0.25) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      const double p = std::legendre(n, x);
      dp = n * (x * p - std::legendre(n - 1, x)) / (x * x - 1.0);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double wgt = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes.push_back(0.5 * (1.0 - x));
    rule.weights.push_back(0.5 * wgt);
  }
  return rule;
}

}  // namespace

CoarsePsi2 coarse_psi2(const WaveFunction& wf, double t, const CoarseGrid& grid,
                       const Psi2Thresholds& thresholds) {
  grid.validate();
  const GaussRule rule = gauss_legendre(grid.subsamples);
  const int s = grid.subsamples;
  const double w = grid.cell_width(), h = grid.cell_height();
  CoarsePsi2 out;
  out.density = CellArray(grid.rows, grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      double sum = 0.0;
      for (int i = 0; i < s; ++i) {
        const double xb = grid.box.ymin + (r + rule.nodes[i]) * h;
        double row = 0.0;
        for (int j = 0; j < s; ++j) {
          const double xa = grid.box.xmin + (c + rule.nodes[j]) * w;
          row += rule.weights[j] * wf.density_original(xa, xb, t);
        }
        sum += rule.weights[i] * row;
      }
      out.density.at(r, c) = sum;
    }
  }
  out.raw_box_mass = out.density.integral(grid.cell_area());
  if (out.raw_box_mass < thresholds.fail_below)
    throw std::runtime_error("coarse_psi2: only " + std::to_string(out.raw_box_mass) +
                             " of |psi|^2 lies inside the box");
  out.low_mass_warning = out.raw_box_mass < thresholds.warn_below;
  for (double& v : out.density.values) v /= out.raw_box_mass;
  return out;
}

namespace {

struct HValue {
  double h = 0.0;
  std::size_t floored = 0;
};

HValue h_function_detail(const CellArray& rho, const CellArray& psi2, double cell_area) {
  if (rho.values.size() != psi2.values.size())
    throw std::invalid_argument("h_function: cell arrays differ in shape");
  HValue out;
  for (std::size_t i = 0; i < rho.values.size(); ++i) {
    const double r = rho.values[i];
    const double q = psi2.values[i];
    if (!std::isfinite(r) || !std::isfinite(q)) throw std::domain_error("h_function: non-finite cell value");
    if (r <= 0.0) continue;
    if (q < kPsi2Floor) ++out.floored;
    out.h += r * std::log(r / std::max(q, kPsi2Floor));
  }
  out.h *= cell_area;
  return out;
}

}  // namespace

double h_function(const CellArray& rho, const CellArray& psi2, const CoarseGrid& grid) {
  return h_function_detail(rho, psi2, grid.cell_area()).h;
}

const char* to_string(HMethod method) { return method == HMethod::kForward ? "FTM" : "backtracking"; }

std::vector<double> HSeries::times() const {
  std::vector<double> v;
  for (const auto& p : points) v.push_back(p.time);
  return v;
}

std::vector<double> HSeries::values() const {
  std::vector<double> v;
  for (const auto& p : points) v.push_back(p.h);
  return v;
}

void HSeries::write_csv(std::ostream& out, bool header) const {
  if (header) out << "time,H,method,empty_cells,oob_frac\n";
  for (const auto& p : points)
    out << format_double(p.time) << ',' << format_double(p.h) << ',' << to_string(method) << ','
        << p.empty_cells << ',' << format_double(p.out_of_box_fraction) << '\n';
}

HSeries HSeries::read_csv(const std::filesystem::path& path) {
  const auto rows = qrelax::read_csv(path);
  if (rows.empty() || rows[0].size() != 5 || rows[0][0] != "time")
    throw std::runtime_error("h_series: unexpected header in " + path.string());
  HSeries s;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i];
    if (f.size() != 5) throw std::runtime_error("h_series: malformed row in " + path.string());
    s.method = f[2] == "FTM" ? HMethod::kForward : HMethod::kBacktracking;
    s.points.push_back({std::stod(f[0]), std::stod(f[1]), std::stoul(f[3]), std::stod(f[4]), 0});
  }
  return s;
}

HSeries h_series_ftm(const SnapshotSet& snapshots, const WaveFunction& wf, const CoarseGrid& grid,
                     const GridSink* sink, const Psi2Thresholds& thresholds) {
  HSeries series;
  series.method = HMethod::kForward;
  for (std::size_t k = 0; k < snapshots.times.size(); ++k) {
    const double t = snapshots.times[k];
    const CoarseRho rho = coarse_rho(snapshots.positions[k], grid);
    const CoarsePsi2 psi2 = coarse_psi2(wf, t, grid, thresholds);
    const HValue hv = h_function_detail(rho.density, psi2.density, grid.cell_area());
    const double total = static_cast<double>(rho.in_box + rho.out_of_box);
    series.points.push_back({t, hv.h, rho.empty_cells, static_cast<double>(rho.out_of_box) / total, hv.floored,
                             psi2.raw_box_mass});
    if (sink && sink->on_time) sink->on_time(k, rho.density, psi2.density);
  }
  return series;
}

double bootstrap_h_ftm(std::span<const Point2> positions, const CellArray& psi2, const CoarseGrid& grid,
                       int replicates, std::uint64_t seed) {
  if (replicates < 2) throw std::domain_error("bootstrap: need at least two replicates");
  if (positions.empty()) throw std::domain_error("bootstrap: no positions");
  // Resampling positions is equivalent to resampling their cell labels.
  std::vector<std::optional<std::size_t>> labels;
  labels.reserve(positions.size());
  for (const auto& p : positions) labels.push_back(grid.cell_of(p));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, positions.size() - 1);
  std::vector<std::size_t> counts(grid.cell_count());
  double sum = 0.0, sum2 = 0.0;
  int used = 0;
  for (int b = 0; b < replicates; ++b) {
    std::fill(counts.begin(), counts.end(), 0);
    std::size_t in_box = 0;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const auto& cell = labels[pick(rng)];
      if (cell) {
        ++counts[*cell];
        ++in_box;
      }
    }
    if (in_box == 0) continue;
    CellArray rho(grid.rows, grid.cols);
    const double norm = 1.0 / (static_cast<double>(in_box) * grid.cell_area());
    for (std::size_t i = 0; i < counts.size(); ++i) rho.values[i] = static_cast<double>(counts[i]) * norm;
    const double h = h_function(rho, psi2, grid);
    sum += h;
    sum2 += h * h;
    ++used;
  }
  if (used < 2) return 0.0;
  const double mean = sum / used;
  return std::sqrt(std::max(0.0, (sum2 - used * mean * mean) / (used - 1)));
}

BacktrackResult h_series_backtracking(const WaveFunction& wf, const InitialDensity& rho0,
                                      const CoarseGrid& grid, std::span<const double> times,
                                      const IntegratorConfig& cfg, const BacktrackOptions& options) {
  grid.validate();
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(options.points_per_cell))));
  if (side < 1 || side * side != options.points_per_cell)
    throw std::domain_error("backtracking: points_per_cell must be a perfect square");

  // Lattice points: cell (r, c), sub-position (i, j) on the same Gauss-Legendre
  // nodes as coarse_psi2, so equilibrium reproduces psi2-bar exactly.
  const GaussRule rule = gauss_legendre(side);
  const std::size_t per_cell = static_cast<std::size_t>(options.points_per_cell);
  const std::size_t cells = grid.cell_count();
  std::vector<double> weight(per_cell);
  for (int i = 0; i < side; ++i)
    for (int j = 0; j < side; ++j) weight[static_cast<std::size_t>(i * side + j)] = rule.weights[i] * rule.weights[j];
  std::vector<Point2> lattice;
  lattice.reserve(cells * per_cell);
  for (int r = 0; r < grid.rows; ++r)
    for (int c = 0; c < grid.cols; ++c)
      for (int i = 0; i < side; ++i)
        for (int j = 0; j < side; ++j)
          lattice.push_back({grid.box.xmin + (c + rule.nodes[j]) * grid.cell_width(),
                             grid.box.ymin + (r + rule.nodes[i]) * grid.cell_height()});

  BacktrackResult result;
  result.series.method = HMethod::kBacktracking;
  std::mt19937_64 boot_rng(options.bootstrap_seed);

  for (double t : times) {
    // values[p] = rho(q_p, t), NaN when the backward trajectory was rejected.
    std::vector<double> values(lattice.size(), 0.0);
    if (t == 0.0) {
      for (std::size_t p = 0; p < lattice.size(); ++p) values[p] = rho0(lattice[p]);
    } else {
      IntegratorConfig back = cfg;
      back.record_times = {t, 0.0};
      parallel_for(lattice.size(), options.workers, [&](std::size_t p) {
        const Point2 q = lattice[p];
        const Trajectory tr = integrate_verified(wf, q, back);
        if (!tr.accepted()) {
          values[p] = std::nan("");
          return;
        }
        const Point2 q0 = tr.original(1, wf.mass());
        const double psi_now = wf.density_original(q.x, q.y, t);
        const double psi_then = std::max(wf.density_original(q0.x, q0.y, 0.0), kPsi2Floor);
        values[p] = psi_now * rho0(q0) / psi_then;
      });
    }

    auto cell_means = [&](const std::vector<std::size_t>* resample_index) {
      CellArray rho(grid.rows, grid.cols);
      for (std::size_t cell = 0; cell < cells; ++cell) {
        double sum = 0.0, wsum = 0.0;
        for (std::size_t k = 0; k < per_cell; ++k) {
          const std::size_t local = resample_index ? (*resample_index)[cell * per_cell + k] : k;
          const double v = values[cell * per_cell + local];
          if (std::isnan(v)) continue;
          sum += weight[local] * v;
          wsum += weight[local];
        }
        if (wsum == 0.0) throw std::runtime_error("backtracking: every point of a cell was rejected");
        rho.values[cell] = sum / wsum;
      }
      const double mass = rho.integral(grid.cell_area());
      if (!(mass > 0.0)) throw std::runtime_error("backtracking: zero density over the box");
      for (double& v : rho.values) v /= mass;
      return rho;
    };

    std::size_t rejected = 0;
    for (double v : values)
      if (std::isnan(v)) ++rejected;
    result.rejected_points += rejected;

    const CellArray rho = cell_means(nullptr);
    const CoarsePsi2 coarse = coarse_psi2(wf, t, grid, options.thresholds);
    const CellArray& psi2 = coarse.density;
    const HValue hv = h_function_detail(rho, psi2, grid.cell_area());
    std::size_t empty = 0;
    for (double v : rho.values)
      if (v <= 0.0) ++empty;
    result.series.points.push_back({t, hv.h, empty, 0.0, hv.floored, coarse.raw_box_mass});

    if (options.bootstrap_replicates >= 2) {
      std::uniform_int_distribution<std::size_t> pick(0, per_cell - 1);
      std::vector<std::size_t> index(lattice.size());
      double sum = 0.0, sum2 = 0.0;
      for (int b = 0; b < options.bootstrap_replicates; ++b) {
        for (auto& ix : index) ix = pick(boot_rng);
        const double h = h_function(cell_means(&index), psi2, grid);
        sum += h;
        sum2 += h * h;
      }
      const double n = options.bootstrap_replicates;
      const double mean = sum / n;
      result.bootstrap_std.push_back(std::sqrt(std::max(0.0, (sum2 - n * mean * mean) / (n - 1))));
    }
  }
  return result;
}

}  // namespace qrelax

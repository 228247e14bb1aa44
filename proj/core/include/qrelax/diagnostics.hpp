// Trajectory-level relaxation diagnostics: neighbour spread and full traces.
#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "qrelax/dynamics.hpp"
#include "qrelax/metrics.hpp"

namespace qrelax {

/// Default starts for spread and trace tests.
inline constexpr std::array<Point2, 5> kReferenceStarts{{
    {2.39, -1.94},
    {1.27, 3.76},
    {2.21, -0.01},
    {-0.89, 2.04},
    {-2.30, -0.76},
}};

inline constexpr double kDefaultSpreadHalfWidth = 0.05;

struct SpreadSet {
  Point2 center;
  std::vector<Point2> initial;               // 5 x 5 lattice around center
  std::vector<std::optional<Point2>> final;  // nullopt for rejected members
  std::size_t rejected = 0;
  /// 1 - area(final bounding box within the box) / box area.
  double score = 1.0;
};

struct SpreadTest {
  std::vector<SpreadSet> sets;
  double half_width = kDefaultSpreadHalfWidth;
  double end_time = 0.0;
  Box box;

  double mean_score() const;
};

/// 5 x 5 lattice with spacing h/2 spanning [c - h, c + h] in both coordinates.
std::vector<Point2> neighbour_lattice(Point2 center, double half_width);

/// Integrates 25 neighbours around each center from 0 to `end_time`.
/// Only the tolerance fields of `cfg` are used.
SpreadTest spread_test(const WaveFunction& wf, const IntegratorConfig& cfg, std::span<const Point2> centers,
                       double half_width, double end_time, const Box& box = {}, unsigned workers = 0);

struct TraceSet {
  std::vector<Trajectory> trajectories;
  std::vector<double> path_length;          // original coordinates; 0 for rejected
  std::vector<std::size_t> visited_cells;   // distinct grid cells touched by the samples
};

/// Densely sampled paths over [0, end_time] with `samples` evenly spaced points.
TraceSet trace_trajectories(const WaveFunction& wf, const IntegratorConfig& cfg, std::span<const Point2> starts,
                            double end_time, std::size_t samples = 1001, const CoarseGrid& grid = {},
                            unsigned workers = 0);

/// spread.csv: set,member,x_a0,x_b0,x_a,x_b,accepted
void write_spread_csv(std::ostream& out, const SpreadTest& test);
/// traces.csv: id,t,x_a,x_b,verdict
void write_traces_csv(std::ostream& out, const TraceSet& traces, double mass);

}  // namespace qrelax

#include "qrelax/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "qrelax/csv.hpp"
#include "qrelax/parallel.hpp"

namespace qrelax {

double SpreadTest::mean_score() const {
  if (sets.empty()) return 1.0;
  double s = 0.0;
  for (const auto& set : sets) s += set.score;
  return s / static_cast<double>(sets.size());
}

std::vector<Point2> neighbour_lattice(Point2 center, double half_width) {
  std::vector<Point2> pts;
  pts.reserve(25);
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j)
      pts.push_back({center.x + 0.5 * j * half_width, center.y + 0.5 * i * half_width});
  return pts;
}

namespace {

double confinement_score(std::span<const std::optional<Point2>> finals, const Box& box) {
  double xlo = box.xmax, xhi = box.xmin, ylo = box.ymax, yhi = box.ymin;
  bool any = false;
  for (const auto& p : finals) {
    if (!p) continue;
    any = true;
    xlo = std::min(xlo, p->x);
    xhi = std::max(xhi, p->x);
    ylo = std::min(ylo, p->y);
    yhi = std::max(yhi, p->y);
  }
  if (!any) return 1.0;
  const double w = std::max(0.0, std::min(xhi, box.xmax) - std::max(xlo, box.xmin));
  const double h = std::max(0.0, std::min(yhi, box.ymax) - std::max(ylo, box.ymin));
  return 1.0 - (w * h) / box.area();
}

}  // namespace

SpreadTest spread_test(const WaveFunction& wf, const IntegratorConfig& cfg, std::span<const Point2> centers,
                       double half_width, double end_time, const Box& box, unsigned workers) {
  if (!(half_width > 0.0)) throw std::domain_error("spread_test: half width must be positive");
  if (!(end_time >= 0.0)) throw std::domain_error("spread_test: end time must be non-negative");
  box.validate();
  IntegratorConfig run = cfg;
  run.record_times = {0.0, end_time};
  if (end_time == 0.0) run.record_times = {0.0};

  SpreadTest test;
  test.half_width = half_width;
  test.end_time = end_time;
  test.box = box;
  std::vector<Point2> starts;
  for (const auto& c : centers) {
    SpreadSet set;
    set.center = c;
    set.initial = neighbour_lattice(c, half_width);
    starts.insert(starts.end(), set.initial.begin(), set.initial.end());
    test.sets.push_back(std::move(set));
  }
  std::vector<Trajectory> trajs(starts.size());
  parallel_for(starts.size(), workers, [&](std::size_t i) { trajs[i] = integrate_verified(wf, starts[i], run); });

  for (std::size_t s = 0; s < test.sets.size(); ++s) {
    auto& set = test.sets[s];
    for (std::size_t m = 0; m < 25; ++m) {
      const auto& tr = trajs[s * 25 + m];
      if (tr.accepted()) {
        set.final.push_back(tr.original(tr.samples.size() - 1, wf.mass()));
      } else {
        set.final.push_back(std::nullopt);
        ++set.rejected;
      }
    }
    set.score = confinement_score(set.final, box);
  }
  return test;
}

TraceSet trace_trajectories(const WaveFunction& wf, const IntegratorConfig& cfg, std::span<const Point2> starts,
                            double end_time, std::size_t samples, const CoarseGrid& grid, unsigned workers) {
  if (samples < 2) throw std::domain_error("trace_trajectories: need at least two samples");
  if (!(end_time > 0.0)) throw std::domain_error("trace_trajectories: end time must be positive");
  grid.validate();
  IntegratorConfig run = cfg;
  run.record_times.resize(samples);
  for (std::size_t i = 0; i < samples; ++i)
    run.record_times[i] = end_time * static_cast<double>(i) / static_cast<double>(samples - 1);

  TraceSet out;
  out.trajectories.resize(starts.size());
  parallel_for(starts.size(), workers,
               [&](std::size_t i) { out.trajectories[i] = integrate_verified(wf, starts[i], run); });
  for (const auto& tr : out.trajectories) {
    double length = 0.0;
    std::set<std::size_t> cells;
    for (std::size_t i = 0; i < tr.samples.size(); ++i) {
      const Point2 p = tr.original(i, wf.mass());
      if (auto c = grid.cell_of(p)) cells.insert(*c);
      if (i > 0) {
        const Point2 q = tr.original(i - 1, wf.mass());
        length += std::hypot(p.x - q.x, p.y - q.y);
      }
    }
    out.path_length.push_back(tr.accepted() ? length : 0.0);
    out.visited_cells.push_back(cells.size());
  }
  return out;
}

void write_spread_csv(std::ostream& out, const SpreadTest& test) {
  out << "set,member,x_a0,x_b0,x_a,x_b,accepted\n";
  for (std::size_t s = 0; s < test.sets.size(); ++s) {
    const auto& set = test.sets[s];
    for (std::size_t m = 0; m < set.initial.size(); ++m) {
      out << s << ',' << m << ',' << format_double(set.initial[m].x) << ',' << format_double(set.initial[m].y);
      if (set.final[m])
        out << ',' << format_double(set.final[m]->x) << ',' << format_double(set.final[m]->y) << ",1\n";
      else
        out << ",,,0\n";
    }
  }
}

void write_traces_csv(std::ostream& out, const TraceSet& traces, double mass) {
  write_trajectories_csv(out, traces.trajectories, mass);
}

}  // namespace qrelax

#include "qrelax/dynamics.hpp"

#include <cmath>
#include <optional>
#include <ostream>

#include "qrelax/csv.hpp"

namespace qrelax {

std::optional<Velocity> try_velocity(const WaveFunction& wf, double x1, double x2, double t) {
  const PsiEval e = wf.evaluate(x1, x2, t);
  const double dens = std::norm(e.psi);
  if (!(dens >= kNodeDensityFloor)) return std::nullopt;
  // Im(d Psi * conj(Psi)) = Im(d) Re(Psi) - Re(d) Im(Psi)
  const double re = e.psi.real(), im = e.psi.imag();
  return Velocity{(e.d1.imag() * re - e.d1.real() * im) / dens,
                  (e.d2.imag() * re - e.d2.real() * im) / dens};
}

Velocity velocity(const WaveFunction& wf, double x1, double x2, double t) {
  if (auto v = try_velocity(wf, x1, x2, t)) return *v;
  throw NearNodeError("velocity: |Psi|^2 underflows at a wave-function node");
}

void IntegratorConfig::validate() const {
  if (!(tol_start > 0.0) || !(tol_floor > 0.0) || !(tol_floor < tol_start))
    throw std::domain_error("integrator config: need 0 < tol_floor < tol_start");
  if (!(delta > 0.0)) throw std::domain_error("integrator config: delta must be positive");
  if (record_times.empty()) throw std::domain_error("integrator config: no record times");
  if (max_steps == 0 || !(min_step > 0.0))
    throw std::domain_error("integrator config: step limits must be positive");
}

RunResult<2> integrate_once(const WaveFunction& wf, Point2 start_normal, std::span<const double> times,
                            double atol, const IntegratorConfig& cfg) {
  auto rhs = [&wf](double t, const std::array<double, 2>& y, std::array<double, 2>& dy) {
    const auto v = try_velocity(wf, y[0], y[1], t);
    if (!v) return false;
    dy = {v->v1, v->v2};
    return true;
  };
  StepControl control;
  control.atol = atol;
  control.max_steps = cfg.max_steps;
  control.min_step = cfg.min_step;
  try {
    return integrate_dop853<2>(rhs, times, {start_normal.x, start_normal.y}, control);
  } catch (const std::range_error&) {
    RunResult<2> failed;
    failed.status = RunStatus::kNonFinite;
    return failed;
  }
}

namespace {

struct Verified {
  RunResult<2> run;
  double tolerance = 0.0;
  int escalations = 0;
};

// The dual-tolerance protocol over one span of times, compared at its last time.
std::optional<Verified> verify(const WaveFunction& wf, Point2 q0, std::span<const double> times,
                               const IntegratorConfig& cfg) {
  auto agree = [&](const RunResult<2>& a, const RunResult<2>& b) {
    if (!a.ok() || !b.ok()) return false;
    const auto& fa = a.samples.back();
    const auto& fb = b.samples.back();
    return std::abs(fa[0] - fb[0]) <= cfg.delta && std::abs(fa[1] - fb[1]) <= cfg.delta;
  };

  Verified v;
  double tol = cfg.tol_start;
  RunResult<2> loose = integrate_once(wf, q0, times, tol, cfg);
  for (;;) {
    const double tight_tol = tol / 10.0;
    RunResult<2> tight = integrate_once(wf, q0, times, tight_tol, cfg);
    if (agree(loose, tight)) {
      v.run = std::move(tight);
      v.tolerance = tol;
      return v;
    }
    if (tight_tol <= cfg.tol_floor * (1.0 + 1e-9)) return std::nullopt;
    tol = tight_tol;
    loose = std::move(tight);
    ++v.escalations;
  }
}

}  // namespace

Trajectory integrate_verified(const WaveFunction& wf, Point2 start, const IntegratorConfig& cfg) {
  cfg.validate();
  if (!std::isfinite(start.x) || !std::isfinite(start.y))
    throw std::domain_error("integrate_verified: non-finite start");

  const Point2 q0 = to_normal(start, wf.mass());
  const std::span<const double> times(cfg.record_times);

  Trajectory traj;
  traj.initial = start;
  auto reject = [&] {
    traj.verdict = Verdict::kRejected;
    traj.tolerance = 0.0;
    traj.samples.assign(1, {times.front(), q0});
    return traj;
  };

  if (!cfg.verify_each_record || times.size() <= 2) {
    auto v = verify(wf, q0, times, cfg);
    if (!v) return reject();
    traj.verdict = Verdict::kAccepted;
    traj.tolerance = v->tolerance;
    traj.escalations = v->escalations;
    traj.samples.reserve(times.size());
    for (std::size_t i = 0; i < times.size(); ++i)
      traj.samples.push_back({times[i], {v->run.samples[i][0], v->run.samples[i][1]}});
    return traj;
  }

  // Each interval between record times is verified on its own, restarting
  // from the agreed position; the reported tolerance is the tightest needed.
  traj.samples.reserve(times.size());
  traj.samples.push_back({times.front(), q0});
  traj.tolerance = cfg.tol_start;
  Point2 q = q0;
  for (std::size_t i = 0; i + 1 < times.size(); ++i) {
    auto v = verify(wf, q, times.subspan(i, 2), cfg);
    if (!v) return reject();
    traj.tolerance = std::min(traj.tolerance, v->tolerance);
    traj.escalations += v->escalations;
    q = {v->run.samples.back()[0], v->run.samples.back()[1]};
    traj.samples.push_back({times[i + 1], q});
  }
  traj.verdict = Verdict::kAccepted;
  return traj;
}

void write_trajectories_csv(std::ostream& out, std::span<const Trajectory> trajectories, double mass,
                            bool header) {
  if (header) out << "id,t,x_a,x_b,verdict\n";
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    const auto& tr = trajectories[id];
    const char* verdict = tr.accepted() ? "accepted" : "rejected";
    for (std::size_t i = 0; i < tr.samples.size(); ++i) {
      const Point2 p = tr.original(i, mass);
      out << id << ',' << format_double(tr.samples[i].t) << ',' << format_double(p.x) << ','
          << format_double(p.y) << ',' << verdict << '\n';
    }
  }
}

}  // namespace qrelax

// Adaptive explicit Runge-Kutta integration with the Dormand-Prince 8(5,3) pair.
//
// Error control is absolute-only by default (rtol = 0). The integrator lands
// exactly on each requested output time instead of interpolating, so samples
// are bit-reproducible and independent of any dense-output scheme.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "qrelax/dop853_tableau.hpp"

namespace qrelax {

struct StepControl {
  double atol = 1e-9;
  double rtol = 0.0;
  std::size_t max_steps = 2000000;  // attempted steps per run
  double min_step = 1e-12;         // |h| below this aborts the run
};

enum class RunStatus { kOk, kStepUnderflow, kStepLimit, kNonFinite };

template <std::size_t N>
struct RunResult {
  RunStatus status = RunStatus::kOk;
  std::vector<std::array<double, N>> samples;  // one per output time when kOk
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  std::size_t rhs_failures = 0;

  bool ok() const { return status == RunStatus::kOk; }
};

namespace detail {

inline constexpr double kSafety = 0.9;
inline constexpr double kMinFactor = 0.2;
inline constexpr double kMaxFactor = 10.0;
inline constexpr double kErrorExponent = -1.0 / 8.0;
// Shrink applied when the right-hand side cannot be evaluated inside a step.
inline constexpr double kFailureShrink = 0.25;

template <std::size_t N>
double rms(const std::array<double, N>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(N));
}

template <std::size_t N>
bool finite(const std::array<double, N>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

/// Integrates dy/dt = f(t, y) from times[0] through every entry of `times`
/// (monotone, either direction), recording y at each. `f(t, y, dydt)` returns
/// false when it cannot be evaluated at (t, y); the step is then retried with
/// a smaller size.
template <std::size_t N, class Rhs>
RunResult<N> integrate_dop853(Rhs&& f, std::span<const double> times, std::array<double, N> y,
                              const StepControl& control) {
  using State = std::array<double, N>;
  namespace tab = dop853;
  RunResult<N> result;
  if (times.empty()) return result;
  result.samples.reserve(times.size());
  result.samples.push_back(y);
  if (times.size() == 1) return result;

  const double t_begin = times.front();
  const double dir = times.back() >= t_begin ? 1.0 : -1.0;
  for (std::size_t i = 1; i < times.size(); ++i)
    if (dir * (times[i] - times[i - 1]) < 0.0)
      throw std::invalid_argument("integrate_dop853: output times are not monotone");

  auto scale_of = [&](const State& a, const State& b) {
    State s;
    for (std::size_t i = 0; i < N; ++i)
      s[i] = control.atol + control.rtol * std::max(std::abs(a[i]), std::abs(b[i]));
    return s;
  };

  double t = t_begin;
  std::array<State, tab::kStages> k{};
  if (!f(t, y, k[0]) || !detail::finite(k[0])) {
    result.status = RunStatus::kNonFinite;
    return result;
  }

  // Initial step guess (Hairer & Wanner, II.4).
  double h_abs;
  {
    const State sc = scale_of(y, y);
    State y_sc, f_sc;
    for (std::size_t i = 0; i < N; ++i) {
      y_sc[i] = y[i] / sc[i];
      f_sc[i] = k[0][i] / sc[i];
    }
    const double d0 = detail::rms(y_sc);
    const double d1 = detail::rms(f_sc);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    State y1, f1;
    for (std::size_t i = 0; i < N; ++i) y1[i] = y[i] + dir * h0 * k[0][i];
    double d2 = 0.0;
    if (f(t + dir * h0, y1, f1) && detail::finite(f1)) {
      State diff;
      for (std::size_t i = 0; i < N; ++i) diff[i] = (f1[i] - k[0][i]) / sc[i];
      d2 = detail::rms(diff) / h0;
    }
    const double dmax = std::max(d1, d2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 1.0 / 8.0);
    h_abs = std::min(100.0 * h0, h1);
  }

  std::size_t attempts = 0;
  for (std::size_t target = 1; target < times.size(); ++target) {
    const double t_target = times[target];
    while (dir * (t_target - t) > 0.0) {
      if (++attempts > control.max_steps) {
        result.status = RunStatus::kStepLimit;
        return result;
      }
      if (h_abs < control.min_step) {
        result.status = RunStatus::kStepUnderflow;
        return result;
      }
      const double remaining = std::abs(t_target - t);
      const bool hits_target = h_abs >= remaining;
      const double h = dir * (hits_target ? remaining : h_abs);

      bool stages_ok = true;
      State y_stage;
      for (int s = 1; s < tab::kStages && stages_ok; ++s) {
        for (std::size_t i = 0; i < N; ++i) {
          double acc = 0.0;
          for (int j = 0; j < s; ++j) acc += tab::kA[s][j] * k[j][i];
          y_stage[i] = y[i] + h * acc;
        }
        stages_ok = f(t + tab::kC[s] * h, y_stage, k[s]) && detail::finite(k[s]);
      }
      if (!stages_ok) {
        ++result.rhs_failures;
        h_abs = std::abs(h) * detail::kFailureShrink;
        continue;
      }

      State y_new, err3, err5;
      for (std::size_t i = 0; i < N; ++i) {
        double acc = 0.0, e3 = 0.0, e5 = 0.0;
        for (int j = 0; j < tab::kStages; ++j) {
          acc += tab::kB[j] * k[j][i];
          e3 += (tab::kB[j] - tab::kE3Correction[j]) * k[j][i];
          e5 += tab::kE5[j] * k[j][i];
        }
        y_new[i] = y[i] + h * acc;
        err3[i] = e3;
        err5[i] = e5;
      }
      const State sc = scale_of(y, y_new);
      double e3n = 0.0, e5n = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        e3n += (err3[i] / sc[i]) * (err3[i] / sc[i]);
        e5n += (err5[i] / sc[i]) * (err5[i] / sc[i]);
      }
      double err_norm = 0.0;
      if (e3n > 0.0 || e5n > 0.0)
        err_norm = std::abs(h) * e5n / std::sqrt((e5n + 0.01 * e3n) * static_cast<double>(N));
      if (!std::isfinite(err_norm) || !detail::finite(y_new)) {
        ++result.rhs_failures;
        h_abs = std::abs(h) * detail::kFailureShrink;
        continue;
      }

      if (err_norm < 1.0) {
        // FSAL: first stage of the next step.
        State f_new;
        if (!f(t + h, y_new, f_new) || !detail::finite(f_new)) {
          ++result.rhs_failures;
          h_abs = std::abs(h) * detail::kFailureShrink;
          continue;
        }
        const double factor =
            err_norm == 0.0
                ? detail::kMaxFactor
                : std::min(detail::kMaxFactor, detail::kSafety * std::pow(err_norm, detail::kErrorExponent));
        // A step clipped to an output time should not shrink the next proposal.
        h_abs = hits_target ? std::max(h_abs, std::abs(h) * factor) : std::abs(h) * factor;
        t = hits_target ? t_target : t + h;
        y = y_new;
        k[0] = f_new;
        ++result.accepted_steps;
      } else {
        ++result.rejected_steps;
        h_abs = std::abs(h) *
                std::max(detail::kMinFactor, detail::kSafety * std::pow(err_norm, detail::kErrorExponent));
      }
    }
    result.samples.push_back(y);
  }
  return result;
}

}  // namespace qrelax

#include "qrelax/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>

#include "qrelax/csv.hpp"

namespace qrelax {

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

// Gaussian elimination with partial pivoting; nullopt when singular.
std::optional<Vec3> solve3(Mat3 a, Vec3 b) {
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (!(std::abs(a[piv][col]) > 0.0)) return std::nullopt;
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 3; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  Vec3 x{};
  for (int r = 2; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < 3; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }
  return x;
}

std::optional<Mat3> invert3(const Mat3& a) {
  Mat3 inv{};
  for (int c = 0; c < 3; ++c) {
    Vec3 e{};
    e[c] = 1.0;
    const auto col = solve3(a, e);
    if (!col) return std::nullopt;
    for (int r = 0; r < 3; ++r) inv[r][c] = (*col)[r];
  }
  return inv;
}

struct Problem {
  std::span<const double> t;
  std::span<const double> y;
  Vec3 lo, hi;  // (h0, tau, residue)

  Vec3 clamp(Vec3 p) const {
    for (int i = 0; i < 3; ++i) p[i] = std::clamp(p[i], lo[i], hi[i]);
    return p;
  }

  double objective(const Vec3& p) const {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double r = decay_model(t[i], p[0], p[1], p[2]) - y[i];
      s += r * r;
    }
    return s;
  }

  // Normal equations J^T J and J^T r at p.
  void normal_equations(const Vec3& p, Mat3& jtj, Vec3& jtr) const {
    jtj = {};
    jtr = {};
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double e = std::exp(-t[i] / p[1]);
      const Vec3 g{e, (p[0] - p[2]) * e * t[i] / (p[1] * p[1]), 1.0 - e};
      const double r = (p[0] - p[2]) * e + p[2] - y[i];
      for (int a = 0; a < 3; ++a) {
        jtr[a] += g[a] * r;
        for (int b = 0; b < 3; ++b) jtj[a][b] += g[a] * g[b];
      }
    }
  }
};

double initial_tau(std::span<const double> t, std::span<const double> y, double residue, double spread,
                   const FitOptions& options) {
  // Least-squares slope of ln(H - R + eps) against t.
  const double eps = 1e-3 * spread;
  const double n = static_cast<double>(t.size());
  double st = 0.0, sl = 0.0, stt = 0.0, stl = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double l = std::log(std::max(y[i] - residue, 0.0) + eps);
    st += t[i];
    sl += l;
    stt += t[i] * t[i];
    stl += t[i] * l;
  }
  const double denom = n * stt - st * st;
  const double slope = denom != 0.0 ? (n * stl - st * sl) / denom : 0.0;
  const double tau = slope < 0.0 ? -1.0 / slope : options.tau_max;
  return std::clamp(tau, options.tau_min, options.tau_max);
}

}  // namespace

RelaxationFit fit_decay(std::span<const double> times, std::span<const double> values, const FitOptions& options) {
  if (times.size() != values.size()) throw std::invalid_argument("fit_decay: times and values differ in length");
  if (times.size() < 6) throw std::domain_error("fit_decay: need at least 6 points");
  for (std::size_t i = 0; i < times.size(); ++i)
    if (!std::isfinite(times[i]) || !std::isfinite(values[i]))
      throw std::domain_error("fit_decay: non-finite data");

  const auto [min_it, max_it] = std::minmax_element(values.begin(), values.end());
  const double vmin = *min_it, vmax = *max_it;
  const double spread = vmax - vmin;

  RelaxationFit fit;
  if (spread <= 1e-12 * std::max(1.0, std::abs(vmax))) {
    fit.h0 = vmax;
    fit.residue = vmax;
    fit.tau = options.tau_max;
    fit.converged = true;
    fit.degenerate = true;
    fit.warning = "flat series: relaxation time is unconstrained";
    double s = 0.0;
    for (double v : values) s += (v - vmax) * (v - vmax);
    fit.rms_residual = std::sqrt(s / static_cast<double>(values.size()));
    return fit;
  }

  const double top = std::max(vmax, 0.0);
  Problem prob{times, values, {0.0, options.tau_min, 0.0}, {2.0 * top, options.tau_max, top}};

  Vec3 p = prob.clamp({values.front(), 0.0, vmin});
  p[1] = initial_tau(times, values, p[2], spread, options);
  p = prob.clamp(p);

  double obj = prob.objective(p);
  double lambda = 1e-3;
  int it = 0;
  bool converged = false;
  for (; it < options.max_iterations; ++it) {
    Mat3 jtj;
    Vec3 jtr;
    prob.normal_equations(p, jtj, jtr);
    if (obj == 0.0) {
      converged = true;
      break;
    }
    bool accepted = false;
    while (!accepted) {
      Mat3 damped = jtj;
      for (int d = 0; d < 3; ++d) damped[d][d] += lambda * std::max(jtj[d][d], 1e-300);
      const auto step = solve3(damped, {-jtr[0], -jtr[1], -jtr[2]});
      if (step) {
        const Vec3 trial = prob.clamp({p[0] + (*step)[0], p[1] + (*step)[1], p[2] + (*step)[2]});
        const double trial_obj = prob.objective(trial);
        if (trial_obj < obj) {
          double rel = 0.0;
          for (int d = 0; d < 3; ++d)
            rel = std::max(rel, std::abs(trial[d] - p[d]) / std::max(std::abs(p[d]), 1e-12));
          p = trial;
          obj = trial_obj;
          fit.objective_history.push_back(obj);
          lambda = std::max(lambda / 10.0, 1e-12);
          accepted = true;
          if (rel < options.rel_tolerance) converged = true;
          break;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e16) break;
    }
    if (converged) break;
    if (!accepted) {
      // No damped step lowers the objective: a (bound-constrained) minimum.
      converged = true;
      break;
    }
  }

  fit.h0 = p[0];
  fit.tau = p[1];
  fit.residue = p[2];
  fit.iterations = it;
  fit.converged = converged;
  fit.rms_residual = std::sqrt(obj / static_cast<double>(times.size()));
  if (!converged) fit.warning = "iteration limit reached";

  Mat3 jtj;
  Vec3 jtr;
  prob.normal_equations(p, jtj, jtr);
  if (const auto cov = invert3(jtj); cov && times.size() > 3) {
    const double s2 = obj / static_cast<double>(times.size() - 3);
    for (int d = 0; d < 3; ++d) fit.std_errors[d] = std::sqrt(std::max(0.0, s2 * (*cov)[d][d]));
  }
  return fit;
}

RelaxationFit fit_decay(const HSeries& series, const FitOptions& options) {
  const auto t = series.times();
  const auto v = series.values();
  return fit_decay(t, v, options);
}

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& v, StdConvention convention) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double dof = convention == StdConvention::kSample ? n - 1.0 : n;
  return {mean, std::sqrt(ss / dof)};
}

}  // namespace

FitAggregate aggregate(std::span<const RelaxationFit> fits, std::span<const double> initial_h,
                       StdConvention convention) {
  if (fits.size() < 2) throw std::domain_error("aggregate: need at least two fits");
  if (initial_h.empty()) throw std::domain_error("aggregate: need initial H values");
  FitAggregate agg;
  agg.fits.assign(fits.begin(), fits.end());
  std::vector<double> taus, residues;
  for (const auto& f : fits) {
    taus.push_back(f.tau);
    residues.push_back(f.residue);
  }
  const auto tau = mean_std(taus, convention);
  const auto res = mean_std(residues, convention);
  agg.mean_tau = tau.mean;
  agg.std_tau = tau.std;
  agg.mean_residue = res.mean;
  agg.std_residue = res.std;
  agg.mean_h0 = std::accumulate(initial_h.begin(), initial_h.end(), 0.0) / static_cast<double>(initial_h.size());
  agg.residue_fraction = agg.mean_h0 > 0.0 ? agg.mean_residue / agg.mean_h0 : 0.0;
  return agg;
}

void write_fits_csv(std::ostream& out, std::span<const FitRecord> records) {
  out << "M,k,preset_seed,H0,tau,R,rms,converged\n";
  for (const auto& r : records)
    out << r.modes << ',' << format_double(r.coupling) << ',' << r.preset_seed << ',' << format_double(r.fit.h0)
        << ',' << format_double(r.fit.tau) << ',' << format_double(r.fit.residue) << ','
        << format_double(r.fit.rms_residual) << ',' << (r.fit.converged ? 1 : 0) << '\n';
}

}  // namespace qrelax

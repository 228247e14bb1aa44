#include "qrelax/wavefunction.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace qrelax {

Frequencies build_frequencies(double omega, double k) {
  if (!(omega > 0.0) || !std::isfinite(omega))
    throw std::domain_error("build_frequencies: omega must be positive");
  if (!std::isfinite(k) || k < 0.0 || k >= 2.0 * omega * omega)
    throw std::domain_error("build_frequencies: coupling must satisfy 0 <= k < 2 omega^2");
  return {std::sqrt(omega * omega + 0.5 * k), std::sqrt(omega * omega - 0.5 * k)};
}

void OscillatorModel::validate() const {
  if (!(mass > 0.0) || !std::isfinite(mass))
    throw std::domain_error("oscillator model: mass must be positive");
  build_frequencies(omega, coupling);
}

Point2 to_normal(Point2 original, double mass) {
  const double s = std::sqrt(0.5 * mass);
  return {s * (original.x + original.y), s * (original.x - original.y)};
}

Point2 from_normal(Point2 normal, double mass) {
  const double s = std::sqrt(0.5 / mass);
  return {s * (normal.x + normal.y), s * (normal.x - normal.y)};
}

// ---------------------------------------------------------------------------
// ModeSet

void ModeSet::validate() const {
  if (modes.empty()) throw std::domain_error("mode set: needs at least one mode");
  if (phases.size() != modes.size())
    throw std::domain_error("mode set: phase count differs from mode count");
  std::set<ModePair> seen;
  for (const auto& p : modes) {
    if (p.n1 < 0 || p.n2 < 0) throw std::domain_error("mode set: negative quantum number");
    if (!seen.insert(p).second) throw std::domain_error("mode set: duplicate mode pair");
  }
  for (double th : phases)
    if (!(th >= 0.0 && th < 1.0)) throw std::domain_error("mode set: phase outside [0, 1)");
}

std::vector<cplx> ModeSet::coefficients() const {
  const double amp = 1.0 / std::sqrt(static_cast<double>(modes.size()));
  std::vector<cplx> c;
  c.reserve(phases.size());
  for (double th : phases) c.push_back(std::polar(amp, 2.0 * std::numbers::pi * th));
  return c;
}

void ModeSet::write(std::ostream& out) const {
  out << "M " << modes.size() << '\n'
      << "n_max " << n_max << '\n'
      << "seed " << seed << '\n';
  const auto old_prec = out.precision(17);
  for (std::size_t j = 0; j < modes.size(); ++j)
    out << "mode " << modes[j].n1 << ' ' << modes[j].n2 << ' ' << phases[j] << '\n';
  out.precision(old_prec);
}

ModeSet ModeSet::read(std::istream& in) {
  ModeSet set;
  std::size_t count = 0;
  bool have_count = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() == '#') continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "M") {
      fields >> count;
      have_count = true;
    } else if (key == "n_max") {
      fields >> set.n_max;
    } else if (key == "seed") {
      fields >> set.seed;
    } else if (key == "mode") {
      ModePair p;
      double th = 0.0;
      fields >> p.n1 >> p.n2 >> th;
      set.modes.push_back(p);
      set.phases.push_back(th);
    } else {
      throw std::runtime_error("mode set: unknown record '" + key + "'");
    }
    if (fields.fail()) throw std::runtime_error("mode set: malformed line '" + line + "'");
  }
  if (!have_count || count != set.modes.size())
    throw std::runtime_error("mode set: declared M does not match mode lines");
  set.validate();
  return set;
}

std::string ModeSet::to_string() const {
  std::ostringstream s;
  write(s);
  return s.str();
}

ModeSet sample_mode_set(int count, int n_max, std::uint64_t seed) {
  if (n_max < 0) throw std::domain_error("sample_mode_set: n_max must be non-negative");
  const int side = n_max + 1;
  if (count < 1 || count > side * side)
    throw std::domain_error("sample_mode_set: need 1 <= M <= (n_max+1)^2");

  std::vector<ModePair> pool;
  pool.reserve(static_cast<std::size_t>(side * side));
  for (int a = 0; a < side; ++a)
    for (int b = 0; b < side; ++b) pool.push_back({a, b});

  std::mt19937_64 rng(seed);
  ModeSet set;
  set.n_max = n_max;
  set.seed = seed;
  // Partial Fisher-Yates: the first `count` slots become the draw.
  for (int j = 0; j < count; ++j) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(j), pool.size() - 1);
    std::swap(pool[static_cast<std::size_t>(j)], pool[pick(rng)]);
    set.modes.push_back(pool[static_cast<std::size_t>(j)]);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int j = 0; j < count; ++j) set.phases.push_back(unit(rng));
  return set;
}

// ---------------------------------------------------------------------------
// WaveFunction

WaveFunction::WaveFunction(OscillatorModel model, ModeSet modes)
    : model_(model), modes_(std::move(modes)) {
  model_.validate();
  modes_.validate();
  freq_ = model_.frequencies();
  coeffs_ = modes_.coefficients();
  for (const auto& p : modes_.modes) {
    n1_top_ = std::max(n1_top_, p.n1);
    n2_top_ = std::max(n2_top_, p.n2);
  }
  if (n1_top_ > kMaxQuantumNumber || n2_top_ > kMaxQuantumNumber)
    throw std::domain_error("wave function: quantum number exceeds supported maximum");
}

namespace {

using Table = std::array<double, WaveFunction::kMaxQuantumNumber + 1>;

// (re, im)[n] = exp(-i (n + 1/2) omega t), built by repeated multiplication.
void fill_phases(double omega, double t, int top, Table& re, Table& im) {
  const double half = -0.5 * omega * t;
  const double c = std::cos(half), s = std::sin(half);
  const double step_re = c * c - s * s, step_im = 2.0 * c * s;
  re[0] = c;
  im[0] = s;
  for (std::size_t n = 1; n <= static_cast<std::size_t>(top); ++n) {
    re[n] = re[n - 1] * step_re - im[n - 1] * step_im;
    im[n] = re[n - 1] * step_im + im[n - 1] * step_re;
  }
}

}  // namespace

template <bool WithGradient>
PsiEval WaveFunction::evaluate_impl(double x1, double x2, double t) const {
  Table f1, f2, g1, g2, p1r, p1i, p2r, p2i;
  const auto n1 = static_cast<std::size_t>(n1_top_ + 1);
  const auto n2 = static_cast<std::size_t>(n2_top_ + 1);
  const std::size_t g1n = WithGradient ? n1 : 0;
  const std::size_t g2n = WithGradient ? n2 : 0;
  hermite_functions(freq_.omega1, x1, std::span(f1.data(), n1), std::span(g1.data(), g1n));
  hermite_functions(freq_.omega2, x2, std::span(f2.data(), n2), std::span(g2.data(), g2n));
  fill_phases(freq_.omega1, t, n1_top_, p1r, p1i);
  fill_phases(freq_.omega2, t, n2_top_, p2r, p2i);

  double pr = 0.0, pi = 0.0, ar = 0.0, ai = 0.0, br = 0.0, bi = 0.0;
  for (std::size_t j = 0; j < coeffs_.size(); ++j) {
    const auto a = static_cast<std::size_t>(modes_.modes[j].n1);
    const auto b = static_cast<std::size_t>(modes_.modes[j].n2);
    const double er = p1r[a] * p2r[b] - p1i[a] * p2i[b];
    const double ei = p1r[a] * p2i[b] + p1i[a] * p2r[b];
    const double wr = coeffs_[j].real() * er - coeffs_[j].imag() * ei;
    const double wi = coeffs_[j].real() * ei + coeffs_[j].imag() * er;
    const double v = f1[a] * f2[b];
    pr += wr * v;
    pi += wi * v;
    if constexpr (WithGradient) {
      const double d1 = g1[a] * f2[b], d2 = f1[a] * g2[b];
      ar += wr * d1;
      ai += wi * d1;
      br += wr * d2;
      bi += wi * d2;
    }
  }
  if (!std::isfinite(pr + pi + ar + ai + br + bi)) throw std::range_error("wave function: non-finite value");
  return {cplx(pr, pi), cplx(ar, ai), cplx(br, bi)};
}

PsiEval WaveFunction::evaluate(double x1, double x2, double t) const {
  return evaluate_impl<true>(x1, x2, t);
}

cplx WaveFunction::psi(double x1, double x2, double t) const {
  return evaluate_impl<false>(x1, x2, t).psi;
}

std::pair<cplx, cplx> WaveFunction::grad_psi(double x1, double x2, double t) const {
  const auto e = evaluate_impl<true>(x1, x2, t);
  return {e.d1, e.d2};
}

double WaveFunction::density_normal(double x1, double x2, double t) const {
  return std::norm(psi(x1, x2, t));
}

double WaveFunction::density_original(double xa, double xb, double t) const {
  const Point2 q = to_normal({xa, xb}, model_.mass);
  return model_.mass * density_normal(q.x, q.y, t);
}

double WaveFunction::density_original_bound() const {
  // |e^{-u^2/2} H_n(u)| <= K 2^{n/2} sqrt(n!)  =>  |psi_n| <= K (Omega/pi)^{1/4}.
  constexpr double kCramer = 1.086435;
  const double k4 = kCramer * kCramer * kCramer * kCramer;
  const double m = static_cast<double>(modes_.size());
  return model_.mass * m * k4 * std::sqrt(freq_.omega1 * freq_.omega2) / std::numbers::pi;
}

}  // namespace qrelax

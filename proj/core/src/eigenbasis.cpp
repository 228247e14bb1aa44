#include "qrelax/eigenbasis.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace qrelax {

void Eigenmode::validate() const {
  if (n < 0) throw std::domain_error("eigenmode: negative quantum number");
  if (!(omega > 0.0) || !std::isfinite(omega))
    throw std::domain_error("eigenmode: frequency must be positive and finite");
}

double hermite(int n, double u) {
  if (n < 0) throw std::domain_error("hermite: negative order");
  double prev = 1.0;
  if (n == 0) return prev;
  double cur = 2.0 * u;
  for (int k = 1; k < n; ++k) {
    const double next = 2.0 * u * cur - 2.0 * k * prev;
    prev = cur;
    cur = next;
  }
  if (!std::isfinite(cur))
    throw std::range_error("hermite: H_" + std::to_string(n) + " overflows at u=" +
                           std::to_string(u));
  return cur;
}

double eigenstate_log_norm(const Eigenmode& mode) {
  return 0.25 * std::log(mode.omega / std::numbers::pi) -
         0.5 * (mode.n * std::numbers::ln2 + std::lgamma(mode.n + 1.0));
}

namespace {

cplx phase(const Eigenmode& mode, double t) {
  const double angle = -mode.energy() * t;
  return {std::cos(angle), std::sin(angle)};
}

// N_n e^{-u^2/2} combined in log space so large n does not underflow the prefactor.
double envelope(const Eigenmode& mode, double u) {
  return std::exp(eigenstate_log_norm(mode) - 0.5 * u * u);
}

cplx checked(cplx v, const char* what) {
  if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
    throw std::range_error(std::string(what) + ": non-finite value");
  return v;
}

}  // namespace

cplx eigenstate(const Eigenmode& mode, double x, double t) {
  mode.validate();
  const double u = std::sqrt(mode.omega) * x;
  return checked(hermite(mode.n, u) * envelope(mode, u) * phase(mode, t), "eigenstate");
}

cplx eigenstate_dx(const Eigenmode& mode, double x, double t) {
  mode.validate();
  const double u = std::sqrt(mode.omega) * x;
  const double h_n = hermite(mode.n, u);
  const double h_nm1 = mode.n > 0 ? hermite(mode.n - 1, u) : 0.0;
  const double slope =
      std::sqrt(mode.omega) * (2.0 * mode.n * h_nm1 - u * h_n) * envelope(mode, u);
  return checked(slope * phase(mode, t), "eigenstate_dx");
}

namespace {

// Recurrence weights sqrt(2/(j+1)), sqrt(j/(j+1)) and sqrt(2j), shared by every call.
struct RecurrenceTable {
  static constexpr std::size_t kSize = 128;
  std::array<double, kSize> up{}, down{}, lower{};
  RecurrenceTable() {
    for (std::size_t j = 0; j < kSize; ++j) {
      const double jd = static_cast<double>(j);
      up[j] = std::sqrt(2.0 / (jd + 1.0));
      down[j] = std::sqrt(jd / (jd + 1.0));
      lower[j] = std::sqrt(2.0 * jd);
    }
  }
};

const RecurrenceTable& recurrence() {
  static const RecurrenceTable table;
  return table;
}

}  // namespace

void hermite_functions(double omega, double x, std::span<double> values,
                       std::span<double> slopes) {
  const std::size_t count = values.size();
  if (count == 0) return;
  const auto& rt = recurrence();
  if (count > RecurrenceTable::kSize) throw std::domain_error("hermite_functions: order too large");
  const double root = std::sqrt(omega);
  const double u = root * x;
  values[0] = std::sqrt(std::sqrt(omega / std::numbers::pi)) * std::exp(-0.5 * u * u);
  if (count > 1) values[1] = std::numbers::sqrt2 * u * values[0];
  for (std::size_t j = 1; j + 1 < count; ++j) values[j + 1] = rt.up[j] * u * values[j] - rt.down[j] * values[j - 1];
  // phi_j' = sqrt(omega) (sqrt(2j) phi_{j-1} - u phi_j)
  for (std::size_t j = 0; j < slopes.size() && j < count; ++j) {
    const double lower = j > 0 ? rt.lower[j] * values[j - 1] : 0.0;
    slopes[j] = root * (lower - u * values[j]);
  }
}

}  // namespace qrelax

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "qrelax/dop853.hpp"
#include "qrelax/dynamics.hpp"

using namespace qrelax;
using std::numbers::pi;

namespace {

// (0,0) + (1,0), equal phases, k = 0, m = omega = 1. With psi_1 = sqrt2 x psi_0,
// Psi ~ psi0 psi0 e^{-it} (1 + sqrt2 x1 e^{-it}), so
// v1 = -sqrt2 sin t / (1 + 2 sqrt2 x1 cos t + 2 x1^2) and v2 = 0.
WaveFunction two_mode() {
  ModeSet set;
  set.modes = {{0, 0}, {1, 0}};
  set.phases = {0.0, 0.0};
  return WaveFunction({1.0, 1.0, 0.0}, set);
}

double two_mode_v1(double x1, double t) {
  return -std::numbers::sqrt2 * std::sin(t) /
         (1.0 + 2.0 * std::numbers::sqrt2 * x1 * std::cos(t) + 2.0 * x1 * x1);
}

double rk4_two_mode(double x, double t_end, double h_max) {
  const auto n = static_cast<long>(std::llround(t_end / h_max));
  const double h = t_end / static_cast<double>(n);  // land exactly on t_end
  double t = 0.0;
  for (long i = 0; i < n; ++i) {
    const double k1 = two_mode_v1(x, t);
    const double k2 = two_mode_v1(x + 0.5 * h * k1, t + 0.5 * h);
    const double k3 = two_mode_v1(x + 0.5 * h * k2, t + 0.5 * h);
    const double k4 = two_mode_v1(x + h * k3, t + h);
    x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    t = static_cast<double>(i + 1) * h;
  }
  return x;
}

IntegratorConfig config(std::vector<double> times) {
  IntegratorConfig cfg;
  cfg.record_times = std::move(times);
  return cfg;
}

}  // namespace

TEST_CASE("DOP853 reaches eighth-order accuracy on a smooth problem") {
  // y' = -t y, y(0) = 1  =>  y = exp(-t^2/2)
  auto rhs = [](double t, const std::array<double, 1>& y, std::array<double, 1>& dy) {
    dy[0] = -t * y[0];
    return true;
  };
  const std::vector<double> times{0.0, 1.0, 2.0, 3.0};
  const auto r = integrate_dop853<1>(rhs, times, {1.0}, {1e-13});
  REQUIRE(r.ok());
  for (std::size_t i = 0; i < times.size(); ++i)
    CHECK(std::abs(r.samples[i][0] - std::exp(-0.5 * times[i] * times[i])) < 1e-11);
  // Backward direction hits every requested time exactly.
  const std::vector<double> back{3.0, 1.5, 0.0};
  const auto b = integrate_dop853<1>(rhs, back, {std::exp(-4.5)}, {1e-14});
  REQUIRE(b.ok());
  CHECK(std::abs(b.samples[2][0] - 1.0) < 1e-9);
}

TEST_CASE("DOP853 reports failures instead of looping") {
  auto never = [](double, const std::array<double, 1>&, std::array<double, 1>&) { return false; };
  const std::vector<double> times{0.0, 1.0};
  const auto r = integrate_dop853<1>(never, times, {1.0}, {1e-9});
  CHECK_FALSE(r.ok());
  CHECK(r.status == RunStatus::kNonFinite);

  // a wall at t = 0.5 forces the step below min_step
  auto wall = [](double t, const std::array<double, 1>&, std::array<double, 1>& dy) {
    dy[0] = 1.0;
    return t <= 0.5;
  };
  const auto w = integrate_dop853<1>(wall, times, {1.0}, {1e-9});
  CHECK(w.status == RunStatus::kStepUnderflow);

  auto blowup = [](double, const std::array<double, 1>& y, std::array<double, 1>& dy) {
    dy[0] = y[0] * y[0];
    return true;
  };
  const std::vector<double> far{0.0, 2.0};
  const auto s = integrate_dop853<1>(blowup, far, {1.0}, {1e-9, 0.0, 2000});
  CHECK_FALSE(s.ok());
}

TEST_CASE("stationary eigenstates have zero velocity") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-4, 4), ut(0, 50);
  for (int n1 : {0, 2, 5})
    for (int n2 : {0, 1, 6})
      for (double k : {0.0, 0.9, 1.8}) {
        ModeSet set;
        set.modes = {{n1, n2}};
        set.phases = {0.3};
        const WaveFunction wf({1.0, 1.0, k}, set);
        for (int i = 0; i < 20; ++i) {
          const auto v = try_velocity(wf, u(rng), u(rng), ut(rng));
          if (!v) continue;  // exact zero of a Hermite factor
          CHECK(std::abs(v->v1) < 1e-12);
          CHECK(std::abs(v->v2) < 1e-12);
        }
      }
}

TEST_CASE("two-mode velocity matches the closed form") {
  const auto wf = two_mode();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3, 3), ut(0, 2 * pi);
  for (int i = 0; i < 20; ++i) {
    const double x1 = u(rng), x2 = u(rng), t = ut(rng);
    const auto v = velocity(wf, x1, x2, t);
    CHECK(std::abs(v.v2) < 1e-14);
    CHECK(std::abs(v.v1 - two_mode_v1(x1, t)) < 1e-10);
  }
}

TEST_CASE("velocity equals the phase gradient") {
  const WaveFunction wf({1.0, 1.0, 1.8}, sample_mode_set(12, 6, 5));
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-3, 3), ut(0, 10);
  const double h = 1e-6;
  int done = 0;
  while (done < 50) {
    const double x1 = u(rng), x2 = u(rng), t = ut(rng);
    if (wf.density_normal(x1, x2, t) < 1e-6) continue;
    // arg(Psi(x+h)/Psi(x-h)) needs no unwrapping for small h.
    const double s1 = std::arg(wf.psi(x1 + h, x2, t) / wf.psi(x1 - h, x2, t)) / (2 * h);
    const double s2 = std::arg(wf.psi(x1, x2 + h, t) / wf.psi(x1, x2 - h, t)) / (2 * h);
    const auto v = velocity(wf, x1, x2, t);
    CHECK(std::abs(v.v1 - s1) <= 1e-5 * std::max(std::abs(s1), 1e-2));
    CHECK(std::abs(v.v2 - s2) <= 1e-5 * std::max(std::abs(s2), 1e-2));
    ++done;
  }
}

TEST_CASE("underflowed density is a node error, not a NaN") {
  const auto wf = two_mode();
  CHECK_THROWS_AS(velocity(wf, 40.0, 40.0, 0.0), NearNodeError);
  CHECK_FALSE(try_velocity(wf, 40.0, 40.0, 0.0).has_value());
}

TEST_CASE("integrator configuration validation") {
  IntegratorConfig cfg = config({0.0, 1.0});
  CHECK_NOTHROW(cfg.validate());
  cfg.tol_floor = 1e-8;
  CHECK_THROWS_AS(cfg.validate(), std::domain_error);
  cfg = config({0.0, 1.0});
  cfg.delta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::domain_error);
  CHECK_THROWS_AS(config({}).validate(), std::domain_error);
}

TEST_CASE("single-mode trajectories are frozen") {
  ModeSet set;
  set.modes = {{3, 1}};
  set.phases = {0.0};
  const WaveFunction wf({1.0, 1.0, 0.5}, set);
  const auto tr = integrate_verified(wf, {1.3, -0.8}, config({0.0, 1.0, 5.0, 10.0}));
  REQUIRE(tr.accepted());
  const Point2 q0 = to_normal({1.3, -0.8}, 1.0);
  for (const auto& s : tr.samples) {
    CHECK(std::abs(s.normal.x - q0.x) < 1e-9);
    CHECK(std::abs(s.normal.y - q0.y) < 1e-9);
  }
}

TEST_CASE("verified integration matches a fine RK4 oracle") {
  const auto wf = two_mode();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  for (int i = 0; i < 8; ++i) {
    const Point2 q0{u(rng), u(rng)};
    const auto tr = integrate_verified(wf, from_normal(q0, 1.0), config({0.0, pi, 2 * pi}));
    REQUIRE(tr.accepted());
    CHECK(tr.samples.size() == 3);
    CHECK(std::abs(tr.samples.back().normal.x - rk4_two_mode(q0.x, 2 * pi, 1e-5)) < 1e-6);
    CHECK(std::abs(tr.samples.back().normal.y - q0.y) < 1e-12);
  }
}

TEST_CASE("per-record verification matches the RK4 oracle at every record time") {
  const auto wf = two_mode();
  auto cfg = config({0.0, pi / 2, pi, 3 * pi / 2, 2 * pi});
  cfg.verify_each_record = true;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.5, 2.5);
  for (int i = 0; i < 4; ++i) {
    const Point2 q0{u(rng), u(rng)};
    const auto tr = integrate_verified(wf, from_normal(q0, 1.0), cfg);
    REQUIRE(tr.accepted());
    REQUIRE(tr.samples.size() == 5);
    for (std::size_t j = 1; j < 5; ++j) {
      CHECK(tr.samples[j].t == cfg.record_times[j]);
      CHECK(std::abs(tr.samples[j].normal.x - rk4_two_mode(q0.x, cfg.record_times[j], 1e-5)) < 1e-6);
    }
  }
}

TEST_CASE("long horizons: final-time comparison rejects, per-record verification accepts") {
  const WaveFunction wf({1.0, 1.0, 0.5}, sample_mode_set(12, 6, 11));
  std::vector<double> times;
  for (int i = 0; i <= 50; ++i) times.push_back(2 * pi * i);
  auto cfg = config(times);
  const Point2 start{0.4, -0.7};
  CHECK_FALSE(integrate_verified(wf, start, cfg).accepted());
  cfg.verify_each_record = true;
  const auto tr = integrate_verified(wf, start, cfg);
  REQUIRE(tr.accepted());
  CHECK(tr.samples.size() == times.size());
  CHECK(tr.tolerance <= cfg.tol_start);
  CHECK(tr.samples.front().normal == to_normal(start, 1.0));
}

TEST_CASE("starts next to a node never produce non-finite samples") {
  const auto wf = two_mode();
  // At t = 0 the node line is x1 = -1/sqrt2.
  const double node = -1.0 / std::numbers::sqrt2;
  for (double off : {1e-4, -1e-4}) {
    const auto tr = integrate_verified(wf, from_normal({node + off, 0.3}, 1.0), config({0.0, pi / 2, 2 * pi}));
    if (tr.accepted()) {
      CHECK(tr.tolerance > 0.0);
      for (const auto& s : tr.samples) CHECK((std::isfinite(s.normal.x) && std::isfinite(s.normal.y)));
    } else {
      CHECK(tr.samples.size() == 1);
    }
  }
}

TEST_CASE("determinism and tolerance monotonicity") {
  const WaveFunction wf({1.0, 1.0, 1.8}, sample_mode_set(12, 6, 6));
  const auto cfg = config({0.0, pi / 2, pi});
  for (const Point2 start : {Point2{0.5, 0.2}, Point2{-1.4, 2.0}, Point2{2.39, -1.94}}) {
    const auto a = integrate_verified(wf, start, cfg);
    const auto b = integrate_verified(wf, start, cfg);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      CHECK(a.samples[i].normal.x == b.samples[i].normal.x);
      CHECK(a.samples[i].normal.y == b.samples[i].normal.y);
    }
    CHECK(a.verdict == b.verdict);
    if (a.accepted()) {
      auto tight = cfg;
      tight.tol_start = a.tolerance;
      if (tight.tol_start > tight.tol_floor) CHECK(integrate_verified(wf, start, tight).accepted());
    }
  }
}

TEST_CASE("forward then backward returns to the start") {
  const WaveFunction wf({1.0, 1.0, 0.5}, sample_mode_set(9, 6, 3));
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 1.0);
  int accepted = 0, returned = 0;
  for (int i = 0; i < 40; ++i) {
    const Point2 start{g(rng), g(rng)};
    const auto fwd = integrate_verified(wf, start, config({0.0, 2 * pi}));
    if (!fwd.accepted()) continue;
    const auto back = integrate_verified(wf, fwd.original(1, 1.0), config({2 * pi, 0.0}));
    if (!back.accepted()) continue;
    ++accepted;
    const Point2 end = back.original(1, 1.0);
    if (std::abs(end.x - start.x) < 10 * 5e-3 && std::abs(end.y - start.y) < 10 * 5e-3) ++returned;
  }
  REQUIRE(accepted > 30);
  CHECK(returned >= static_cast<int>(std::ceil(0.99 * accepted)));
}

TEST_CASE("trajectory CSV rows") {
  const auto wf = two_mode();
  std::vector<Trajectory> trs{integrate_verified(wf, {0.4, 0.1}, config({0.0, 1.0}))};
  trs.push_back(Trajectory{{9.0, 9.0}, {{0.0, {1.0, 2.0}}}, Verdict::kRejected, 0.0, 3});
  std::ostringstream out;
  write_trajectories_csv(out, trs, 1.0);
  const std::string s = out.str();
  CHECK(s.rfind("id,t,x_a,x_b,verdict\n", 0) == 0);
  CHECK(s.find(",accepted\n") != std::string::npos);
  CHECK(s.find(",rejected\n") != std::string::npos);
}

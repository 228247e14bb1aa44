#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "qrelax/metrics.hpp"
#include "support/oracles.hpp"

using namespace qrelax;
using std::numbers::pi;

namespace {

CellArray normalised_random(std::mt19937_64& rng, int rows, int cols, double area, bool sparse) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  CellArray a(rows, cols);
  for (double& v : a.values) v = (sparse && u(rng) < 0.3) ? 0.0 : u(rng);
  a.values[0] += 1e-3;  // never all zero
  const double s = a.integral(area);
  for (double& v : a.values) v /= s;
  return a;
}

// Sums 2x2 blocks of a normalised array into an array on the coarser grid.
CellArray merge_blocks(const CellArray& a) {
  CellArray m(a.rows / 2, a.cols / 2);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      m.at(r, c) = 0.25 * (a.at(2 * r, 2 * c) + a.at(2 * r + 1, 2 * c) + a.at(2 * r, 2 * c + 1) +
                           a.at(2 * r + 1, 2 * c + 1));
  return m;
}

WaveFunction ground(double k = 0.0) {
  ModeSet set;
  set.modes = {{0, 0}};
  set.phases = {0.0};
  return WaveFunction({1.0, 1.0, k}, set);
}

}  // namespace

TEST_CASE("grid geometry") {
  const CoarseGrid g;
  CHECK(g.cell_area() == doctest::Approx(100.0 / 256.0));
  CHECK(g.cell_of({-5.0, -5.0}) == std::optional<std::size_t>(0));
  CHECK(g.cell_of({4.99, -5.0}) == std::optional<std::size_t>(15));
  CHECK(g.cell_of({-5.0, 4.99}) == std::optional<std::size_t>(240));
  CHECK_FALSE(g.cell_of({5.0, 0.0}).has_value());
  CoarseGrid bad;
  bad.rows = 1;
  CHECK_THROWS(bad.validate());
  bad = {};
  bad.subsamples = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("coarse rho") {
  const CoarseGrid g;
  std::vector<Point2> one(50, Point2{0.1, 0.1});
  one.push_back({7.0, 0.0});
  const auto r = coarse_rho(one, g);
  CHECK(r.in_box == 50);
  CHECK(r.out_of_box == 1);
  CHECK(r.empty_cells == 255);
  CHECK(r.density.values[*g.cell_of({0.1, 0.1})] == doctest::Approx(1.0 / g.cell_area()).epsilon(1e-15));
  CHECK(r.density.integral(g.cell_area()) == doctest::Approx(1.0).epsilon(1e-15));

  // 400 uniform points per cell on average.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 5);
  std::vector<Point2> pts(256 * 400);
  for (auto& p : pts) p = {u(rng), u(rng)};
  const auto ru = coarse_rho(pts, g);
  const double expect = 1.0 / 100.0;
  for (double v : ru.density.values) CHECK(std::abs(v - expect) / expect < 5.0 / std::sqrt(400.0));
  CHECK(std::abs(ru.density.integral(g.cell_area()) - 1.0) < 1e-12);

  std::vector<Point2> outside{{9.0, 9.0}};
  CHECK_THROWS(coarse_rho(outside, g));
}

TEST_CASE("coarse psi2 for the ground state") {
  const CoarseGrid g;
  const auto c = coarse_psi2(ground(), 0.0, g);
  CHECK(std::abs(c.density.integral(g.cell_area()) - 1.0) < 1e-12);
  CHECK_FALSE(c.low_mass_warning);
  const double center = c.density.at(8, 8);
  for (double v : c.density.values) CHECK(v <= center * (1 + 1e-12));
  CHECK(c.density.at(0, 0) < 1e-9 * center);
  CHECK(c.density.at(15, 15) < 1e-9 * center);
}

TEST_CASE("coarse psi2 against a refined quadrature") {
  const WaveFunction wf({1.0, 1.0, 1.8}, sample_mode_set(12, 6, 3));
  CoarseGrid g;
  const Psi2Thresholds lax{0.0, 0.0};
  const double t = 5 * pi;
  const auto coarse = coarse_psi2(wf, t, g, lax);
  // 64 x 64 midpoint rule per cell, renormalised over the box.
  const int s = 64;
  CellArray fine(16, 16);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      double sum = 0.0;
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
          sum += wf.density_original(-5 + (c + (j + 0.5) / s) * g.cell_width(),
                                     -5 + (r + (i + 0.5) / s) * g.cell_height(), t);
      fine.at(r, c) = sum / (s * s);
    }
  const double mass = fine.integral(g.cell_area());
  double peak = 0.0;
  for (double& v : fine.values) peak = std::max(peak, v /= mass);
  for (std::size_t i = 0; i < fine.values.size(); ++i) {
    const double ref = fine.values[i];
    // Relative where the cell carries weight, absolute (relative to the peak) in the far tail.
    CHECK(std::abs(coarse.density.values[i] - ref) <= 1e-3 * std::max(ref, 1e-3 * peak));
  }
}

TEST_CASE("coarse psi2 box-mass thresholds") {
  CoarseGrid small;
  small.box = {-1.0, 1.0, -1.0, 1.0};
  CHECK_THROWS_AS(coarse_psi2(ground(), 0.0, small), std::runtime_error);
  const auto warned = coarse_psi2(ground(), 0.0, small, {0.0, 0.99});
  CHECK(warned.low_mass_warning);
  CHECK(warned.raw_box_mass < 0.95);
  CHECK(std::abs(warned.density.integral(small.cell_area()) - 1.0) < 1e-12);
}

TEST_CASE("h function reference values") {
  const CoarseGrid g;
  const double area = g.cell_area();
  CellArray uniform(16, 16, 1.0 / 100.0);
  CHECK(h_function(uniform, uniform, g) == 0.0);
  CellArray point(16, 16, 0.0);
  point.at(3, 7) = 1.0 / area;
  CHECK(std::abs(h_function(point, uniform, g) - std::log(256.0)) < 1e-12);
  // A cell where rho > 0 but psi2 = 0 stays finite.
  CellArray hole = uniform;
  hole.at(0, 0) = 0.0;
  CHECK(std::isfinite(h_function(uniform, hole, g)));
  CellArray nan = uniform;
  nan.at(1, 1) = std::nan("");
  CHECK_THROWS(h_function(nan, uniform, g));
}

TEST_CASE("h function is non-negative on random normalised pairs") {
  const CoarseGrid g;
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    const auto rho = normalised_random(rng, 16, 16, g.cell_area(), i % 2 == 0);
    const auto psi = normalised_random(rng, 16, 16, g.cell_area(), false);
    CHECK(h_function(rho, psi, g) >= -1e-12);
  }
}

TEST_CASE("merging 2x2 blocks never increases H") {
  CoarseGrid fine, coarse;
  coarse.rows = coarse.cols = 8;
  std::mt19937_64 rng(9);
  for (int i = 0; i < 1000; ++i) {
    const auto rho = normalised_random(rng, 16, 16, fine.cell_area(), i % 3 == 0);
    const auto psi = normalised_random(rng, 16, 16, fine.cell_area(), false);
    CHECK(h_function(merge_blocks(rho), merge_blocks(psi), coarse) <= h_function(rho, psi, fine) + 1e-12);
  }
}

TEST_CASE("FTM H(0) equals the analytic coarse relative entropy") {
  const WaveFunction wf({1.0, 1.0, 0.5}, sample_mode_set(9, 6, 1));
  const CoarseGrid g;
  EnsembleSpec spec;
  spec.count = 20000;
  spec.seed = 4;
  IntegratorConfig cfg;
  cfg.record_times = {0.0};
  const auto snaps = evolve(spec, wf, cfg);
  const auto series = h_series_ftm(snaps, wf, g);
  REQUIRE(series.points.size() == 1);

  // Cell means of the truncated Gaussian by a fine midpoint rule.
  const TruncatedGaussian tg(spec.gaussian, spec.box);
  CellArray rho0(16, 16);
  const int s = 16;
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) {
      double sum = 0.0;
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
          sum += tg({-5 + (c + (j + 0.5) / s) * g.cell_width(), -5 + (r + (i + 0.5) / s) * g.cell_height()});
      rho0.at(r, c) = sum / (s * s);
    }
  const double exact = h_function(rho0, coarse_psi2(wf, 0.0, g).density, g);
  const double boot = bootstrap_h_ftm(snaps.positions[0], coarse_psi2(wf, 0.0, g).density, g, 100, 3);
  const double occupied = 256.0 - static_cast<double>(series.points[0].empty_cells);
  const double plug_in_bias = (occupied - 1.0) / (2.0 * static_cast<double>(spec.count));
  CHECK(std::abs(series.points[0].h - exact) < 3 * boot + plug_in_bias);
  CHECK(series.points[0].h >= 0.0);
}

TEST_CASE("equilibrium ensembles stay inside the null band") {
  const WaveFunction wf({1.0, 1.0, 0.5}, sample_mode_set(9, 6, 1));
  const CoarseGrid g;
  const auto starts = sample_equilibrium(wf, g.box, 5000, 2);
  IntegratorConfig cfg;
  cfg.record_times = {0.0, pi / 2, pi};
  const auto snaps = evolve_points(starts, g.box, wf, cfg);
  const auto series = h_series_ftm(snaps, wf, g);
  for (std::size_t i = 0; i < series.points.size(); ++i) {
    const auto psi2 = coarse_psi2(wf, snaps.times[i], g).density;
    // 99% band here: three times are tested and a false alarm should be rare.
    const double band = oracle::null_band(psi2, g, snaps.positions[i].size(), 200, 31 + i, 0.99);
    CHECK(series.points[i].h < band);
  }
}

TEST_CASE("bootstrap needs data") {
  const CoarseGrid g;
  CellArray u(16, 16, 0.01);
  std::vector<Point2> none;
  CHECK_THROWS(bootstrap_h_ftm(none, u, g, 10, 1));
  std::vector<Point2> some{{0.0, 0.0}};
  CHECK_THROWS(bootstrap_h_ftm(some, u, g, 1, 1));
}

TEST_CASE("backtracking identities") {
  const WaveFunction wf({1.0, 1.0, 0.5}, sample_mode_set(9, 6, 1));
  const CoarseGrid g;
  IntegratorConfig cfg;
  BacktrackOptions opts;
  opts.points_per_cell = 64;  // same nodes as the 8 x 8 psi2 quadrature

  SUBCASE("equilibrium rho0 gives H = 0 at every time") {
    const InitialDensity eq = [&wf](Point2 q) { return wf.density_original(q.x, q.y, 0.0); };
    opts.points_per_cell = 64;
    CoarseGrid quick;
    quick.rows = quick.cols = 4;
    const std::vector<double> times{0.0, pi / 2};
    const auto res = h_series_backtracking(wf, eq, quick, times, cfg, opts);
    REQUIRE(res.series.points.size() == 2);
    for (const auto& p : res.series.points) CHECK(std::abs(p.h) < 1e-6);
    CHECK(res.series.method == HMethod::kBacktracking);
  }
  SUBCASE("t = 0 reproduces the lattice-averaged rho0 without integrating") {
    const TruncatedGaussian tg({}, g.box);
    const InitialDensity rho0 = [&tg](Point2 q) { return tg(q); };
    const std::vector<double> times{0.0};
    opts.points_per_cell = 4;
    const auto res = h_series_backtracking(wf, rho0, g, times, cfg, opts);
    CellArray means(16, 16);
    for (int r = 0; r < 16; ++r)
      for (int c = 0; c < 16; ++c) {
        double s = 0.0;
        // two-point Gauss rule on each side: offsets 1/2 -+ 1/(2 sqrt 3), equal weights
        const double lo = 0.5 - 0.5 / std::sqrt(3.0), hi = 0.5 + 0.5 / std::sqrt(3.0);
        for (double di : {lo, hi})
          for (double dj : {lo, hi}) s += tg({-5 + (c + dj) * g.cell_width(), -5 + (r + di) * g.cell_height()});
        means.at(r, c) = s / 4.0;
      }
    const double mass = means.integral(g.cell_area());
    for (double& v : means.values) v /= mass;
    CHECK(res.series.points[0].h == doctest::Approx(h_function(means, coarse_psi2(wf, 0.0, g).density, g)).epsilon(1e-12));
    CHECK(res.rejected_points == 0);
  }
  SUBCASE("lattice size must be a square") {
    opts.points_per_cell = 5;
    const InitialDensity one = [](Point2) { return 1.0; };
    const std::vector<double> times{0.0};
    CHECK_THROWS(h_series_backtracking(wf, one, g, times, cfg, opts));
  }
}

TEST_CASE("H-series and grid CSV schemas") {
  HSeries s;
  s.method = HMethod::kForward;
  s.points = {{0.0, 1.5, 3, 0.0, 0, 1.0}, {0.5, 0.25, 1, 0.125, 0, 1.0}};
  std::ostringstream out;
  s.write_csv(out);
  CHECK(out.str() == "time,H,method,empty_cells,oob_frac\n0,1.5,FTM,3,0\n0.5,0.25,FTM,1,0.125\n");

  CellArray a(2, 3, 0.5);
  a.at(1, 2) = 2.0;
  std::ostringstream grid;
  a.write(grid);
  CHECK(grid.str() == "0.5,0.5,0.5\n0.5,0.5,2\n");
}

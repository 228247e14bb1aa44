#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "qrelax/csv.hpp"
#include "qrelax/ensemble.hpp"

using namespace qrelax;
using std::numbers::pi;

namespace {

IntegratorConfig config(std::vector<double> times) {
  IntegratorConfig cfg;
  cfg.record_times = std::move(times);
  return cfg;
}

std::vector<std::pair<double, double>> sorted(const std::vector<Point2>& v) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : v) out.emplace_back(p.x, p.y);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("gaussian sampling statistics") {
  EnsembleSpec spec;
  spec.count = 20000;
  spec.gaussian = {0.4, -0.7, 1.0, 0.8, 0.3};
  spec.seed = 5;
  const auto pts = sample_initial(spec);
  REQUIRE(pts.size() == spec.count);
  double ma = 0.0, mb = 0.0;
  for (const auto& p : pts) {
    ma += p.x;
    mb += p.y;
    CHECK(spec.box.contains(p));
  }
  ma /= static_cast<double>(pts.size());
  mb /= static_cast<double>(pts.size());
  const double n = static_cast<double>(spec.count);
  CHECK(std::abs(ma - 0.4) < 4 * 1.0 / std::sqrt(n));
  CHECK(std::abs(mb + 0.7) < 4 * 0.8 / std::sqrt(n));

  const auto again = sample_initial(spec);
  CHECK(sorted(again) == sorted(pts));
  spec.seed = 6;
  CHECK(sample_initial(spec)[0].x != pts[0].x);
}

TEST_CASE("truncated gaussian mass and density") {
  // Independent standard normals: in-box mass is erf(5/sqrt2)^2, tail ~1.1e-6.
  const TruncatedGaussian tg({}, {});
  const double ref = std::pow(std::erf(5.0 / std::numbers::sqrt2), 2);
  CHECK(std::abs(tg.box_mass() - ref) < 1e-9);
  CHECK(1.0 - tg.box_mass() < 1e-4);
  // Correlated case integrates to one over the box.
  const TruncatedGaussian c({0.5, 0.2, 1.2, 0.9, -0.6}, {});
  const int n = 400;
  const double h = 10.0 / n;
  double s = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s += c({-5 + (i + 0.5) * h, -5 + (j + 0.5) * h});
  CHECK(std::abs(s * h * h - 1.0) < 1e-5);
  CHECK(c({6.0, 0.0}) == 0.0);
}

TEST_CASE("invalid ensemble specifications") {
  EnsembleSpec spec;
  spec.gaussian.correlation = 1.0;
  CHECK_THROWS(spec.validate());
  spec = {};
  spec.gaussian.sigma_a = 0.0;
  CHECK_THROWS(spec.validate());
  spec = {};
  spec.count = 0;
  CHECK_THROWS(spec.validate());
  spec = {};
  spec.box = {1.0, 1.0, -5.0, 5.0};
  CHECK_THROWS(spec.validate());
  // A Gaussian parked far outside the box cannot be truncated sensibly.
  spec = {};
  spec.count = 100;
  spec.gaussian.mean_a = 9.0;
  CHECK_THROWS_AS(sample_initial(spec), std::runtime_error);
}

TEST_CASE("stationary wave function keeps every position") {
  ModeSet set;
  set.modes = {{1, 2}};
  set.phases = {0.25};
  const WaveFunction wf({1.0, 1.0, 0.5}, set);
  EnsembleSpec spec;
  spec.count = 200;
  const auto snaps = evolve(spec, wf, config({0.0, 1.0, 3.0}));
  REQUIRE(snaps.times.size() == 3);
  for (std::size_t t = 1; t < 3; ++t)
    for (std::size_t i = 0; i < snaps.positions[0].size(); ++i) {
      CHECK(std::abs(snaps.positions[t][i].x - snaps.positions[0][i].x) < 1e-9);
      CHECK(std::abs(snaps.positions[t][i].y - snaps.positions[0][i].y) < 1e-9);
    }
}

TEST_CASE("desk-size ensemble at default tolerances has no rejections") {
  const WaveFunction wf({1.0, 1.0, 0.5}, sample_mode_set(9, 6, 2));
  EnsembleSpec spec;
  spec.count = 1000;
  spec.seed = 3;
  const auto snaps = evolve(spec, wf, config({0.0, 2 * pi}));
  CHECK(snaps.rejected_count == 0);
  CHECK(snaps.total == 1000);
  for (std::size_t t = 0; t < snaps.times.size(); ++t) {
    CHECK(snaps.positions[t].size() + snaps.rejected_count == spec.count);
    CHECK(snaps.out_of_box[t] <= snaps.positions[t].size());
    CHECK(snaps.ids[t].size() == snaps.positions[t].size());
  }
}

TEST_CASE("order and worker count do not change the result") {
  const WaveFunction wf({1.0, 1.0, 1.8}, sample_mode_set(12, 6, 4));
  EnsembleSpec spec;
  spec.count = 60;
  auto starts = sample_initial(spec);
  const auto cfg = config({0.0, pi});
  const auto a = evolve_points(starts, spec.box, wf, cfg, {1, 0.5});
  std::reverse(starts.begin(), starts.end());
  const auto b = evolve_points(starts, spec.box, wf, cfg, {3, 0.5});
  for (std::size_t t = 0; t < 2; ++t) CHECK(sorted(a.positions[t]) == sorted(b.positions[t]));
}

TEST_CASE("rejection ceiling and record-time contract") {
  const WaveFunction wf({1.0, 1.0, 0.5}, sample_mode_set(9, 6, 2));
  EnsembleSpec spec;
  spec.count = 20;
  auto starved = config({0.0, 2 * pi});
  starved.max_steps = 3;
  CHECK_THROWS_AS(evolve(spec, wf, starved), EnsembleError);
  CHECK_THROWS(evolve(spec, wf, config({1.0, 2.0})));
}

TEST_CASE("equilibrium sampling stays in the box and is deterministic") {
  const WaveFunction wf({1.0, 1.0, 0.5}, sample_mode_set(9, 6, 2));
  const Box box;
  const auto a = sample_equilibrium(wf, box, 500, 9);
  const auto b = sample_equilibrium(wf, box, 500, 9);
  CHECK(a.size() == 500);
  CHECK(sorted(a) == sorted(b));
  for (const auto& p : a) CHECK(box.contains(p));
}

TEST_CASE("snapshot persistence") {
  const auto dir = std::filesystem::temp_directory_path() / "qrelax_snapshot_test";
  std::filesystem::remove_all(dir);
  ModeSet set;
  set.modes = {{0, 0}};
  set.phases = {0.0};
  const WaveFunction wf({1.0, 1.0, 0.0}, set);
  EnsembleSpec spec;
  spec.count = 10;
  const auto snaps = evolve(spec, wf, config({0.0, 1.0}));
  write_snapshots(dir, snaps, spec, wf);
  const auto rows = read_csv(dir / "snapshots_t1.csv");
  REQUIRE(rows.size() == 11);
  CHECK(rows[0] == std::vector<std::string>{"id", "x_a", "x_b"});
  CHECK(std::filesystem::exists(dir / "snapshots_manifest.txt"));
  std::filesystem::remove_all(dir);
}

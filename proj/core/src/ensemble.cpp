#include "qrelax/ensemble.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <random>
#include <string>

#include "qrelax/csv.hpp"
#include "qrelax/parallel.hpp"

namespace qrelax {

void Box::validate() const {
  if (!(xmax > xmin) || !(ymax > ymin) || !std::isfinite(area()))
    throw std::domain_error("box: degenerate region");
}

void GaussianSpec::validate() const {
  if (!(sigma_a > 0.0) || !(sigma_b > 0.0)) throw std::domain_error("gaussian: sigma must be positive");
  if (!(std::abs(correlation) < 1.0)) throw std::domain_error("gaussian: |correlation| must be < 1");
  if (!std::isfinite(mean_a) || !std::isfinite(mean_b)) throw std::domain_error("gaussian: non-finite mean");
}

double GaussianSpec::pdf(Point2 p) const {
  const double za = (p.x - mean_a) / sigma_a;
  const double zb = (p.y - mean_b) / sigma_b;
  const double one_m = 1.0 - correlation * correlation;
  const double q = (za * za - 2.0 * correlation * za * zb + zb * zb) / one_m;
  return std::exp(-0.5 * q) / (2.0 * std::numbers::pi * sigma_a * sigma_b * std::sqrt(one_m));
}

void EnsembleSpec::validate() const {
  if (count == 0) throw std::domain_error("ensemble: N must be positive");
  gaussian.validate();
  box.validate();
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// P(box) for the bivariate normal: integrate the x_a marginal times the
// conditional x_b probability with composite Simpson.
double gaussian_box_mass(const GaussianSpec& g, const Box& box) {
  constexpr int kIntervals = 4000;
  const double cond_sigma = g.sigma_b * std::sqrt(1.0 - g.correlation * g.correlation);
  auto integrand = [&](double xa) {
    const double za = (xa - g.mean_a) / g.sigma_a;
    const double marginal = std::exp(-0.5 * za * za) / (std::sqrt(2.0 * std::numbers::pi) * g.sigma_a);
    const double cond_mean = g.mean_b + g.correlation * g.sigma_b * za;
    return marginal *
           (normal_cdf((box.ymax - cond_mean) / cond_sigma) - normal_cdf((box.ymin - cond_mean) / cond_sigma));
  };
  const double h = (box.xmax - box.xmin) / kIntervals;
  double s = integrand(box.xmin) + integrand(box.xmax);
  for (int i = 1; i < kIntervals; ++i) s += (i % 2 ? 4.0 : 2.0) * integrand(box.xmin + i * h);
  return s * h / 3.0;
}

}  // namespace

TruncatedGaussian::TruncatedGaussian(GaussianSpec gaussian, Box box)
    : gaussian_(gaussian), box_(box) {
  gaussian_.validate();
  box_.validate();
  box_mass_ = gaussian_box_mass(gaussian_, box_);
  if (!(box_mass_ > 0.0)) throw std::domain_error("truncated gaussian: no mass inside the box");
}

double TruncatedGaussian::operator()(Point2 p) const {
  return box_.contains(p) ? gaussian_.pdf(p) / box_mass_ : 0.0;
}

std::vector<Point2> sample_initial(const EnsembleSpec& spec) {
  spec.validate();
  const auto& g = spec.gaussian;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double mix = std::sqrt(1.0 - g.correlation * g.correlation);

  std::vector<Point2> out;
  out.reserve(spec.count);
  std::size_t attempts = 0;
  while (out.size() < spec.count) {
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    const Point2 p{g.mean_a + g.sigma_a * z1, g.mean_b + g.sigma_b * (g.correlation * z1 + mix * z2)};
    ++attempts;
    if (spec.box.contains(p)) out.push_back(p);
    if (attempts >= 1000 && out.size() * 10 < attempts)
      throw std::runtime_error("sample_initial: fewer than 10% of Gaussian draws fall inside the box");
  }
  return out;
}

std::vector<Point2> sample_equilibrium(const WaveFunction& wf, const Box& box, std::size_t count,
                                       std::uint64_t seed, double t) {
  box.validate();
  const double bound = wf.density_original_bound();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(box.xmin, box.xmax);
  std::uniform_real_distribution<double> uy(box.ymin, box.ymax);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point2> out;
  out.reserve(count);
  while (out.size() < count) {
    const Point2 p{ux(rng), uy(rng)};
    const double d = wf.density_original(p.x, p.y, t);
    if (d > bound) throw std::logic_error("sample_equilibrium: density exceeds its analytic bound");
    if (unit(rng) * bound < d) out.push_back(p);
  }
  return out;
}

SnapshotSet evolve_points(std::span<const Point2> starts, const Box& box, const WaveFunction& wf,
                          const IntegratorConfig& cfg, const EvolveOptions& options) {
  cfg.validate();
  box.validate();
  std::vector<Trajectory> trajectories(starts.size());
  parallel_for(starts.size(), options.workers,
               [&](std::size_t i) { trajectories[i] = integrate_verified(wf, starts[i], cfg); });

  SnapshotSet set;
  set.times = cfg.record_times;
  set.total = starts.size();
  const std::size_t nt = set.times.size();
  set.positions.assign(nt, {});
  set.ids.assign(nt, {});
  set.out_of_box.assign(nt, 0);
  for (std::size_t id = 0; id < trajectories.size(); ++id) {
    const auto& tr = trajectories[id];
    if (!tr.accepted()) {
      ++set.rejected_count;
      continue;
    }
    for (std::size_t k = 0; k < nt; ++k) {
      const Point2 p = tr.original(k, wf.mass());
      set.positions[k].push_back(p);
      set.ids[k].push_back(id);
      if (!box.contains(p)) ++set.out_of_box[k];
    }
  }
  const double frac = set.total ? static_cast<double>(set.rejected_count) / static_cast<double>(set.total) : 0.0;
  if (frac > options.max_rejected_fraction)
    throw EnsembleError("evolve: " + std::to_string(set.rejected_count) + " of " + std::to_string(set.total) +
                        " trajectories rejected, above the configured ceiling");
  return set;
}

SnapshotSet evolve(const EnsembleSpec& spec, const WaveFunction& wf, const IntegratorConfig& cfg,
                   const EvolveOptions& options) {
  if (cfg.record_times.empty() || cfg.record_times.front() != 0.0)
    throw std::domain_error("evolve: record times must start at 0");
  const auto starts = sample_initial(spec);
  return evolve_points(starts, spec.box, wf, cfg, options);
}

void write_snapshot_csv(std::ostream& out, const SnapshotSet& set, std::size_t time_index) {
  out << "id,x_a,x_b\n";
  const auto& pos = set.positions.at(time_index);
  const auto& ids = set.ids.at(time_index);
  for (std::size_t i = 0; i < pos.size(); ++i)
    out << ids[i] << ',' << format_double(pos[i].x) << ',' << format_double(pos[i].y) << '\n';
}

void write_snapshots(const std::filesystem::path& dir, const SnapshotSet& set, const EnsembleSpec& spec,
                     const WaveFunction& wf) {
  for (std::size_t k = 0; k < set.times.size(); ++k) {
    auto out = open_output(dir / ("snapshots_t" + std::to_string(k) + ".csv"));
    write_snapshot_csv(out, set, k);
  }
  auto m = open_output(dir / "snapshots_manifest.txt");
  const auto& g = spec.gaussian;
  m << "N " << spec.count << '\n'
    << "seed " << spec.seed << '\n'
    << "gaussian " << format_double(g.mean_a) << ' ' << format_double(g.mean_b) << ' '
    << format_double(g.sigma_a) << ' ' << format_double(g.sigma_b) << ' ' << format_double(g.correlation) << '\n'
    << "box " << format_double(spec.box.xmin) << ' ' << format_double(spec.box.xmax) << ' '
    << format_double(spec.box.ymin) << ' ' << format_double(spec.box.ymax) << '\n'
    << "mass " << format_double(wf.model().mass) << '\n'
    << "omega " << format_double(wf.model().omega) << '\n'
    << "k " << format_double(wf.model().coupling) << '\n'
    << "rejected " << set.rejected_count << '\n';
  for (std::size_t k = 0; k < set.times.size(); ++k)
    m << "time " << k << ' ' << format_double(set.times[k]) << " accepted " << set.positions[k].size()
      << " out_of_box " << set.out_of_box[k] << '\n';
  m << wf.mode_set().to_string();
}

}  // namespace qrelax

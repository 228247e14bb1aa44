// Initial nonequilibrium ensembles and their forward evolution.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "qrelax/dynamics.hpp"
#include "qrelax/wavefunction.hpp"

namespace qrelax {

/// Axis-aligned region in (x_a, x_b).
struct Box {
  double xmin = -5.0;
  double xmax = 5.0;
  double ymin = -5.0;
  double ymax = 5.0;

  void validate() const;
  double area() const { return (xmax - xmin) * (ymax - ymin); }
  bool contains(Point2 p) const { return p.x >= xmin && p.x < xmax && p.y >= ymin && p.y < ymax; }
};

/// Bivariate normal in (x_a, x_b).
struct GaussianSpec {
  double mean_a = 0.0;
  double mean_b = 0.0;
  double sigma_a = 1.0;
  double sigma_b = 1.0;
  double correlation = 0.0;

  void validate() const;
  double pdf(Point2 p) const;
};

struct EnsembleSpec {
  std::size_t count = 20000;
  GaussianSpec gaussian;
  Box box;
  std::uint64_t seed = 1;

  void validate() const;
};

/// The Gaussian restricted to the box and renormalised there.
class TruncatedGaussian {
 public:
  TruncatedGaussian(GaussianSpec gaussian, Box box);
  double operator()(Point2 p) const;
  double box_mass() const { return box_mass_; }
  const Box& box() const { return box_; }

 private:
  GaussianSpec gaussian_;
  Box box_;
  double box_mass_;
};

/// N draws from spec.gaussian, redrawing those outside the box.
/// Throws std::runtime_error if fewer than 10% of draws land in the box.
std::vector<Point2> sample_initial(const EnsembleSpec& spec);

/// N draws from density_original(., t) restricted to the box, by rejection
/// against a uniform proposal.
std::vector<Point2> sample_equilibrium(const WaveFunction& wf, const Box& box, std::size_t count,
                                       std::uint64_t seed, double t = 0.0);

struct SnapshotSet {
  std::vector<double> times;
  std::vector<std::vector<Point2>> positions;        // accepted trajectories, original coordinates
  std::vector<std::vector<std::size_t>> ids;         // trajectory index of each position
  std::vector<std::size_t> out_of_box;               // per time
  std::size_t rejected_count = 0;
  std::size_t total = 0;
};

struct EvolveOptions {
  unsigned workers = 0;  // 0 = hardware concurrency
  double max_rejected_fraction = 0.01;
};

class EnsembleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs integrate_verified on every start and collects positions at each
/// record time. Throws EnsembleError if the rejected fraction exceeds the ceiling.
SnapshotSet evolve_points(std::span<const Point2> starts, const Box& box, const WaveFunction& wf,
                          const IntegratorConfig& cfg, const EvolveOptions& options = {});

SnapshotSet evolve(const EnsembleSpec& spec, const WaveFunction& wf, const IntegratorConfig& cfg,
                   const EvolveOptions& options = {});

/// `id,x_a,x_b` rows for one recording time.
void write_snapshot_csv(std::ostream& out, const SnapshotSet& set, std::size_t time_index);

/// snapshots_t<index>.csv for every time plus snapshots_manifest.txt.
void write_snapshots(const std::filesystem::path& dir, const SnapshotSet& set, const EnsembleSpec& spec,
                     const WaveFunction& wf);

}  // namespace qrelax

// Named studies with their key-value configuration, and the run pipeline
// (sample -> evolve -> coarse-grain -> H-series -> fit -> aggregate -> persist).
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qrelax/diagnostics.hpp"
#include "qrelax/ensemble.hpp"
#include "qrelax/fitting.hpp"
#include "qrelax/metrics.hpp"

namespace qrelax {

/// {0, dt, 2 dt, ..., t_end}; requires 0 < dt <= t_end.
std::vector<double> default_record_times(double t_end, double dt);

enum class StudyKind {
  kRelaxation,    // FTM H-series with fits
  kCompare,       // FTM and backtracking on the same wave function
  kTrajectories,  // neighbour-spread and trace tests
};

const char* to_string(StudyKind kind);

enum class Scale { kDesk, kPaper };

struct ExperimentConfig {
  std::string preset = "custom";
  StudyKind kind = StudyKind::kRelaxation;
  std::vector<int> modes{9};
  int n_max = 6;
  double mass = 1.0;
  double omega = 1.0;
  std::vector<double> couplings{0.5};
  std::size_t count = 20000;
  CoarseGrid grid;
  double t_end = 6.283185307179586;
  double dt = 0.7853981633974483;
  IntegratorConfig integrator;  // record_times filled from t_end/dt at run time
  GaussianSpec gaussian;
  bool equilibrium_start = false;
  int presets = 3;
  std::uint64_t seed = 1;
  unsigned workers = 0;
  std::filesystem::path out = "run";
  bool write_snapshots = true;
  int snapshot_every = 1;
  bool write_grids = true;
  double max_rejected_fraction = 0.01;
  double min_box_mass = 0.95;  // coarse |psi|^2 fails below this in-box mass
  int backtrack_points_per_cell = 16;
  int bootstrap_replicates = 50;
  double spread_half_width = kDefaultSpreadHalfWidth;
  std::size_t trace_samples = 1001;

  /// Throws ConfigError describing the first invalid field.
  void validate() const;
  std::vector<double> record_times() const { return default_record_times(t_end, dt); }

  /// Key-value text: one `key = value` per line; lists are comma separated.
  void write(std::ostream& out) const;
  /// Applies `key = value` lines on top of *this. Unknown keys are errors.
  void apply(std::istream& in);
  void set(const std::string& key, const std::string& value);
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure inside one pipeline stage; `stage()` names it.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct PresetInfo {
  std::string name;
  std::string description;
};

std::vector<PresetInfo> list_presets();
/// Throws ConfigError for an unknown name.
ExperimentConfig make_preset(const std::string& name, Scale scale);

/// Seeds derived from the run seed so each (M, preset) pair has its own mode set
/// while all couplings reuse it.
std::uint64_t mode_set_seed(std::uint64_t run_seed, int modes, int preset_index);
std::uint64_t ensemble_seed(std::uint64_t run_seed, int preset_index);

struct PresetOutcome {
  std::uint64_t mode_seed = 0;
  HSeries ftm;
  std::vector<double> ftm_bootstrap_std;
  std::optional<HSeries> backtracking;
  std::vector<double> backtracking_bootstrap_std;
  std::optional<RelaxationFit> fit;
  std::optional<RelaxationFit> backtracking_fit;
  std::size_t rejected = 0;
  std::optional<SpreadTest> spread;
  std::optional<TraceSet> traces;
};

struct CaseOutcome {
  int modes = 0;
  double coupling = 0.0;
  std::filesystem::path dir;
  std::vector<PresetOutcome> presets;
  std::optional<FitAggregate> aggregate;
};

struct RunSummary {
  ExperimentConfig config;
  std::vector<CaseOutcome> cases;
  std::filesystem::path manifest_path;
  double wall_seconds = 0.0;

  const CaseOutcome& find(int modes, double coupling) const;
};

/// Executes the configured study, writing CSVs and manifest.txt under cfg.out.
/// Failures are rethrown as StageError after a manifest with status=failed is written.
RunSummary run_experiment(const ExperimentConfig& cfg);

/// Reads the configuration section of a manifest.
ExperimentConfig read_manifest(const std::filesystem::path& manifest);

}  // namespace qrelax

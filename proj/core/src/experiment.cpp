#include "qrelax/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

#include "qrelax/csv.hpp"

namespace qrelax {

std::vector<double> default_record_times(double t_end, double dt) {
  if (!(dt > 0.0) || !(dt <= t_end) || !std::isfinite(t_end))
    throw std::domain_error("default_record_times: need 0 < dt <= t_end");
  const auto n = static_cast<std::size_t>(std::floor(t_end / dt + 1e-9));
  std::vector<double> times;
  times.reserve(n + 2);
  for (std::size_t i = 0; i <= n; ++i) times.push_back(static_cast<double>(i) * dt);
  if (std::abs(times.back() - t_end) <= 1e-9 * t_end)
    times.back() = t_end;
  else
    times.push_back(t_end);
  return times;
}

const char* to_string(StudyKind kind) {
  switch (kind) {
    case StudyKind::kRelaxation: return "relaxation";
    case StudyKind::kCompare: return "compare";
    case StudyKind::kTrajectories: return "trajectories";
  }
  return "relaxation";
}

// ---------------------------------------------------------------------------
// Configuration text

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  for (auto& f : split_csv_line(v)) {
    auto t = trim(f);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

double parse_number(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + text + "'");
  }
}

// Accepts plain numbers and multiples of pi: "pi", "12pi", "pi/4", "5pi/2".
double parse_real(const std::string& key, const std::string& raw) {
  const std::string text = trim(raw);
  const auto pi_at = text.find("pi");
  if (pi_at == std::string::npos) return parse_number(key, text);
  const std::string lead = text.substr(0, pi_at);
  const std::string tail = text.substr(pi_at + 2);
  double v = std::numbers::pi;
  if (!lead.empty()) v *= parse_number(key, lead == "-" ? "-1" : lead);
  if (!tail.empty()) {
    if (tail.front() != '/') throw ConfigError("config: cannot parse '" + text + "' for key '" + key + "'");
    v /= parse_number(key, tail.substr(1));
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(trim(text), &pos);
    if (pos != trim(text).size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = trim(text);
  if (t == "1" || t == "true" || t == "yes") return true;
  if (t == "0" || t == "false" || t == "no") return false;
  throw ConfigError("config: key '" + key + "' expects a boolean, got '" + text + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& v, F&& fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += fmt(v[i]);
  }
  return s;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "preset") {
    preset = trim(value);
  } else if (key == "kind") {
    const auto v = trim(value);
    if (v == "relaxation") kind = StudyKind::kRelaxation;
    else if (v == "compare") kind = StudyKind::kCompare;
    else if (v == "trajectories") kind = StudyKind::kTrajectories;
    else throw ConfigError("config: unknown kind '" + v + "'");
  } else if (key == "modes") {
    modes.clear();
    for (const auto& f : split_list(value)) modes.push_back(static_cast<int>(parse_integer(key, f)));
  } else if (key == "n_max") {
    n_max = static_cast<int>(parse_integer(key, value));
  } else if (key == "mass") {
    mass = parse_real(key, value);
  } else if (key == "omega") {
    omega = parse_real(key, value);
  } else if (key == "couplings") {
    couplings.clear();
    for (const auto& f : split_list(value)) couplings.push_back(parse_real(key, f));
  } else if (key == "count") {
    const auto n = parse_integer(key, value);
    if (n <= 0) throw ConfigError("config: count must be positive");
    count = static_cast<std::size_t>(n);
  } else if (key == "grid_rows") {
    grid.rows = static_cast<int>(parse_integer(key, value));
  } else if (key == "grid_cols") {
    grid.cols = static_cast<int>(parse_integer(key, value));
  } else if (key == "grid_subsamples") {
    grid.subsamples = static_cast<int>(parse_integer(key, value));
  } else if (key == "box") {
    const auto f = split_list(value);
    if (f.size() != 4) throw ConfigError("config: box expects xmin,xmax,ymin,ymax");
    grid.box = {parse_real(key, f[0]), parse_real(key, f[1]), parse_real(key, f[2]), parse_real(key, f[3])};
  } else if (key == "t_end") {
    t_end = parse_real(key, value);
  } else if (key == "dt") {
    dt = parse_real(key, value);
  } else if (key == "tol_start") {
    integrator.tol_start = parse_real(key, value);
  } else if (key == "tol_floor") {
    integrator.tol_floor = parse_real(key, value);
  } else if (key == "delta") {
    integrator.delta = parse_real(key, value);
  } else if (key == "max_steps") {
    integrator.max_steps = static_cast<std::size_t>(parse_integer(key, value));
  } else if (key == "min_step") {
    integrator.min_step = parse_real(key, value);
  } else if (key == "verify_each_record") {
    integrator.verify_each_record = parse_bool(key, value);
  } else if (key == "gaussian_mean") {
    const auto f = split_list(value);
    if (f.size() != 2) throw ConfigError("config: gaussian_mean expects two values");
    gaussian.mean_a = parse_real(key, f[0]);
    gaussian.mean_b = parse_real(key, f[1]);
  } else if (key == "gaussian_sigma") {
    const auto f = split_list(value);
    if (f.size() != 2) throw ConfigError("config: gaussian_sigma expects two values");
    gaussian.sigma_a = parse_real(key, f[0]);
    gaussian.sigma_b = parse_real(key, f[1]);
  } else if (key == "gaussian_correlation") {
    gaussian.correlation = parse_real(key, value);
  } else if (key == "equilibrium_start") {
    equilibrium_start = parse_bool(key, value);
  } else if (key == "presets") {
    presets = static_cast<int>(parse_integer(key, value));
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(parse_integer(key, value));
  } else if (key == "workers") {
    workers = static_cast<unsigned>(parse_integer(key, value));
  } else if (key == "out") {
    out = trim(value);
  } else if (key == "write_snapshots") {
    write_snapshots = parse_bool(key, value);
  } else if (key == "snapshot_every") {
    snapshot_every = static_cast<int>(parse_integer(key, value));
  } else if (key == "write_grids") {
    write_grids = parse_bool(key, value);
  } else if (key == "max_rejected_fraction") {
    max_rejected_fraction = parse_real(key, value);
  } else if (key == "min_box_mass") {
    min_box_mass = parse_real(key, value);
  } else if (key == "backtrack_points_per_cell") {
    backtrack_points_per_cell = static_cast<int>(parse_integer(key, value));
  } else if (key == "bootstrap_replicates") {
    bootstrap_replicates = static_cast<int>(parse_integer(key, value));
  } else if (key == "spread_half_width") {
    spread_half_width = parse_real(key, value);
  } else if (key == "trace_samples") {
    trace_samples = static_cast<std::size_t>(parse_integer(key, value));
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

void ExperimentConfig::apply(std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void ExperimentConfig::write(std::ostream& o) const {
  auto real = [](double v) { return format_double(v); };
  auto integer = [](int v) { return std::to_string(v); };
  o << "preset = " << preset << '\n'
    << "kind = " << to_string(kind) << '\n'
    << "modes = " << join(modes, integer) << '\n'
    << "n_max = " << n_max << '\n'
    << "mass = " << real(mass) << '\n'
    << "omega = " << real(omega) << '\n'
    << "couplings = " << join(couplings, real) << '\n'
    << "count = " << count << '\n'
    << "grid_rows = " << grid.rows << '\n'
    << "grid_cols = " << grid.cols << '\n'
    << "grid_subsamples = " << grid.subsamples << '\n'
    << "box = " << real(grid.box.xmin) << ',' << real(grid.box.xmax) << ',' << real(grid.box.ymin) << ','
    << real(grid.box.ymax) << '\n'
    << "t_end = " << real(t_end) << '\n'
    << "dt = " << real(dt) << '\n'
    << "tol_start = " << real(integrator.tol_start) << '\n'
    << "tol_floor = " << real(integrator.tol_floor) << '\n'
    << "delta = " << real(integrator.delta) << '\n'
    << "max_steps = " << integrator.max_steps << '\n'
    << "min_step = " << real(integrator.min_step) << '\n'
    << "verify_each_record = " << (integrator.verify_each_record ? 1 : 0) << '\n'
    << "gaussian_mean = " << real(gaussian.mean_a) << ',' << real(gaussian.mean_b) << '\n'
    << "gaussian_sigma = " << real(gaussian.sigma_a) << ',' << real(gaussian.sigma_b) << '\n'
    << "gaussian_correlation = " << real(gaussian.correlation) << '\n'
    << "equilibrium_start = " << (equilibrium_start ? 1 : 0) << '\n'
    << "presets = " << presets << '\n'
    << "seed = " << seed << '\n'
    << "workers = " << workers << '\n'
    << "out = " << out.string() << '\n'
    << "write_snapshots = " << (write_snapshots ? 1 : 0) << '\n'
    << "snapshot_every = " << snapshot_every << '\n'
    << "write_grids = " << (write_grids ? 1 : 0) << '\n'
    << "max_rejected_fraction = " << real(max_rejected_fraction) << '\n'
    << "min_box_mass = " << real(min_box_mass) << '\n'
    << "backtrack_points_per_cell = " << backtrack_points_per_cell << '\n'
    << "bootstrap_replicates = " << bootstrap_replicates << '\n'
    << "spread_half_width = " << real(spread_half_width) << '\n'
    << "trace_samples = " << trace_samples << '\n';
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
  if (modes.empty()) fail("modes list is empty");
  if (couplings.empty()) fail("couplings list is empty");
  if (!(mass > 0.0)) fail("mass must be positive");
  if (!(omega > 0.0)) fail("omega must be positive");
  if (n_max < 0) fail("n_max must be non-negative");
  for (int m : modes)
    if (m < 1 || m > (n_max + 1) * (n_max + 1)) fail("M=" + std::to_string(m) + " exceeds available mode pairs");
  for (double k : couplings)
    if (!(k >= 0.0 && k < 2.0 * omega * omega)) fail("coupling " + format_double(k) + " outside [0, 2 omega^2)");
  if (presets < 1) fail("presets must be >= 1");
  if (count == 0) fail("count must be positive");
  if (snapshot_every < 1) fail("snapshot_every must be >= 1");
  if (!(max_rejected_fraction >= 0.0 && max_rejected_fraction <= 1.0)) fail("max_rejected_fraction outside [0, 1]");
  if (!(min_box_mass >= 0.0 && min_box_mass <= 1.0)) fail("min_box_mass outside [0, 1]");
  if (trace_samples < 2) fail("trace_samples must be >= 2");
  if (!(spread_half_width > 0.0)) fail("spread_half_width must be positive");
  try {
    grid.validate();
    gaussian.validate();
    IntegratorConfig ic = integrator;
    ic.record_times = record_times();
    ic.validate();
  } catch (const std::domain_error& e) {
    fail(e.what());
  }
  if (kind == StudyKind::kCompare) {
    const int side = static_cast<int>(std::lround(std::sqrt(backtrack_points_per_cell)));
    if (side < 1 || side * side != backtrack_points_per_cell) fail("backtrack_points_per_cell must be a perfect square");
  }
}

// ---------------------------------------------------------------------------
// Presets

std::vector<PresetInfo> list_presets() {
  return {
      {"fig1", "FTM vs backtracking H(t), M=9, k=0.5, t in [0, 2pi]"},
      {"fig2", "distribution evolution, M=24, k=0.1, t in [0, 10pi]"},
      {"fig3", "distribution evolution, M=24, k=1.8, t in [0, 10pi]"},
      {"fig4", "neighbour spread and traces, M=20, k in {0.1, 0.9, 1.1, 1.8}, T=10pi"},
      {"fig5", "long runs to 100pi, M in {4, 12, 20}, k in {0.5, 1.8}"},
      {"fig6", "coupling sweep k in [0, 1], t in [0, 12pi]"},
      {"fig7", "coupling sweep k in [1.05, 1.8], t in [0, 12pi]"},
  };
}

namespace {

std::vector<double> coupling_range(int first_hundredths, int last_hundredths) {
  std::vector<double> ks;
  for (int c = first_hundredths; c <= last_hundredths; c += 5) ks.push_back(c / 100.0);
  return ks;
}

}  // namespace

ExperimentConfig make_preset(const std::string& name, Scale scale) {
  using std::numbers::pi;
  const bool paper = scale == Scale::kPaper;
  ExperimentConfig c;
  c.preset = name;
  c.count = paper ? 230400 : 20000;
  c.presets = 3;
  if (name == "fig1") {
    c.kind = StudyKind::kCompare;
    c.modes = {9};
    c.couplings = {0.5};
    c.t_end = 2 * pi;
    c.dt = pi / 4;
    c.presets = 1;
    c.backtrack_points_per_cell = paper ? 256 : 64;
  } else if (name == "fig2" || name == "fig3") {
    c.modes = {24};
    c.couplings = {name == "fig2" ? 0.1 : 1.8};
    c.t_end = 10 * pi;
    c.dt = pi / 2;
    c.snapshot_every = 10;
    // chaotic trajectories drift apart by more than delta even at 1e-16 over
    // 10pi: about 2% of a 20000 ensemble at M=24
    c.max_rejected_fraction = 0.05;
  } else if (name == "fig4") {
    c.kind = StudyKind::kTrajectories;
    c.modes = {20};
    c.couplings = {0.1, 0.9, 1.1, 1.8};
    c.t_end = 10 * pi;
    c.dt = 10 * pi;
    c.write_snapshots = false;
    c.write_grids = false;
  } else if (name == "fig5") {
    c.modes = {4, 12, 20};
    c.couplings = {0.5, 1.8};
    c.t_end = 100 * pi;
    c.dt = 2 * pi;
    // a single final-time comparison over 100pi rejects every trajectory
    c.integrator.verify_each_record = true;
    c.write_snapshots = false;
    c.write_grids = false;
  } else if (name == "fig6" || name == "fig7") {
    const bool low = name == "fig6";
    c.modes = paper ? std::vector<int>{12, 15, 18} : std::vector<int>{12};
    if (paper)
      c.couplings = low ? coupling_range(0, 100) : coupling_range(105, 180);
    else
      c.couplings = low ? std::vector<double>{0.0, 0.5, 1.0} : std::vector<double>{1.05, 1.4, 1.8};
    c.t_end = 12 * pi;
    c.dt = pi / 4;
    c.presets = paper ? 10 : 3;
    c.max_rejected_fraction = 0.05;  // about 1% at M=4 over 12pi
    c.write_snapshots = false;
    c.write_grids = false;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  // At k near 1.8 the soft normal mode spills 10-16% of |psi|^2 outside the
  // [-5,5]^2 box for n <= 6; accept it rather than abort the published cases.
  for (double k : c.couplings)
    if (k > 1.2) c.min_box_mass = 0.8;
  c.out = name;
  return c;
}

// ---------------------------------------------------------------------------
// Seeds

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mode_set_seed(std::uint64_t run_seed, int modes, int preset_index) {
  return splitmix(splitmix(splitmix(run_seed) ^ static_cast<std::uint64_t>(modes)) ^
                  static_cast<std::uint64_t>(preset_index));
}

std::uint64_t ensemble_seed(std::uint64_t run_seed, int preset_index) {
  return splitmix(splitmix(run_seed ^ 0x656e73656d626c65ULL) ^ static_cast<std::uint64_t>(preset_index));
}

const CaseOutcome& RunSummary::find(int m, double k) const {
  for (const auto& c : cases)
    if (c.modes == m && c.coupling == k) return c;
  throw std::out_of_range("run summary: no case M=" + std::to_string(m) + " k=" + format_double(k));
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

template <class F>
auto in_stage(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void write_h_errors(std::ostream& out, const HSeries& series, const std::vector<double>& stds, bool header) {
  if (header) out << "time,method,H,bootstrap_std\n";
  for (std::size_t i = 0; i < series.points.size(); ++i)
    out << format_double(series.points[i].time) << ',' << to_string(series.method) << ','
        << format_double(series.points[i].h) << ',' << (i < stds.size() ? format_double(stds[i]) : "") << '\n';
}

class ManifestWriter {
 public:
  ManifestWriter(const ExperimentConfig& cfg, std::filesystem::path path) : cfg_(cfg), path_(std::move(path)) {}

  void note(std::string line) { notes_.push_back(std::move(line)); }

  void write(const std::string& status, double wall_seconds, const std::string& failure = {}) const {
    auto out = open_output(path_);
    out << "# qrelax run manifest\n"
        << "# version " << kVersion << '\n'
        << "# status " << status << '\n'
        << "# wall_seconds " << wall_seconds << '\n';
    if (!failure.empty()) out << "# failure " << failure << '\n';
    for (const auto& n : notes_) out << "# " << n << '\n';
    cfg_.write(out);
  }

 private:
  static constexpr const char* kVersion = "0.1.0";
  const ExperimentConfig& cfg_;
  std::filesystem::path path_;
  std::vector<std::string> notes_;
};

std::string case_dir_name(int m, double k) { return "M" + std::to_string(m) + "_k" + format_double(k); }

}  // namespace

RunSummary run_experiment(const ExperimentConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };
  in_stage("config", [&] { cfg.validate(); });

  RunSummary summary;
  summary.config = cfg;
  summary.manifest_path = cfg.out / "manifest.txt";
  ManifestWriter manifest(summary.config, summary.manifest_path);

  IntegratorConfig integ = cfg.integrator;
  integ.record_times = cfg.record_times();
  EvolveOptions evolve_opts{cfg.workers, cfg.max_rejected_fraction};
  const Psi2Thresholds thresholds{cfg.min_box_mass, std::max(0.99, cfg.min_box_mass)};

  std::vector<FitRecord> fit_rows, bt_fit_rows;
  std::ostringstream aggregates;
  aggregates << "M,k,presets,mean_tau,std_tau,mean_R,std_R,mean_H0,residue_fraction\n";

  try {
    manifest.write("running", 0.0);
    for (int m : cfg.modes) {
      for (double k : cfg.couplings) {
        CaseOutcome co;
        co.modes = m;
        co.coupling = k;
        co.dir = cfg.out / case_dir_name(m, k);
        double min_mass = 1.0;
        for (int p = 0; p < cfg.presets; ++p) {
          PresetOutcome po;
          po.mode_seed = mode_set_seed(cfg.seed, m, p);
          const auto pdir = co.dir / ("preset" + std::to_string(p));
          const WaveFunction wf = in_stage("wavefunction", [&] {
            return WaveFunction({cfg.mass, cfg.omega, k}, sample_mode_set(m, cfg.n_max, po.mode_seed));
          });
          in_stage("persist", [&] {
            auto o = open_output(pdir / "modeset.txt");
            wf.mode_set().write(o);
          });

          if (cfg.kind == StudyKind::kTrajectories) {
            const double t_end = cfg.t_end;
            po.spread = in_stage("spread", [&] {
              return spread_test(wf, integ, kReferenceStarts, cfg.spread_half_width, t_end, cfg.grid.box,
                                 cfg.workers);
            });
            po.traces = in_stage("trace", [&] {
              return trace_trajectories(wf, integ, kReferenceStarts, t_end, cfg.trace_samples, cfg.grid,
                                        cfg.workers);
            });
            in_stage("persist", [&] {
              auto s = open_output(pdir / "spread.csv");
              write_spread_csv(s, *po.spread);
              auto tr = open_output(pdir / "traces.csv");
              write_traces_csv(tr, *po.traces, cfg.mass);
              auto sc = open_output(pdir / "diagnostics.csv");
              sc << "kind,index,value_a,value_b\n";
              for (std::size_t i = 0; i < po.spread->sets.size(); ++i)
                sc << "spread_score," << i << ',' << format_double(po.spread->sets[i].score) << ','
                   << po.spread->sets[i].rejected << '\n';
              for (std::size_t i = 0; i < po.traces->trajectories.size(); ++i)
                sc << "trace," << i << ',' << format_double(po.traces->path_length[i]) << ','
                   << po.traces->visited_cells[i] << '\n';
            });
            co.presets.push_back(std::move(po));
            continue;
          }

          const std::uint64_t eseed = ensemble_seed(cfg.seed, p);
          EnsembleSpec spec{cfg.count, cfg.gaussian, cfg.grid.box, eseed};
          const auto starts = in_stage("sample", [&] {
            return cfg.equilibrium_start ? sample_equilibrium(wf, cfg.grid.box, cfg.count, eseed)
                                         : sample_initial(spec);
          });
          const SnapshotSet snaps =
              in_stage("evolve", [&] { return evolve_points(starts, cfg.grid.box, wf, integ, evolve_opts); });
          po.rejected = snaps.rejected_count;

          std::vector<CellArray> psi2_grids;
          GridSink sink;
          sink.on_time = [&](std::size_t idx, const CellArray& rho, const CellArray& psi2) {
            psi2_grids.push_back(psi2);
            if (!cfg.write_grids) return;
            auto r = open_output(pdir / ("rho_grid_t" + std::to_string(idx) + ".csv"));
            rho.write(r);
            auto q = open_output(pdir / ("psi2_grid_t" + std::to_string(idx) + ".csv"));
            psi2.write(q);
          };
          po.ftm = in_stage("coarse-grain", [&] { return h_series_ftm(snaps, wf, cfg.grid, &sink, thresholds); });
          for (const auto& pt : po.ftm.points) min_mass = std::min(min_mass, pt.psi2_box_mass);
          if (cfg.bootstrap_replicates >= 2) {
            in_stage("bootstrap", [&] {
              for (std::size_t i = 0; i < snaps.times.size(); ++i)
                po.ftm_bootstrap_std.push_back(bootstrap_h_ftm(snaps.positions[i], psi2_grids[i], cfg.grid,
                                                               cfg.bootstrap_replicates, eseed ^ (i + 1)));
            });
          }
          if (po.ftm.points.size() >= 6) po.fit = in_stage("fit", [&] { return fit_decay(po.ftm); });

          if (cfg.kind == StudyKind::kCompare) {
            InitialDensity rho0;
            if (cfg.equilibrium_start) {
              rho0 = [&wf](Point2 q) { return wf.density_original(q.x, q.y, 0.0); };
            } else {
              rho0 = [tg = TruncatedGaussian(cfg.gaussian, cfg.grid.box)](Point2 q) { return tg(q); };
            }
            BacktrackOptions bo;
            bo.points_per_cell = cfg.backtrack_points_per_cell;
            bo.workers = cfg.workers;
            bo.bootstrap_replicates = cfg.bootstrap_replicates;
            bo.bootstrap_seed = eseed ^ 0xb7ULL;
            bo.thresholds = thresholds;
            const auto bt = in_stage("backtracking", [&] {
              return h_series_backtracking(wf, rho0, cfg.grid, integ.record_times, integ, bo);
            });
            po.backtracking = bt.series;
            po.backtracking_bootstrap_std = bt.bootstrap_std;
            if (bt.series.points.size() >= 6)
              po.backtracking_fit = in_stage("fit", [&] { return fit_decay(bt.series); });
          }

          in_stage("persist", [&] {
            auto h = open_output(pdir / "h_series.csv");
            po.ftm.write_csv(h);
            auto e = open_output(pdir / "h_error.csv");
            write_h_errors(e, po.ftm, po.ftm_bootstrap_std, true);
            if (po.backtracking) {
              auto hb = open_output(pdir / "h_series_backtracking.csv");
              po.backtracking->write_csv(hb);
              write_h_errors(e, *po.backtracking, po.backtracking_bootstrap_std, false);
            }
            if (cfg.write_snapshots) {
              for (std::size_t i = 0; i < snaps.times.size(); i += static_cast<std::size_t>(cfg.snapshot_every)) {
                auto s = open_output(pdir / ("snapshots_t" + std::to_string(i) + ".csv"));
                write_snapshot_csv(s, snaps, i);
              }
            }
          });
          if (po.fit) fit_rows.push_back({m, k, po.mode_seed, *po.fit});
          if (po.backtracking_fit) bt_fit_rows.push_back({m, k, po.mode_seed, *po.backtracking_fit});
          co.presets.push_back(std::move(po));
        }

        if (cfg.kind != StudyKind::kTrajectories && cfg.presets >= 2) {
          std::vector<RelaxationFit> fits;
          std::vector<double> h0s;
          for (const auto& po : co.presets) {
            if (po.fit) fits.push_back(*po.fit);
            h0s.push_back(po.ftm.points.front().h);
          }
          if (fits.size() >= 2) {
            co.aggregate = in_stage("aggregate", [&] { return aggregate(fits, h0s); });
            const auto& a = *co.aggregate;
            aggregates << m << ',' << format_double(k) << ',' << fits.size() << ',' << format_double(a.mean_tau)
                       << ',' << format_double(a.std_tau) << ',' << format_double(a.mean_residue) << ','
                       << format_double(a.std_residue) << ',' << format_double(a.mean_h0) << ','
                       << format_double(a.residue_fraction) << '\n';
          }
        }
        if (min_mass < thresholds.warn_below)
          manifest.note("warning M=" + std::to_string(m) + " k=" + format_double(k) +
                        ": smallest in-box |psi|^2 mass " + format_double(min_mass));
        manifest.note("completed case M=" + std::to_string(m) + " k=" + format_double(k));
        manifest.write("running", elapsed());
        summary.cases.push_back(std::move(co));
      }
    }

    in_stage("persist", [&] {
      if (cfg.kind != StudyKind::kTrajectories) {
        auto f = open_output(cfg.out / "fits.csv");
        write_fits_csv(f, fit_rows);
        if (cfg.kind == StudyKind::kCompare) {
          auto fb = open_output(cfg.out / "fits_backtracking.csv");
          write_fits_csv(fb, bt_fit_rows);
        }
        auto a = open_output(cfg.out / "aggregates.csv");
        a << aggregates.str();
      }
    });
  } catch (const StageError& e) {
    manifest.write("failed", elapsed(), e.what());
    throw;
  }
  summary.wall_seconds = elapsed();
  manifest.write("complete", summary.wall_seconds);
  return summary;
}

ExperimentConfig read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest '" + path.string() + "'");
  ExperimentConfig cfg;
  cfg.apply(in);
  return cfg;
}

}  // namespace qrelax

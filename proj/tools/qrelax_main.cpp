// qrelax: run relaxation studies, list presets, replay a manifest.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

#include "qrelax/experiment.hpp"

namespace fs = std::filesystem;
using namespace qrelax;

namespace {

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
};

void apply(ExperimentConfig& cfg, const Overrides& o) {
  if (o.out) cfg.out = *o.out;
  if (o.seed) cfg.seed = *o.seed;
  if (o.workers) cfg.workers = *o.workers;
}

void print_summary(const RunSummary& s) {
  std::cout << "preset " << s.config.preset << " (" << to_string(s.config.kind) << ") finished in "
            << s.wall_seconds << " s\n";
  for (const auto& c : s.cases) {
    std::cout << "  M=" << c.modes << " k=" << c.coupling;
    std::size_t rejected = 0;
    for (const auto& p : c.presets) rejected += p.rejected;
    if (c.aggregate)
      std::cout << "  tau=" << c.aggregate->mean_tau << " +/- " << c.aggregate->std_tau
                << "  R=" << c.aggregate->mean_residue << " (" << 100.0 * c.aggregate->residue_fraction << "%)";
    else if (!c.presets.empty() && c.presets.front().fit)
      std::cout << "  tau=" << c.presets.front().fit->tau << "  R=" << c.presets.front().fit->residue;
    if (rejected) std::cout << "  rejected=" << rejected;
    std::cout << '\n';
  }
  std::cout << "manifest: " << s.manifest_path.string() << '\n';
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Byte comparison of every CSV under `a` against its counterpart under `b`.
int compare_trees(const fs::path& a, const fs::path& b) {
  int differing = 0, compared = 0;
  const auto skip = fs::weakly_canonical(b);
  for (auto it = fs::recursive_directory_iterator(a); it != fs::recursive_directory_iterator(); ++it) {
    const auto& e = *it;
    if (e.is_directory() && fs::weakly_canonical(e.path()) == skip) {
      it.disable_recursion_pending();
      continue;
    }
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    const auto rel = fs::relative(e.path(), a);
    ++compared;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) {
      std::cout << "  differs: " << rel.string() << '\n';
      ++differing;
    }
  }
  std::cout << "replay: " << compared - differing << "/" << compared << " CSV files identical\n";
  return differing;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error [config] " << e.what() << '\n';
    return 2;
  } catch (const StageError& e) {
    std::cerr << "error " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error [internal] " << e.what() << '\n';
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"de Broglie-Bohm relaxation simulator for coupled oscillators"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run a preset or a config file");
  std::string config_path, preset, scale = "desk";
  Overrides ov;
  auto* cfg_opt = run->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  run->add_option("--preset", preset, "named study (see list-presets)")->excludes(cfg_opt);
  run->add_option("--scale", scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  run->add_option("--out", ov.out, "output directory");
  run->add_option("--seed", ov.seed, "run seed");
  run->add_option("--workers", ov.workers, "worker threads (0 = hardware concurrency)");

  auto* list = app.add_subcommand("list-presets", "show the named studies");

  auto* replay = app.add_subcommand("replay", "rerun the configuration recorded in a manifest");
  std::string manifest;
  Overrides rov;
  replay->add_option("--manifest", manifest, "manifest.txt of an earlier run")->required()->check(CLI::ExistingFile);
  replay->add_option("--out", rov.out, "output directory (default: <run>/replay)");
  replay->add_option("--workers", rov.workers, "worker threads");

  CLI11_PARSE(app, argc, argv);

  if (list->parsed()) {
    for (const auto& p : list_presets()) std::printf("%-6s %s\n", p.name.c_str(), p.description.c_str());
    return 0;
  }

  if (run->parsed()) {
    return run_guarded([&] {
      if (preset.empty() && config_path.empty()) throw ConfigError("run: one of --preset or --config is required");
      const Scale sc = scale == "paper" ? Scale::kPaper : Scale::kDesk;
      ExperimentConfig cfg;
      if (!preset.empty()) {
        cfg = make_preset(preset, sc);
      } else {
        std::ifstream in(config_path);
        cfg.apply(in);
        if (sc == Scale::kPaper) cfg.count = 230400;
      }
      apply(cfg, ov);
      if (sc == Scale::kPaper)
        std::cerr << "warning: paper scale integrates " << cfg.count
                  << " trajectories per preset; expect many hours on a few cores\n";
      print_summary(run_experiment(cfg));
      return 0;
    });
  }

  return run_guarded([&] {
    ExperimentConfig cfg = read_manifest(manifest);
    cfg.out = fs::path(manifest).parent_path() / "replay";
    apply(cfg, rov);
    const auto summary = run_experiment(cfg);
    print_summary(summary);
    const fs::path source = fs::path(manifest).parent_path();
    if (fs::weakly_canonical(source) != fs::weakly_canonical(cfg.out) && compare_trees(source, cfg.out) > 0) {
      std::cerr << "error [replay] outputs differ from the recorded run\n";
      return 5;
    }
    return 0;
  });
}

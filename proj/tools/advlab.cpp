// advlab command line: runs experiments e1..e6, the verify suite, and
// manifest reruns.

#include <malloc.h>

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"

#include "advlab/harness.hpp"
#include "advlab/verify.hpp"

namespace {

using advlab::ExperimentConfig;

struct ExperimentFlags {
  std::string out = "out";
  std::size_t seeds = 0;
  std::string mnist_dir;
  std::string config;
  std::string preset;
  std::optional<double> eps_max, eps_step;
  std::string wd_grid, heads, overlaps;
  bool svg = false;
  bool quiet = false;
};

void add_experiment_flags(CLI::App* cmd, ExperimentFlags& f) {
  cmd->add_option("--out", f.out, "output directory")->capture_default_str();
  cmd->add_option("--seeds", f.seeds, "number of seeds (1..N)");
  cmd->add_option("--mnist-dir", f.mnist_dir, "directory holding the four MNIST IDX files");
  cmd->add_option("--config", f.config, "file of `key = value` overrides");
  cmd->add_option("--preset", f.preset, "full (every cell at full scale) or desk (reduced CNN workload)");
  cmd->add_option("--eps-max", f.eps_max, "largest FGSM epsilon");
  cmd->add_option("--eps-step", f.eps_step, "epsilon grid step");
  cmd->add_option("--wd-grid", f.wd_grid, "comma-separated weight decays (e1)");
  cmd->add_option("--heads", f.heads, "comma-separated heads: fc, sigmoid, pnn, de (e3, e5)");
  cmd->add_option("--overlaps", f.overlaps, "comma-separated band overlaps (e6)");
  cmd->add_flag("--svg", f.svg, "also write an SVG chart of the seed-mean curves");
  cmd->add_flag("-q,--quiet", f.quiet, "no progress output");
}

// Precedence: defaults < preset < config file < command-line flags.
ExperimentConfig build_config(const std::string& experiment, const ExperimentFlags& f) {
  ExperimentConfig c;
  c.experiment = experiment;
  if (!f.preset.empty()) advlab::apply_preset(c, f.preset);
  if (!f.config.empty()) advlab::apply_config_file(c, f.config);
  c.experiment = experiment;
  c.out_dir = f.out;
  if (f.seeds > 0) {
    c.seeds.clear();
    for (std::size_t s = 1; s <= f.seeds; ++s) c.seeds.push_back(s);
  }
  if (!f.mnist_dir.empty()) c.mnist_dir = f.mnist_dir;
  if (f.eps_max) c.eps_max = *f.eps_max;
  if (f.eps_step) c.eps_step = *f.eps_step;
  if (!f.wd_grid.empty()) advlab::apply_setting(c, "wd_grid", f.wd_grid);
  if (!f.heads.empty()) advlab::apply_setting(c, "heads", f.heads);
  if (!f.overlaps.empty()) advlab::apply_setting(c, "overlaps", f.overlaps);
  if (f.svg) c.svg = true;
  return c;
}

std::string short_num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

void print_summary(const advlab::ExperimentResult& r, const ExperimentConfig& c) {
  std::cout << "experiment " << r.experiment << ": " << r.cells.size() << " cells written to "
            << c.out_dir << "\n";
  for (const auto& v : r.variants) {
    if (!r.means.contains(v)) continue;
    const auto& m = r.mean(v);
    const std::size_t i = m.find(c.regime_epsilon);
    std::cout << "  " << v << ": clean " << short_num(m.accuracy.front());
    if (i < m.size())
      std::cout << ", eps " << short_num(c.regime_epsilon) << " acc "
                << short_num(m.accuracy[i]) << " conf "
                << short_num(m.mean_confidence[i]) << " -> "
                << advlab::to_string(
                       advlab::classify_regime(m.accuracy[i], m.mean_confidence[i], c.thresholds));
    std::cout << "\n";
  }
  if (r.illusive) std::cout << "  illusive samples: " << r.illusive->indices.size() << "\n";
  for (const auto& ratio : r.ratios)
    std::cout << "  d_inter/d_intra " << ratio.dataset << ": "
              << short_num(ratio.ratio.ratio) << "\n";
}

int run_verify() {
  bool all = true;
  for (const auto& r : advlab::run_verify_suite()) {
    std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << " (" << r.instances
              << " checks, worst " << advlab::format_double(r.worst) << ")";
    if (!r.detail.empty()) std::cout << " " << r.detail;
    std::cout << "\n";
    all = all && r.passed();
  }
  std::cout << (all ? "verify: all checks passed\n" : "verify: FAILED\n");
  return all ? 0 : 1;
}

int run_rerun(const std::string& manifest, const std::string& out, const std::string& cell,
              bool check, bool quiet) {
  ExperimentConfig c = advlab::config_from_manifest(manifest);
  c.out_dir = out;
  c.only_cell = cell;
  const auto original = std::filesystem::path(manifest).parent_path().string();
  namespace fs = std::filesystem;
  advlab::require(fs::weakly_canonical(original.empty() ? "." : original) != fs::weakly_canonical(out),
                  advlab::ErrorKind::config, "rerun output must differ from the manifest directory");
  advlab::run_experiment(c, quiet ? nullptr : &std::cerr);
  if (!check) return 0;
  const auto diffs = advlab::differing_csvs(original.empty() ? "." : original, out);
  if (diffs.empty()) {
    std::cout << "rerun: all CSV files byte-identical\n";
    return 0;
  }
  for (const auto& d : diffs) std::cout << "differs: " << d << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large activation buffers in the heap between batches.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"advlab: adversarial-robustness experiments"};
  app.require_subcommand(1);

  ExperimentFlags flags;
  std::vector<std::pair<std::string, CLI::App*>> experiments;
  const char* blurbs[] = {"weight decay", "softmax+CE vs sigmoid+BCE", "FC vs PNN vs DE heads",
                          "illusive samples", "number of categories", "band-class geometry"};
  for (int i = 1; i <= 6; ++i) {
    const std::string name = "e" + std::to_string(i);
    auto* cmd = app.add_subcommand(name, blurbs[i - 1]);
    add_experiment_flags(cmd, flags);
    experiments.emplace_back(name, cmd);
  }

  auto* verify = app.add_subcommand("verify", "gradient checks, FGSM bounds, summation bounds");

  std::string manifest, rerun_out = "rerun", cell;
  bool check = false, rerun_quiet = false;
  auto* rerun = app.add_subcommand("rerun", "re-run an experiment (or one cell) from its manifest");
  rerun->add_option("--manifest", manifest, "manifest.json of a previous run")->required();
  rerun->add_option("--out", rerun_out, "output directory")->capture_default_str();
  rerun->add_option("--cell", cell, "only this cell id, e.g. softmax_seed1");
  rerun->add_flag("--check", check, "compare every produced CSV with the original run");
  rerun->add_flag("-q,--quiet", rerun_quiet, "no progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : advlab::exit_code(advlab::ErrorKind::config);
  }

  try {
    if (verify->parsed()) return run_verify();
    if (rerun->parsed()) return run_rerun(manifest, rerun_out, cell, check, rerun_quiet);
    for (const auto& [name, cmd] : experiments) {
      if (!cmd->parsed()) continue;
      const ExperimentConfig c = build_config(name, flags);
      const auto result = advlab::run_experiment(c, flags.quiet ? nullptr : &std::cerr);
      print_summary(result, c);
      return 0;
    }
  } catch (const advlab::Error& e) {
    std::cerr << "error[" << advlab::to_string(e.kind()) << "]: " << e.what() << "\n";
    return advlab::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

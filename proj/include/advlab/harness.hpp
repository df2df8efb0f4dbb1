#pragma once

// Experiment harness: data -> train -> FGSM sweep -> CSV for the six
// robustness experiments, plus manifests and reruns.
//
// Output layout under ExperimentConfig::out_dir:
//   manifest.json            written before any curve
//   cells/<cell>.csv         one robustness curve per (variant, seed)
//   cells/<cell>.train.csv   per-epoch training log
//   mean/<variant>.csv       seed-averaged curve
//   summary.csv              regime of every curve at regime_epsilon
//   cells.csv                per-cell bookkeeping (sizes, clean accuracy, weight norm)
//   plus illusive.csv (e4), ratios.csv (e6), <experiment>.svg (--svg)

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "advlab/attack.hpp"
#include "advlab/data.hpp"
#include "advlab/eval.hpp"
#include "advlab/illusive.hpp"
#include "advlab/network.hpp"
#include "advlab/optim.hpp"

namespace advlab {

inline constexpr std::string_view kVersion = "advlab 1.0.0";

// SHA-1 of the git blob object holding `content`.
inline std::string git_blob_sha1(std::string_view content) {
  const std::string blob = "blob " + std::to_string(content.size()) + '\0' + std::string(content);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(blob.data(), blob.size(), digest, &len, EVP_sha1(), nullptr) == 1,
          ErrorKind::state, "sha1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

inline std::string_view short_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::fc_softmax_ce: return "fc";
    case HeadKind::fc_sigmoid_bce: return "sigmoid";
    case HeadKind::pnn: return "pnn";
    case HeadKind::de: return "de";
  }
  return "?";
}

struct ExperimentConfig {
  std::string experiment = "e1";
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string mnist_dir = "data/mnist";
  std::string out_dir = "out";

  double eps_max = 0.30;
  double eps_step = 0.02;

  // Reference MLP protocol (784-200-200-10); also used by the shallow illusive-selection runs.
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  std::size_t train_limit = 0;  // first N MNIST samples, 0 = all
  std::size_t test_limit = 0;

  // CNN cells (e3 cnn, e4, e6). Limits of 0 fall back to the MLP limits.
  std::size_t cnn_epochs = 10;
  double cnn_learning_rate = 0.001;
  std::size_t cnn_train_limit = 0;
  std::size_t cnn_test_limit = 0;

  std::size_t patterns = 4;
  double sigma = 1.0;
  DeForm de_form = DeForm::squared;

  std::vector<double> wd_grid{0.0, 1e-4, 1e-3, 1e-2};
  std::vector<HeadKind> heads;  // empty: e3 {fc, pnn, de}, e5 {fc}
  std::vector<std::string> extractors{"mlp", "cnn"};

  std::size_t illusive_runs = 10;
  std::size_t illusive_epochs = 3;
  std::size_t shallow_hidden = 32;

  std::size_t k_min = 2;
  std::size_t k_max = 10;
  std::size_t constant_total = 10000;
  std::vector<std::string> modes{"additive", "constant"};

  std::vector<std::size_t> overlaps{0, 8, 16, 24};
  BandSpec band;
  std::size_t ratio_pairs = 50000;

  RegimeThresholds thresholds;
  double regime_epsilon = 0.2;
  bool svg = false;

  // Restricts a run to one cell id (manifest reruns). Not echoed.
  std::string only_cell;

  std::vector<HeadKind> effective_heads() const {
    if (!heads.empty()) return heads;
    if (experiment == "e3") return {HeadKind::fc_softmax_ce, HeadKind::pnn, HeadKind::de};
    return {HeadKind::fc_softmax_ce};
  }

  TrainConfig mlp_train() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.learning_rate = learning_rate;
    return t;
  }

  TrainConfig cnn_train() const {
    TrainConfig t = mlp_train();
    t.epochs = cnn_epochs;
    t.learning_rate = cnn_learning_rate;
    return t;
  }

  std::size_t cnn_train_n() const { return cnn_train_limit ? cnn_train_limit : train_limit; }
  std::size_t cnn_test_n() const { return cnn_test_limit ? cnn_test_limit : test_limit; }

  void validate() const {
    static const std::vector<std::string> known{"e1", "e2", "e3", "e4", "e5", "e6"};
    require(std::find(known.begin(), known.end(), experiment) != known.end(), ErrorKind::config,
            "unknown experiment '" + experiment + "'");
    require(!seeds.empty(), ErrorKind::config, "at least one seed is required");
    AttackSpec::grid(eps_max, eps_step).validate();
    mlp_train().validate();
    cnn_train().validate();
    require(!wd_grid.empty(), ErrorKind::config, "wd_grid is empty");
    for (double wd : wd_grid) require(wd >= 0.0, ErrorKind::config, "weight decay must be >= 0");
    for (const auto& e : extractors)
      require(e == "mlp" || e == "cnn", ErrorKind::config, "unknown extractor '" + e + "'");
    require(patterns >= 1, ErrorKind::config, "patterns must be >= 1");
    require(sigma > 0.0, ErrorKind::config, "sigma must be positive");
    require(illusive_runs >= 1 && illusive_epochs >= 1 && shallow_hidden >= 1, ErrorKind::config,
            "illusive selection needs runs, epochs and hidden width >= 1");
    require(k_min >= 2 && k_min <= k_max && k_max <= 10, ErrorKind::config,
            "class counts must satisfy 2 <= k_min <= k_max <= 10");
    for (const auto& m : modes)
      require(m == "additive" || m == "constant", ErrorKind::config, "unknown mode '" + m + "'");
    require(!overlaps.empty(), ErrorKind::config, "overlaps is empty");
    require(band.n_classes >= 2 && band.band_width >= 1 && band.per_class_train >= 1 &&
                band.per_class_test >= 1,
            ErrorKind::config, "band spec needs >= 2 classes, width >= 1 and samples per class");
    require(ratio_pairs >= 1, ErrorKind::config, "ratio_pairs must be >= 1");
    require(thresholds.acc_hi > 0.0 && thresholds.acc_hi < 1.0 && thresholds.conf_hi > 0.0 &&
                thresholds.conf_hi < 1.0,
            ErrorKind::config, "regime thresholds must lie in (0, 1)");
  }
};

namespace detail {

template <class T, class F>
std::string join(const std::vector<T>& v, F fmt) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::string(fmt(v[i]));
  return s;
}

inline std::vector<std::string_view> list_items(std::string_view v) {
  std::vector<std::string_view> out;
  for (auto item : split(v, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline bool parse_bool(std::string_view v, std::string_view key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(ErrorKind::config, std::string(key) + " expects true or false, got '" + std::string(v) + "'");
}

}  // namespace detail

// Canonical key/value echo of a configuration; apply_setting() inverts it.
inline std::vector<std::pair<std::string, std::string>> settings(const ExperimentConfig& c) {
  auto u = [](std::size_t v) { return std::to_string(v); };
  auto d = [](double v) { return format_double(v); };
  auto s = [](const std::string& v) { return v; };
  return {
      {"experiment", c.experiment},
      {"seeds", detail::join(c.seeds, [](std::uint64_t v) { return std::to_string(v); })},
      {"mnist_dir", c.mnist_dir},
      {"eps_max", d(c.eps_max)},
      {"eps_step", d(c.eps_step)},
      {"epochs", u(c.epochs)},
      {"batch_size", u(c.batch_size)},
      {"learning_rate", d(c.learning_rate)},
      {"train_limit", u(c.train_limit)},
      {"test_limit", u(c.test_limit)},
      {"cnn_epochs", u(c.cnn_epochs)},
      {"cnn_learning_rate", d(c.cnn_learning_rate)},
      {"cnn_train_limit", u(c.cnn_train_limit)},
      {"cnn_test_limit", u(c.cnn_test_limit)},
      {"patterns", u(c.patterns)},
      {"sigma", d(c.sigma)},
      {"de_form", c.de_form == DeForm::squared ? "squared" : "verbatim"},
      {"wd_grid", detail::join(c.wd_grid, d)},
      {"heads", detail::join(c.heads, [](HeadKind h) { return short_name(h); })},
      {"extractors", detail::join(c.extractors, s)},
      {"illusive_runs", u(c.illusive_runs)},
      {"illusive_epochs", u(c.illusive_epochs)},
      {"shallow_hidden", u(c.shallow_hidden)},
      {"k_min", u(c.k_min)},
      {"k_max", u(c.k_max)},
      {"constant_total", u(c.constant_total)},
      {"modes", detail::join(c.modes, s)},
      {"overlaps", detail::join(c.overlaps, u)},
      {"band_classes", u(c.band.n_classes)},
      {"band_width", u(c.band.band_width)},
      {"band_height", u(c.band.height)},
      {"band_width_px", u(c.band.width)},
      {"band_channels", u(c.band.channels)},
      {"band_train_per_class", u(c.band.per_class_train)},
      {"band_test_per_class", u(c.band.per_class_test)},
      {"ratio_pairs", u(c.ratio_pairs)},
      {"acc_hi", d(c.thresholds.acc_hi)},
      {"conf_hi", d(c.thresholds.conf_hi)},
      {"regime_epsilon", d(c.regime_epsilon)},
      {"svg", c.svg ? "true" : "false"},
  };
}

// Reduced CNN workload for a single desktop core; MLP cells stay at full scale.
inline void apply_preset(ExperimentConfig& c, std::string_view name) {
  if (name == "full") {
    c.cnn_epochs = 10;
    c.cnn_train_limit = 0;
    c.cnn_test_limit = 0;
  } else if (name == "desk") {
    c.cnn_epochs = 3;
    c.cnn_train_limit = 20000;
    c.cnn_test_limit = 1000;
  } else {
    fail(ErrorKind::config, "unknown preset '" + std::string(name) + "' (expected full or desk)");
  }
}

inline void apply_setting(ExperimentConfig& c, std::string_view key, std::string_view value) {
  const std::string_view v = trim(value);
  auto u = [&] { return static_cast<std::size_t>(parse_u64(v, key)); };
  auto d = [&] { return parse_double(v, key); };
  if (key == "experiment") c.experiment = std::string(v);
  else if (key == "seeds") {
    c.seeds.clear();
    for (auto item : detail::list_items(v)) c.seeds.push_back(parse_u64(item, key));
  } else if (key == "mnist_dir") c.mnist_dir = std::string(v);
  else if (key == "out_dir") c.out_dir = std::string(v);
  else if (key == "preset") apply_preset(c, v);
  else if (key == "eps_max") c.eps_max = d();
  else if (key == "eps_step") c.eps_step = d();
  else if (key == "epochs") c.epochs = u();
  else if (key == "batch_size") c.batch_size = u();
  else if (key == "learning_rate") c.learning_rate = d();
  else if (key == "train_limit") c.train_limit = u();
  else if (key == "test_limit") c.test_limit = u();
  else if (key == "cnn_epochs") c.cnn_epochs = u();
  else if (key == "cnn_learning_rate") c.cnn_learning_rate = d();
  else if (key == "cnn_train_limit") c.cnn_train_limit = u();
  else if (key == "cnn_test_limit") c.cnn_test_limit = u();
  else if (key == "patterns") c.patterns = u();
  else if (key == "sigma") c.sigma = d();
  else if (key == "de_form") {
    require(v == "squared" || v == "verbatim", ErrorKind::config,
            "de_form must be squared or verbatim");
    c.de_form = v == "squared" ? DeForm::squared : DeForm::verbatim;
  } else if (key == "wd_grid") {
    c.wd_grid.clear();
    for (auto item : detail::list_items(v)) c.wd_grid.push_back(parse_double(item, key));
  } else if (key == "heads") {
    c.heads.clear();
    for (auto item : detail::list_items(v)) c.heads.push_back(parse_head_kind(item));
  } else if (key == "extractors") {
    c.extractors.clear();
    for (auto item : detail::list_items(v)) c.extractors.emplace_back(item);
  } else if (key == "illusive_runs") c.illusive_runs = u();
  else if (key == "illusive_epochs") c.illusive_epochs = u();
  else if (key == "shallow_hidden") c.shallow_hidden = u();
  else if (key == "k_min") c.k_min = u();
  else if (key == "k_max") c.k_max = u();
  else if (key == "constant_total") c.constant_total = u();
  else if (key == "modes") {
    c.modes.clear();
    for (auto item : detail::list_items(v)) c.modes.emplace_back(item);
  } else if (key == "overlaps") {
    c.overlaps.clear();
    for (auto item : detail::list_items(v)) c.overlaps.push_back(parse_u64(item, key));
  } else if (key == "band_classes") c.band.n_classes = u();
  else if (key == "band_width") c.band.band_width = u();
  else if (key == "band_height") c.band.height = u();
  else if (key == "band_width_px") c.band.width = u();
  else if (key == "band_channels") c.band.channels = u();
  else if (key == "band_train_per_class") c.band.per_class_train = u();
  else if (key == "band_test_per_class") c.band.per_class_test = u();
  else if (key == "ratio_pairs") c.ratio_pairs = u();
  else if (key == "acc_hi") c.thresholds.acc_hi = d();
  else if (key == "conf_hi") c.thresholds.conf_hi = d();
  else if (key == "regime_epsilon") c.regime_epsilon = d();
  else if (key == "svg") c.svg = detail::parse_bool(v, key);
  else fail(ErrorKind::config, "unknown config key '" + std::string(key) + "'");
}

// `key = value` lines; '#' starts a comment.
inline void apply_config_text(ExperimentConfig& c, std::string_view text,
                              const std::string& origin = "config") {
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorKind::config,
            origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    try {
      apply_setting(c, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      fail(e.kind(), origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_config_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open config file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  apply_config_text(c, ss.str(), path);
}

// ---------------------------------------------------------------------------
// Results

struct CellResult {
  std::string variant;
  std::uint64_t seed = 0;
  RobustnessCurve curve;
  TrainLog log;
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  double clean_accuracy = 0.0;
  double weight_norm_sq = 0.0;

  std::string id() const { return variant + "_seed" + std::to_string(seed); }
};

struct NamedRatio {
  std::string dataset;
  DistanceRatio ratio;
};

struct ExperimentResult {
  std::string experiment;
  std::vector<std::string> variants;  // in plan order
  std::vector<std::uint64_t> seeds;
  std::vector<CellResult> cells;
  std::map<std::string, RobustnessCurve> means;
  std::optional<IllusiveSelection> illusive;
  std::vector<NamedRatio> ratios;

  const CellResult& cell(const std::string& variant, std::uint64_t seed) const {
    for (const auto& c : cells)
      if (c.variant == variant && c.seed == seed) return c;
    fail(ErrorKind::range, "no cell " + variant + " for seed " + std::to_string(seed));
  }

  const RobustnessCurve& mean(const std::string& variant) const {
    const auto it = means.find(variant);
    require(it != means.end(), ErrorKind::range, "no mean curve for " + variant);
    return it->second;
  }
};

// Variant names of an experiment, in output order.
inline std::vector<std::string> plan_variants(const ExperimentConfig& c) {
  std::vector<std::string> v;
  if (c.experiment == "e1") {
    for (double wd : c.wd_grid) v.push_back("wd-" + format_double(wd));
  } else if (c.experiment == "e2") {
    v = {"softmax", "sigmoid"};
  } else if (c.experiment == "e3") {
    for (const auto& e : c.extractors)
      for (HeadKind h : c.effective_heads()) v.push_back(e + "-" + std::string(short_name(h)));
  } else if (c.experiment == "e4") {
    v = {"full", "minus-illusive", "minus-random"};
  } else if (c.experiment == "e5") {
    const auto heads = c.effective_heads();
    for (const auto& mode : c.modes)
      for (HeadKind h : heads)
        for (std::size_t k = c.k_min; k <= c.k_max; ++k)
          v.push_back(mode + (heads.size() > 1 ? "-" + std::string(short_name(h)) : "") + "-k" +
                      std::to_string(k));
  } else if (c.experiment == "e6") {
    for (std::size_t o : c.overlaps) v.push_back("overlap-" + std::to_string(o));
  }
  return v;
}

inline std::vector<std::string> plan_cells(const ExperimentConfig& c) {
  std::vector<std::string> ids;
  for (const auto& v : plan_variants(c))
    for (std::uint64_t s : c.seeds) ids.push_back(v + "_seed" + std::to_string(s));
  return ids;
}

// ---------------------------------------------------------------------------
// Runner

class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig cfg, std::ostream* log = nullptr)
      : cfg_(std::move(cfg)), log_(log) {
    cfg_.validate();
    if (!cfg_.only_cell.empty()) {
      const auto ids = plan_cells(cfg_);
      require(std::find(ids.begin(), ids.end(), cfg_.only_cell) != ids.end(), ErrorKind::config,
              "experiment " + cfg_.experiment + " has no cell '" + cfg_.only_cell + "'");
    }
  }

  const ExperimentConfig& config() const { return cfg_; }

  ExperimentResult run() {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(cfg_.out_dir) / "cells", ec);
    require(!ec, ErrorKind::io, "cannot create " + cfg_.out_dir + ": " + ec.message());
    write_manifest();

    result_ = ExperimentResult{};
    result_.experiment = cfg_.experiment;
    result_.variants = plan_variants(cfg_);
    result_.seeds = cfg_.seeds;
    if (cfg_.experiment == "e1") run_e1();
    else if (cfg_.experiment == "e2") run_e2();
    else if (cfg_.experiment == "e3") run_e3();
    else if (cfg_.experiment == "e4") run_e4();
    else if (cfg_.experiment == "e5") run_e5();
    else run_e6();
    if (cfg_.only_cell.empty()) finish();
    return std::move(result_);
  }

  std::string manifest_json() const {
    nlohmann::ordered_json j;
    j["tool"] = "advlab";
    j["version"] = std::string(kVersion);
    j["code_hash"] = git_blob_sha1(kVersion);
    j["prng"] = std::string(kPrngId);
    j["experiment"] = cfg_.experiment;
    j["seeds"] = cfg_.seeds;
    nlohmann::ordered_json conf = nlohmann::ordered_json::object();
    for (const auto& [k, v] : settings(cfg_)) conf[k] = v;
    j["config"] = conf;
    j["cells"] = plan_cells(cfg_);
    return j.dump(2) + "\n";
  }

 private:
  void say(const std::string& msg) const {
    if (log_) *log_ << "[" << cfg_.experiment << "] " << msg << std::endl;
  }

  bool wanted(const std::string& variant, std::uint64_t seed) const {
    return cfg_.only_cell.empty() || cfg_.only_cell == variant + "_seed" + std::to_string(seed);
  }
  bool wanted_variant(const std::string& variant) const {
    for (std::uint64_t s : cfg_.seeds)
      if (wanted(variant, s)) return true;
    return false;
  }

  std::string path(const std::string& rel) const {
    return (std::filesystem::path(cfg_.out_dir) / rel).string();
  }

  void write_text(const std::string& rel, const std::string& text) const {
    std::ofstream os(path(rel), std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path(rel) + " for writing");
    os << text;
    require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path(rel));
  }

  void write_manifest() const { write_text("manifest.json", manifest_json()); }

  const MnistSplits& mnist() {
    if (!mnist_) {
      try {
        mnist_ = load_mnist_dir(cfg_.mnist_dir);
      } catch (const Error& e) {
        fail(e.kind(), "MNIST dataset missing or unreadable under '" + cfg_.mnist_dir +
                           "': " + e.what());
      }
    }
    return *mnist_;
  }

  AttackSpec attack() const { return AttackSpec::grid(cfg_.eps_max, cfg_.eps_step); }

  std::vector<std::string> regime_lines(const RobustnessCurve& c) const {
    const std::size_t i = c.find(cfg_.regime_epsilon);
    if (i == c.size()) return {};
    return {"regime_at_" + format_double(cfg_.regime_epsilon) + ": " +
            std::string(to_string(classify_regime(c.accuracy[i], c.mean_confidence[i],
                                                  cfg_.thresholds))) +
            " (acc_hi " + format_double(cfg_.thresholds.acc_hi) + ", conf_hi " +
            format_double(cfg_.thresholds.conf_hi) + ")"};
  }

  // Trains, sweeps and writes one cell. All cells of a seed share the network
  // and shuffle seeds, so variants are paired comparisons.
  void run_cell(const std::string& variant, std::uint64_t seed, NetworkSpec spec,
                const LabeledDataset& train_ds, const LabeledDataset& test_ds, TrainConfig tc) {
    if (!wanted(variant, seed)) return;
    CellResult cell;
    cell.variant = variant;
    cell.seed = seed;
    say("cell " + cell.id() + ": training on " + std::to_string(train_ds.size()) + " samples");
    spec.n_classes = train_ds.n_classes();
    spec.seed = derive_seed(seed, "net");
    tc.seed = derive_seed(seed, "shuffle");
    Network net(spec);
    cell.log = train(net, train_ds, tc, &test_ds);
    cell.curve = sweep(net, test_ds, attack());
    cell.curve.seed = std::to_string(seed);
    cell.train_samples = train_ds.size();
    cell.test_samples = test_ds.size();
    cell.clean_accuracy = cell.curve.accuracy.front();
    cell.weight_norm_sq = weight_norm_sq(net);

    std::vector<std::string> extra{"experiment: " + cfg_.experiment, "variant: " + variant,
                                   "train_samples: " + std::to_string(train_ds.size())};
    for (auto& l : regime_lines(cell.curve)) extra.push_back(std::move(l));
    write_curve_csv(cell.curve, path("cells/" + cell.id() + ".csv"), extra);
    write_train_log_csv(cell.log, path("cells/" + cell.id() + ".train.csv"));
    say("cell " + cell.id() + ": clean accuracy " + format_double(cell.clean_accuracy));
    result_.cells.push_back(std::move(cell));
  }

  LabeledDataset mlp_train_set() { return head_subset(mnist().train, cfg_.train_limit); }
  LabeledDataset mlp_test_set() { return head_subset(mnist().test, cfg_.test_limit); }
  LabeledDataset cnn_train_set() { return head_subset(mnist().train, cfg_.cnn_train_n()); }
  LabeledDataset cnn_test_set() { return head_subset(mnist().test, cfg_.cnn_test_n()); }

  NetworkSpec pattern_ready(NetworkSpec s) const {
    s.patterns = cfg_.patterns;
    s.sigma = cfg_.sigma;
    s.de_form = cfg_.de_form;
    return s;
  }

  void run_e1() {
    const auto train_ds = mlp_train_set();
    const auto test_ds = mlp_test_set();
    for (std::uint64_t seed : cfg_.seeds)
      for (double wd : cfg_.wd_grid) {
        TrainConfig tc = cfg_.mlp_train();
        tc.weight_decay = wd;
        run_cell("wd-" + format_double(wd), seed, NetworkSpec::reference_mlp(), train_ds, test_ds,
                 tc);
      }
  }

  void run_e2() {
    const auto train_ds = mlp_train_set();
    const auto test_ds = mlp_test_set();
    for (std::uint64_t seed : cfg_.seeds) {
      run_cell("softmax", seed, NetworkSpec::reference_mlp(HeadKind::fc_softmax_ce), train_ds,
               test_ds, cfg_.mlp_train());
      run_cell("sigmoid", seed, NetworkSpec::reference_mlp(HeadKind::fc_sigmoid_bce), train_ds,
               test_ds, cfg_.mlp_train());
    }
  }

  void run_e3() {
    for (const auto& ext : cfg_.extractors) {
      const bool cnn = ext == "cnn";
      bool any = false;
      for (HeadKind h : cfg_.effective_heads())
        any = any || wanted_variant(ext + "-" + std::string(short_name(h)));
      if (!any) continue;
      const auto train_ds = cnn ? cnn_train_set() : mlp_train_set();
      const auto test_ds = cnn ? cnn_test_set() : mlp_test_set();
      for (std::uint64_t seed : cfg_.seeds)
        for (HeadKind h : cfg_.effective_heads()) {
          const NetworkSpec spec =
              pattern_ready(cnn ? NetworkSpec::reference_cnn(h) : NetworkSpec::reference_mlp(h));
          run_cell(ext + "-" + std::string(short_name(h)), seed, spec, train_ds, test_ds,
                   cnn ? cfg_.cnn_train() : cfg_.mlp_train());
        }
    }
  }

  void run_e4() {
    const auto pool = cnn_train_set();
    const auto test_ds = cnn_test_set();
    NetworkSpec shallow = NetworkSpec::shallow_mlp(pool.n_classes());
    shallow.hidden = {cfg_.shallow_hidden};
    say("selecting illusive samples with " + std::to_string(cfg_.illusive_runs) +
        " shallow runs on " + std::to_string(pool.size()) + " samples");
    IllusiveSelection sel =
        select_illusive(pool, cfg_.illusive_runs, shallow, cfg_.illusive_epochs,
                        derive_seed(cfg_.seeds.front(), "illusive"), cfg_.batch_size,
                        cfg_.learning_rate);
    const std::size_t count = sel.indices.size();
    say("illusive samples: " + std::to_string(count));
    if (count == 0) say("no illusive samples found; minus-illusive equals the full set");

    std::ostringstream os;
    os << "# illusive_count: " << count << "\n# runs: " << sel.n_runs
       << "\n# pool: " << pool.name() << "\nindex,label,correct_runs,illusive\n";
    for (std::size_t i = 0; i < pool.size(); ++i)
      os << i << ',' << pool.label(i) << ',' << sel.correct_runs[i] << ','
         << (sel.indices.contains(i) ? 1 : 0) << '\n';
    write_text("illusive.csv", os.str());

    const auto minus_illusive = remove_indices(pool, sel.indices);
    const NetworkSpec deeper = NetworkSpec::reference_cnn(HeadKind::fc_softmax_ce);
    for (std::uint64_t seed : cfg_.seeds) {
      run_cell("full", seed, deeper, pool, test_ds, cfg_.cnn_train());
      run_cell("minus-illusive", seed, deeper, minus_illusive, test_ds, cfg_.cnn_train());
      if (wanted("minus-random", seed)) {
        const auto minus_random = remove_random(pool, count, derive_seed(seed, "random-removal"));
        run_cell("minus-random", seed, deeper, minus_random, test_ds, cfg_.cnn_train());
      }
    }
    result_.illusive = std::move(sel);
  }

  void run_e5() {
    const auto train_all = mlp_train_set();
    const auto test_all = mnist().test;
    const auto heads = cfg_.effective_heads();
    for (std::uint64_t seed : cfg_.seeds)
      for (const auto& mode : cfg_.modes)
        for (HeadKind h : heads)
          for (std::size_t k = cfg_.k_min; k <= cfg_.k_max; ++k) {
            const std::string variant =
                mode + (heads.size() > 1 ? "-" + std::string(short_name(h)) : "") + "-k" +
                std::to_string(k);
            if (!wanted(variant, seed)) continue;
            std::vector<std::size_t> keep(k);
            std::iota(keep.begin(), keep.end(), std::size_t{0});
            auto train_ds = subset_by_labels(train_all, keep);
            if (mode == "constant")
              train_ds = balanced_subsample(train_ds, cfg_.constant_total,
                                            derive_seed(seed, "constant-k" + std::to_string(k)),
                                            true);
            const auto test_ds = head_subset(subset_by_labels(test_all, keep), cfg_.test_limit);
            run_cell(variant, seed, pattern_ready(NetworkSpec::reference_mlp(h, k)), train_ds,
                     test_ds, cfg_.mlp_train());
          }
  }

  void run_e6() {
    NetworkSpec cnn = NetworkSpec::reference_cnn(HeadKind::fc_softmax_ce, cfg_.band.n_classes);
    cnn.height = cfg_.band.height;
    cnn.width = cfg_.band.width;
    cnn.channels = cfg_.band.channels;
    for (std::size_t overlap : cfg_.overlaps) {
      const std::string variant = "overlap-" + std::to_string(overlap);
      for (std::uint64_t seed : cfg_.seeds) {
        const bool need_ratio = cfg_.only_cell.empty() && seed == cfg_.seeds.front();
        if (!wanted(variant, seed) && !need_ratio) continue;
        BandSpec spec = cfg_.band;
        spec.overlap = overlap;
        spec.seed = derive_seed(seed, "band");
        const BandSplits bands = gen_band_classes(spec);
        if (need_ratio)
          result_.ratios.push_back(
              {bands.train.name(),
               inter_intra_ratio(bands.train, cfg_.ratio_pairs, derive_seed(seed, "ratio"))});
        run_cell(variant, seed, cnn, bands.train, bands.test, cfg_.cnn_train());
      }
    }
    if (!cfg_.only_cell.empty()) return;
    std::optional<LabeledDataset> mnist_train;
    try {
      mnist_train = mlp_train_set();
    } catch (const Error& e) {
      say(std::string("MNIST ratio skipped: ") + e.what());
    }
    if (mnist_train)
      result_.ratios.push_back(
          {mnist_train->name(), inter_intra_ratio(*mnist_train, cfg_.ratio_pairs,
                                                  derive_seed(cfg_.seeds.front(), "ratio"))});
    std::ostringstream os;
    os << "# prng: " << kPrngId << "\n# max_pairs: " << cfg_.ratio_pairs
       << "\ndataset,d_inter,d_intra,ratio,inter_pairs,intra_pairs\n";
    for (const auto& r : result_.ratios)
      os << r.dataset << ',' << format_double(r.ratio.d_inter) << ','
         << format_double(r.ratio.d_intra) << ',' << format_double(r.ratio.ratio) << ','
         << r.ratio.inter_pairs << ',' << r.ratio.intra_pairs << '\n';
    write_text("ratios.csv", os.str());
  }

  void finish() {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(cfg_.out_dir) / "mean", ec);
    require(!ec, ErrorKind::io, "cannot create " + path("mean") + ": " + ec.message());

    std::ostringstream summary;
    summary << "# regime_epsilon: " << format_double(cfg_.regime_epsilon)
            << "\n# acc_hi: " << format_double(cfg_.thresholds.acc_hi)
            << "\n# conf_hi: " << format_double(cfg_.thresholds.conf_hi)
            << "\nvariant,seed,clean_accuracy,accuracy,mean_confidence,regime\n";
    auto summary_row = [&](const std::string& variant, const std::string& seed,
                           const RobustnessCurve& c) {
      const std::size_t i = c.find(cfg_.regime_epsilon);
      summary << variant << ',' << seed << ',' << format_double(c.accuracy.front()) << ',';
      if (i == c.size()) {
        summary << ",,\n";
        return;
      }
      summary << format_double(c.accuracy[i]) << ',' << format_double(c.mean_confidence[i]) << ','
              << to_string(classify_regime(c.accuracy[i], c.mean_confidence[i], cfg_.thresholds))
              << '\n';
    };

    std::ostringstream cells;
    cells << "variant,seed,train_samples,test_samples,final_loss,clean_accuracy,weight_norm_sq\n";
    std::vector<RobustnessCurve> mean_curves;
    for (const auto& variant : result_.variants) {
      std::vector<RobustnessCurve> per_seed;
      for (const auto& c : result_.cells) {
        if (c.variant != variant) continue;
        per_seed.push_back(c.curve);
        summary_row(variant, std::to_string(c.seed), c.curve);
        cells << variant << ',' << c.seed << ',' << c.train_samples << ',' << c.test_samples << ','
              << format_double(c.log.back().mean_loss) << ',' << format_double(c.clean_accuracy)
              << ',' << format_double(c.weight_norm_sq) << '\n';
      }
      if (per_seed.empty()) continue;
      RobustnessCurve m = average_curves(per_seed, per_seed.front().model_id);
      std::vector<std::string> extra{"experiment: " + cfg_.experiment, "variant: " + variant,
                                     "seed_mean_of: " + std::to_string(per_seed.size())};
      for (auto& l : regime_lines(m)) extra.push_back(std::move(l));
      write_curve_csv(m, path("mean/" + variant + ".csv"), extra);
      summary_row(variant, "mean", m);
      mean_curves.push_back(m);
      result_.means.emplace(variant, std::move(m));
    }
    write_text("summary.csv", summary.str());
    write_text("cells.csv", cells.str());
    if (cfg_.svg) {
      std::vector<std::string> labels;
      for (const auto& v : result_.variants)
        if (result_.means.contains(v)) labels.push_back(v);
      write_text(cfg_.experiment + ".svg",
                 curves_svg(mean_curves, labels, cfg_.experiment + " (seed mean)"));
    }
  }

  ExperimentConfig cfg_;
  std::ostream* log_;
  std::optional<MnistSplits> mnist_;
  ExperimentResult result_;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr) {
  return ExperimentRunner(cfg, log).run();
}

// Configuration recorded in a manifest.
inline ExperimentConfig config_from_manifest(const std::string& manifest_path) {
  std::ifstream is(manifest_path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open manifest " + manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "manifest " + manifest_path + " is not valid JSON: " + e.what());
  }
  require(j.is_object() && j.contains("config") && j["config"].is_object(), ErrorKind::format,
          "manifest " + manifest_path + " has no config object");
  require(j.value("prng", "") == kPrngId, ErrorKind::format,
          "manifest " + manifest_path + " was written with PRNG '" + j.value("prng", "") +
              "', this build uses '" + std::string(kPrngId) + "'");
  ExperimentConfig cfg;
  for (const auto& [key, value] : j["config"].items()) {
    require(value.is_string(), ErrorKind::format, "manifest config value " + key + " is not a string");
    apply_setting(cfg, key, value.get<std::string>());
  }
  return cfg;
}

// Files (relative paths) whose bytes differ between two output directories,
// considering the CSV files present in `produced`.
inline std::vector<std::string> differing_csvs(const std::string& original,
                                               const std::string& produced) {
  namespace fs = std::filesystem;
  auto slurp = [](const fs::path& p) -> std::optional<std::string> {
    std::ifstream is(p, std::ios::binary);
    if (!is) return std::nullopt;
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  std::vector<std::string> diffs;
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(produced))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto rel = fs::relative(f, produced);
    const auto a = slurp(fs::path(original) / rel);
    if (!a || *a != slurp(f)) diffs.push_back(rel.string());
  }
  return diffs;
}

}  // namespace advlab

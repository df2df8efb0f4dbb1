#pragma once

// Robustness metrics, the accuracy/confidence regime taxonomy, class-geometry
// measurement and the curve CSV format.

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "advlab/data.hpp"
#include "advlab/network.hpp"

namespace advlab {

inline constexpr std::size_t kEvalBatch = 256;

// Probabilities [N, n_classes] for every sample, in fixed-size batches.
inline Tensor predict(Network& net, const LabeledDataset& ds, std::size_t batch = kEvalBatch) {
  require(!ds.empty(), ErrorKind::range, "cannot evaluate an empty dataset");
  Tensor out({ds.size(), net.n_classes()});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    const std::size_t end = std::min(ds.size(), start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor p = net.forward(ds.gather(idx));
    std::copy(p.data().begin(), p.data().end(), out.row(start).begin());
  }
  return out;
}

inline double accuracy(const Tensor& probs, std::span<const std::size_t> labels) {
  require(probs.rank() == 2 && probs.dim(0) == labels.size(), ErrorKind::shape,
          "accuracy: probabilities " + to_string(probs.shape()) + " vs " +
              std::to_string(labels.size()) + " labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (argmax(probs.row(i)) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Mean probability of the predicted class, over all samples.
inline double mean_confidence(const Tensor& probs) {
  require(probs.rank() == 2 && probs.dim(0) > 0, ErrorKind::range,
          "mean_confidence needs a non-empty [N, n] tensor");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.dim(0); ++i) {
    auto row = probs.row(i);
    total += row[argmax(row)];
  }
  return total / static_cast<double>(probs.dim(0));
}

// ---------------------------------------------------------------------------
// Regimes

enum class Regime { robust, reliable, unreliable, misleading };

inline std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::robust: return "robust";
    case Regime::reliable: return "reliable";
    case Regime::unreliable: return "unreliable";
    case Regime::misleading: return "misleading";
  }
  return "?";
}

struct RegimeThresholds {
  double acc_hi = 0.75;
  double conf_hi = 0.75;
};

inline Regime classify_regime(double acc, double conf, RegimeThresholds t = {}) {
  require(t.acc_hi > 0.0 && t.acc_hi < 1.0 && t.conf_hi > 0.0 && t.conf_hi < 1.0,
          ErrorKind::range, "regime thresholds must lie in (0, 1)");
  const bool accurate = acc >= t.acc_hi;
  const bool confident = conf >= t.conf_hi;
  if (accurate) return confident ? Regime::robust : Regime::reliable;
  return confident ? Regime::misleading : Regime::unreliable;
}

// ---------------------------------------------------------------------------
// Class geometry

struct DistanceRatio {
  double d_inter = 0.0;
  double d_intra = 0.0;
  double ratio = 0.0;
  std::size_t inter_pairs = 0;
  std::size_t intra_pairs = 0;
};

// Mean Euclidean distance over same-class (intra) and different-class
// (inter) pairs. Uses every pair when there are at most `max_pairs` of each
// kind, otherwise `max_pairs` sampled pairs of each kind. Sampling depends
// only on class membership, so relabelling classes does not change it.
inline DistanceRatio inter_intra_ratio(const LabeledDataset& ds, std::size_t max_pairs,
                                       std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> members(ds.n_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) members[ds.label(i)].push_back(i);
  std::size_t populated = 0;
  for (const auto& m : members) {
    if (m.empty()) continue;
    ++populated;
    require(m.size() >= 2, ErrorKind::range, "inter_intra_ratio needs >= 2 samples per class");
  }
  require(populated >= 2, ErrorKind::range, "inter_intra_ratio needs >= 2 classes");
  require(max_pairs >= 1, ErrorKind::range, "max_pairs must be positive");

  const std::size_t n = ds.size();
  std::size_t total_intra = 0;
  for (const auto& m : members) total_intra += m.size() * (m.size() - 1) / 2;
  const std::size_t total_inter = n * (n - 1) / 2 - total_intra;

  DistanceRatio r;
  double sum_intra = 0.0, sum_inter = 0.0;
  if (total_intra <= max_pairs && total_inter <= max_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = euclidean(ds.sample(i), ds.sample(j));
        if (ds.label(i) == ds.label(j)) {
          sum_intra += d;
          ++r.intra_pairs;
        } else {
          sum_inter += d;
          ++r.inter_pairs;
        }
      }
  } else {
    Rng rng(seed);
    for (std::size_t p = 0; p < max_pairs; ++p) {
      // intra: uniform sample, then a uniform other member of its class
      const std::size_t i = rng.below(n);
      const auto& same = members[ds.label(i)];
      std::size_t j = same[rng.below(same.size() - 1)];
      if (j == i) j = same.back();
      sum_intra += euclidean(ds.sample(i), ds.sample(j));
      ++r.intra_pairs;
    }
    for (std::size_t p = 0; p < max_pairs; ++p) {
      // inter: uniform sample, then a uniform sample of any other class
      const std::size_t i = rng.below(n);
      const std::size_t others = n - members[ds.label(i)].size();
      std::size_t pick = rng.below(others);
      std::size_t j = 0;
      for (std::size_t c = 0; c < members.size(); ++c) {
        if (c == ds.label(i)) continue;
        if (pick < members[c].size()) {
          j = members[c][pick];
          break;
        }
        pick -= members[c].size();
      }
      sum_inter += euclidean(ds.sample(i), ds.sample(j));
      ++r.inter_pairs;
    }
  }
  r.d_intra = sum_intra / static_cast<double>(r.intra_pairs);
  r.d_inter = sum_inter / static_cast<double>(r.inter_pairs);
  if (r.d_intra == 0.0)
    fail(ErrorKind::degenerate, "intra-class distance is zero (duplicate-only classes)");
  r.ratio = r.d_inter / r.d_intra;
  return r;
}

// ---------------------------------------------------------------------------
// Robustness curves

struct RobustnessCurve {
  std::vector<double> epsilons;
  std::vector<double> accuracy;
  std::vector<double> mean_confidence;
  std::size_t n_samples = 0;
  std::string model_id;
  std::string dataset_id;
  std::string seed;

  std::size_t size() const { return epsilons.size(); }

  void validate() const {
    require(accuracy.size() == epsilons.size() && mean_confidence.size() == epsilons.size(),
            ErrorKind::shape, "robustness curve columns differ in length");
    for (std::size_t i = 0; i < size(); ++i) {
      require(i == 0 || epsilons[i] > epsilons[i - 1], ErrorKind::range,
              "curve epsilons must be strictly ascending");
      require(accuracy[i] >= 0.0 && accuracy[i] <= 1.0, ErrorKind::range,
              "curve accuracy outside [0, 1]");
      require(mean_confidence[i] >= 0.0 && mean_confidence[i] <= 1.0, ErrorKind::range,
              "curve confidence outside [0, 1]");
    }
  }

  // Index of epsilon `eps` (within 1e-12), or size() if absent.
  std::size_t find(double eps) const {
    for (std::size_t i = 0; i < size(); ++i)
      if (std::abs(epsilons[i] - eps) < 1e-12) return i;
    return size();
  }

  std::size_t at_epsilon(double eps) const {
    const std::size_t i = find(eps);
    require(i < size(), ErrorKind::range, "curve has no epsilon " + format_double(eps));
    return i;
  }

  friend bool operator==(const RobustnessCurve&, const RobustnessCurve&) = default;
};

inline constexpr std::string_view kCurveHeader = "epsilon,accuracy,mean_confidence";

// `extra` lines are written as additional `#` comments after the provenance.
inline std::string curve_csv(const RobustnessCurve& c, const std::vector<std::string>& extra = {}) {
  c.validate();
  std::ostringstream os;
  os << "# model_id: " << c.model_id << '\n';
  os << "# dataset_id: " << c.dataset_id << '\n';
  os << "# seed: " << c.seed << '\n';
  os << "# n_samples: " << c.n_samples << '\n';
  os << "# prng: " << kPrngId << '\n';
  for (const auto& line : extra) os << "# " << line << '\n';
  os << kCurveHeader << '\n';
  for (std::size_t i = 0; i < c.size(); ++i)
    os << format_double(c.epsilons[i]) << ',' << format_double(c.accuracy[i]) << ','
       << format_double(c.mean_confidence[i]) << '\n';
  return os.str();
}

inline void write_curve_csv(const RobustnessCurve& c, const std::string& path,
                            const std::vector<std::string>& extra = {}) {
  const std::string text = curve_csv(c, extra);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path + " for writing");
  os << text;
  require(static_cast<bool>(os), ErrorKind::io, "write failed for " + path);
}

inline RobustnessCurve read_curve_csv(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path);
  RobustnessCurve c;
  bool header = false;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string_view body = trim(std::string_view(line).substr(1));
      const auto colon = body.find(':');
      if (colon == std::string_view::npos) continue;
      const auto key = trim(body.substr(0, colon));
      const auto val = std::string(trim(body.substr(colon + 1)));
      if (key == "model_id") c.model_id = val;
      else if (key == "dataset_id") c.dataset_id = val;
      else if (key == "seed") c.seed = val;
      else if (key == "n_samples") c.n_samples = parse_u64(val, "n_samples");
      continue;
    }
    if (!header) {
      require(line == kCurveHeader, ErrorKind::format, "unexpected curve header '" + line + "'");
      header = true;
      continue;
    }
    const auto cols = split(line, ',');
    require(cols.size() == 3, ErrorKind::format, "curve row needs 3 columns: '" + line + "'");
    c.epsilons.push_back(parse_double(cols[0], "epsilon"));
    c.accuracy.push_back(parse_double(cols[1], "accuracy"));
    c.mean_confidence.push_back(parse_double(cols[2], "mean_confidence"));
  }
  require(header, ErrorKind::format, "no curve header in " + path);
  c.validate();
  return c;
}

// Point-wise mean over curves sharing the same epsilon grid.
inline RobustnessCurve average_curves(const std::vector<RobustnessCurve>& curves,
                                      std::string model_id) {
  require(!curves.empty(), ErrorKind::range, "no curves to average");
  RobustnessCurve out = curves.front();
  out.model_id = std::move(model_id);
  std::string seeds;
  for (std::size_t k = 1; k < curves.size(); ++k) {
    require(curves[k].epsilons == out.epsilons, ErrorKind::shape,
            "cannot average curves on different epsilon grids");
    for (std::size_t i = 0; i < out.size(); ++i) {
      out.accuracy[i] += curves[k].accuracy[i];
      out.mean_confidence[i] += curves[k].mean_confidence[i];
    }
  }
  for (std::size_t k = 0; k < curves.size(); ++k) seeds += (k ? "+" : "") + curves[k].seed;
  const double n = static_cast<double>(curves.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.accuracy[i] /= n;
    out.mean_confidence[i] /= n;
  }
  out.seed = seeds;
  return out;
}

// Static SVG with accuracy (solid) and confidence (dashed) for each curve.
inline std::string curves_svg(const std::vector<RobustnessCurve>& curves,
                              const std::vector<std::string>& labels, const std::string& title) {
  static constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                            "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
                                            "#bcbd22", "#17becf"};
  const double w = 640, h = 400, left = 60, right = 170, top = 40, bottom = 50;
  double eps_max = 0.0;
  for (const auto& c : curves)
    if (c.size()) eps_max = std::max(eps_max, c.epsilons.back());
  if (eps_max <= 0.0) eps_max = 1.0;
  auto px = [&](double e) { return left + (w - left - right) * e / eps_max; };
  auto py = [&](double v) { return top + (h - top - bottom) * (1.0 - v); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">" << title << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << px(eps_max) << "\" y2=\""
     << py(0) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left << "\" y2=\"" << py(1)
     << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    os << "<text x=\"" << left - 35 << "\" y=\"" << py(v) + 4 << "\">" << v << "</text>\n";
    const double e = eps_max * t / 4.0;
    os << "<text x=\"" << px(e) - 10 << "\" y=\"" << py(0) + 18 << "\">" << format_double(e)
       << "</text>\n";
  }
  os << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 10 << "\">epsilon</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* color = kColors[k % std::size(kColors)];
    for (int series = 0; series < 2; ++series) {
      const auto& ys = series == 0 ? curves[k].accuracy : curves[k].mean_confidence;
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
         << (series ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
      for (std::size_t i = 0; i < curves[k].size(); ++i)
        os << px(curves[k].epsilons[i]) << ',' << py(ys[i]) << ' ';
      os << "\"/>\n";
    }
    const double ly = top + 18.0 * static_cast<double>(k);
    os << "<line x1=\"" << w - right + 10 << "\" y1=\"" << ly << "\" x2=\"" << w - right + 30
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << w - right + 35 << "\" y=\"" << ly + 4 << "\">"
       << (k < labels.size() ? labels[k] : curves[k].model_id) << "</text>\n";
  }
  os << "<text x=\"" << w - right + 10 << "\" y=\"" << h - bottom
     << "\">solid: accuracy, dashed: confidence</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace advlab

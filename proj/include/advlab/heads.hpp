#pragma once

// Classification heads and their losses.
//
// Two families share one interface:
//   * fully-connected heads: a dense layer producing logits, followed by
//     softmax + cross-entropy or per-class sigmoid + binary cross-entropy;
//   * pattern heads (PNN, DE): Gaussian-form potentials between the feature
//     vector and m stored patterns per class, combined per class by
//
//         P_i = S_i / (S_i + m - max_k K_ik),   S_i = sum_k K_ik.
//
// Pattern-head potentials are written K = exp(-z):
//   PNN: z = ||f - x||_2 / (4 sigma^2)            (unsquared norm, fixed sigma)
//   DE:  z = sum_a (f_a - x_a)^2 / (4 sigma_a^2)  (sigma = exp(log_sigma), trainable)
// The BCE loss of a pattern head is evaluated from z in log space, so it keeps
// its gradient when every potential underflows.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "advlab/layers.hpp"
#include "advlab/numerics.hpp"

namespace advlab {

enum class HeadKind { fc_softmax_ce, fc_sigmoid_bce, pnn, de };

inline std::string_view to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::fc_softmax_ce: return "fc_softmax_ce";
    case HeadKind::fc_sigmoid_bce: return "fc_sigmoid_bce";
    case HeadKind::pnn: return "pnn";
    case HeadKind::de: return "de";
  }
  return "?";
}

inline HeadKind parse_head_kind(std::string_view s) {
  if (s == "fc_softmax_ce" || s == "fc" || s == "softmax") return HeadKind::fc_softmax_ce;
  if (s == "fc_sigmoid_bce" || s == "sigmoid") return HeadKind::fc_sigmoid_bce;
  if (s == "pnn") return HeadKind::pnn;
  if (s == "de") return HeadKind::de;
  fail(ErrorKind::config, "unknown head kind '" + std::string(s) + "'");
}

// Form of the DE difference term. `squared` is the Gaussian form used for
// training; `verbatim` keeps the signed, unsquared difference for comparison
// and can produce potentials above 1.
enum class DeForm { squared, verbatim };

enum class Reduction { mean, sum };

// Probability clamp used by the BCE of pattern heads.
inline constexpr double kProbClamp = 1e-7;

struct LossResult {
  double loss = 0.0;
  Tensor probs;
  Tensor grad_logits;
};

inline void check_label(std::size_t label, std::size_t n) {
  require(label < n, ErrorKind::range,
          "label " + std::to_string(label) + " out of range for " + std::to_string(n) +
              " classes");
}

inline double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

inline LossResult softmax_ce_loss(std::span<const double> logits, std::size_t label) {
  const std::size_t n = logits.size();
  require(n >= 2, ErrorKind::shape, "softmax_ce_loss needs at least 2 logits");
  check_label(label, n);
  const double lse = log_sum_exp(logits);
  LossResult r{lse - logits[label], Tensor({n}), Tensor({n})};
  for (std::size_t i = 0; i < n; ++i) {
    r.probs[i] = std::exp(logits[i] - lse);
    r.grad_logits[i] = r.probs[i] - (i == label ? 1.0 : 0.0);
  }
  return r;
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// log(1 + e^x) without overflow
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Mean of n binary cross-entropies against the one-hot target, in logit space.
inline LossResult sigmoid_bce_loss(std::span<const double> logits, std::size_t label) {
  const std::size_t n = logits.size();
  require(n >= 2, ErrorKind::shape, "sigmoid_bce_loss needs at least 2 logits");
  check_label(label, n);
  LossResult r{0.0, Tensor({n}), Tensor({n})};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = i == label ? 1.0 : 0.0;
    r.loss += softplus(logits[i]) - y * logits[i];
    r.probs[i] = sigmoid(logits[i]);
    r.grad_logits[i] = (r.probs[i] - y) * inv_n;
  }
  r.loss *= inv_n;
  return r;
}

// ---------------------------------------------------------------------------
// Pattern-head potentials (single feature vector, single pattern).

inline double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline double pnn_exponent(std::span<const double> feat, std::span<const double> pattern,
                           double sigma) {
  require(feat.size() == pattern.size(), ErrorKind::shape, "pnn potential dimension mismatch");
  require(sigma > 0.0, ErrorKind::range, "pnn sigma must be positive");
  return euclidean(feat, pattern) / (4.0 * sigma * sigma);
}

inline double pnn_potential(std::span<const double> feat, std::span<const double> pattern,
                            double sigma) {
  return std::exp(-pnn_exponent(feat, pattern, sigma));
}

// d/dfeat of the PNN potential; zero at feat == pattern, where the norm has
// no derivative.
inline Tensor pnn_potential_grad(std::span<const double> feat, std::span<const double> pattern,
                                 double sigma) {
  const double dist = euclidean(feat, pattern);
  const double k = pnn_potential(feat, pattern, sigma);
  Tensor g({feat.size()});
  if (dist == 0.0) return g;
  const double scale = -k / (dist * 4.0 * sigma * sigma);
  for (std::size_t a = 0; a < feat.size(); ++a) g[a] = scale * (feat[a] - pattern[a]);
  return g;
}

inline double de_exponent(std::span<const double> feat, std::span<const double> pattern,
                          std::span<const double> sigma, DeForm form = DeForm::squared) {
  require(feat.size() == pattern.size() && feat.size() == sigma.size(), ErrorKind::shape,
          "de potential dimension mismatch");
  double z = 0.0;
  for (std::size_t a = 0; a < feat.size(); ++a) {
    require(sigma[a] > 0.0, ErrorKind::range, "de sigma components must be positive");
    const double d = feat[a] - pattern[a];
    z += (form == DeForm::squared ? d * d : d) / (4.0 * sigma[a] * sigma[a]);
  }
  return z;
}

inline double de_potential(std::span<const double> feat, std::span<const double> pattern,
                           std::span<const double> sigma, DeForm form = DeForm::squared) {
  return std::exp(-de_exponent(feat, pattern, sigma, form));
}

struct DeGrad {
  Tensor feat, pattern, sigma;
};

// Gradients of the (squared-form) DE potential.
inline DeGrad de_potential_grad(std::span<const double> feat, std::span<const double> pattern,
                                std::span<const double> sigma) {
  const double k = de_potential(feat, pattern, sigma);
  const std::size_t b = feat.size();
  DeGrad g{Tensor({b}), Tensor({b}), Tensor({b})};
  for (std::size_t a = 0; a < b; ++a) {
    const double d = feat[a] - pattern[a];
    const double s2 = sigma[a] * sigma[a];
    g.feat[a] = -k * d / (2.0 * s2);
    g.pattern[a] = k * d / (2.0 * s2);
    g.sigma[a] = k * d * d / (2.0 * s2 * sigma[a]);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Per-class summation.

inline double head_probability(std::span<const double> potentials) {
  require(!potentials.empty(), ErrorKind::range, "head_probability needs at least one potential");
  const std::size_t top = argmax(potentials);
  double rest = 0.0;
  for (std::size_t k = 0; k < potentials.size(); ++k)
    if (k != top) rest += potentials[k];
  const double m = static_cast<double>(potentials.size());
  return (potentials[top] + rest) / (rest + m);
}

// dP/dK with the max routed to the lowest-index maximiser.
inline Tensor head_probability_grad(std::span<const double> potentials) {
  require(!potentials.empty(), ErrorKind::range, "head_probability needs at least one potential");
  const std::size_t top = argmax(potentials);
  double rest = 0.0;
  for (std::size_t k = 0; k < potentials.size(); ++k)
    if (k != top) rest += potentials[k];
  const double m = static_cast<double>(potentials.size());
  const double denom = rest + m;
  Tensor g({potentials.size()});
  for (std::size_t k = 0; k < potentials.size(); ++k)
    g[k] = k == top ? 1.0 / denom : (m - potentials[top]) / (denom * denom);
  return g;
}

namespace detail {

// Summation and BCE term of one class given its potential exponents z_k.
struct ClassTerm {
  double prob = 0.0;
  double loss = 0.0;
};

inline ClassTerm class_term(std::span<const double> z, bool positive, std::span<double> grad_z,
                            double weight) {
  const std::size_t m = z.size();
  std::size_t top = 0;
  for (std::size_t k = 1; k < m; ++k)
    if (z[k] < z[top]) top = k;
  const double top_k = std::exp(-z[top]);
  double rest = 0.0, scaled = 1.0;  // scaled = S * exp(z_top)
  for (std::size_t k = 0; k < m; ++k) {
    if (k == top) continue;
    rest += std::exp(-z[k]);
    scaled += std::exp(z[top] - z[k]);
  }
  const double md = static_cast<double>(m);
  const double denom = rest + md;
  // m - max K, accurate when the top potential is close to 1
  const double slack = (md - 1.0) - std::expm1(-z[top]);
  ClassTerm t;
  t.prob = (top_k + rest) / denom;

  if (positive) {
    const double log_s = -z[top] + std::log(scaled);
    const double log_p = log_s - std::log(denom);
    if (t.prob > 1.0 - kProbClamp) {
      t.loss = -std::log1p(-kProbClamp);
      return t;
    }
    t.loss = -log_p;
    if (!grad_z.empty()) {
      for (std::size_t k = 0; k < m; ++k) {
        const double share = std::exp(-z[k] - log_s);  // K_k / S
        grad_z[k] += weight * (k == top ? share : share * slack / denom);
      }
    }
  } else {
    const double one_minus = slack / denom;
    if (one_minus < kProbClamp) {
      t.loss = -std::log(kProbClamp);
      return t;
    }
    t.loss = std::log(denom) - std::log(slack);
    if (!grad_z.empty()) {
      for (std::size_t k = 0; k < m; ++k) {
        const double kk = std::exp(-z[k]);
        grad_z[k] += weight * (k == top ? -kk / slack : -kk / denom);
      }
    }
  }
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Batched head.

class Head {
 public:
  // Fully-connected head.
  Head(HeadKind kind, std::size_t feat_dim, std::size_t n_classes)
      : kind_(kind), feat_dim_(feat_dim), n_classes_(n_classes), fc_(feat_dim, n_classes) {
    require(kind == HeadKind::fc_softmax_ce || kind == HeadKind::fc_sigmoid_bce, ErrorKind::config,
            "pattern heads need a pattern count");
    require(n_classes >= 2, ErrorKind::config, "a head needs at least 2 classes");
  }

  // Pattern head (PNN or DE) with m patterns per class.
  Head(HeadKind kind, std::size_t feat_dim, std::size_t n_classes, std::size_t m, double sigma,
       DeForm form = DeForm::squared)
      : kind_(kind),
        feat_dim_(feat_dim),
        n_classes_(n_classes),
        m_(m),
        sigma_(sigma),
        de_form_(form),
        fc_(1, 1),
        patterns_({n_classes, m, feat_dim}),
        grad_patterns_({n_classes, m, feat_dim}),
        log_sigma_({feat_dim}),
        grad_log_sigma_({feat_dim}) {
    require(kind == HeadKind::pnn || kind == HeadKind::de, ErrorKind::config,
            "fully-connected heads take no pattern count");
    require(n_classes >= 2, ErrorKind::config, "a head needs at least 2 classes");
    require(m >= 1, ErrorKind::config, "pattern heads need m >= 1");
    require(sigma > 0.0, ErrorKind::config, "pnn sigma must be positive");
  }

  HeadKind kind() const { return kind_; }
  bool is_pattern_head() const { return kind_ == HeadKind::pnn || kind_ == HeadKind::de; }
  std::size_t feat_dim() const { return feat_dim_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t patterns_per_class() const { return m_; }
  double sigma() const { return sigma_; }

  Dense& fc() { return fc_; }
  Tensor& patterns() { return patterns_; }
  const Tensor& patterns() const { return patterns_; }
  Tensor& log_sigma() { return log_sigma_; }
  const Tensor& log_sigma() const { return log_sigma_; }

  // Probabilities [batch, n_classes].
  Tensor forward(const Tensor& feats) {
    require(feats.rank() >= 1 && feats.row_size() == feat_dim_, ErrorKind::shape,
            "head expects " + std::to_string(feat_dim_) + " features per sample, got " +
                to_string(feats.shape()));
    const std::size_t batch = feats.dim(0);
    has_input_ = true;
    if (!is_pattern_head()) {
      logits_ = fc_.forward(feats);
      Tensor probs({batch, n_classes_});
      for (std::size_t b = 0; b < batch; ++b) {
        auto l = logits_.row(b);
        auto p = probs.row(b);
        if (kind_ == HeadKind::fc_softmax_ce) {
          const double lse = log_sum_exp(l);
          for (std::size_t i = 0; i < n_classes_; ++i) p[i] = std::exp(l[i] - lse);
        } else {
          for (std::size_t i = 0; i < n_classes_; ++i) p[i] = sigmoid(l[i]);
        }
      }
      return probs;
    }

    feats_ = feats.reshaped({batch, feat_dim_});
    exponents_ = Tensor({batch, n_classes_, m_});
    std::vector<double> inv(feat_dim_);  // 1 / (4 sigma_a^2)
    for (std::size_t a = 0; a < feat_dim_; ++a) inv[a] = 0.25 * std::exp(-2.0 * log_sigma_[a]);
    for (std::size_t b = 0; b < batch; ++b) {
      const double* f = feats_.row(b).data();
      for (std::size_t i = 0; i < n_classes_; ++i)
        for (std::size_t k = 0; k < m_; ++k) {
          const double* x = pattern(i, k).data();
          double z = 0.0;
          if (kind_ == HeadKind::pnn) {
            for (std::size_t a = 0; a < feat_dim_; ++a) z += (f[a] - x[a]) * (f[a] - x[a]);
            z = std::sqrt(z) / (4.0 * sigma_ * sigma_);
          } else if (de_form_ == DeForm::squared) {
            for (std::size_t a = 0; a < feat_dim_; ++a) z += (f[a] - x[a]) * (f[a] - x[a]) * inv[a];
          } else {
            for (std::size_t a = 0; a < feat_dim_; ++a) z += (f[a] - x[a]) * inv[a];
          }
          exponents_[(b * n_classes_ + i) * m_ + k] = z;
        }
    }
    Tensor probs({batch, n_classes_});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n_classes_; ++i)
        probs.at(b, i) = detail::class_term(class_exponents(b, i), false, {}, 0.0).prob;
    return probs;
  }

  // Training loss of the last forward batch; fills parameter gradients and
  // returns d loss / d features.
  std::pair<double, Tensor> backward(std::span<const std::size_t> labels,
                                     Reduction reduction = Reduction::mean) {
    require(has_input_, ErrorKind::state, "head backward called before forward");
    const std::size_t batch = is_pattern_head() ? feats_.dim(0) : logits_.dim(0);
    require(labels.size() == batch, ErrorKind::shape,
            "got " + std::to_string(labels.size()) + " labels for a batch of " +
                std::to_string(batch));
    const double scale = reduction == Reduction::mean ? 1.0 / static_cast<double>(batch) : 1.0;
    if (!is_pattern_head()) return fc_backward(labels, scale);
    return pattern_backward(labels, scale);
  }

  // Loss only, no gradients.
  double loss(std::span<const std::size_t> labels, Reduction reduction = Reduction::mean) const {
    require(has_input_, ErrorKind::state, "head loss called before forward");
    const std::size_t batch = is_pattern_head() ? feats_.dim(0) : logits_.dim(0);
    require(labels.size() == batch, ErrorKind::shape, "label count does not match batch");
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      check_label(labels[b], n_classes_);
      if (kind_ == HeadKind::fc_softmax_ce) {
        total += softmax_ce_loss(logits_.row(b), labels[b]).loss;
      } else if (kind_ == HeadKind::fc_sigmoid_bce) {
        total += sigmoid_bce_loss(logits_.row(b), labels[b]).loss;
      } else {
        double s = 0.0;
        for (std::size_t i = 0; i < n_classes_; ++i)
          s += detail::class_term(class_exponents(b, i), i == labels[b], {}, 0.0).loss;
        total += s / static_cast<double>(n_classes_);
      }
    }
    return reduction == Reduction::mean ? total / static_cast<double>(batch) : total;
  }

  std::vector<ParamRef> params() {
    switch (kind_) {
      case HeadKind::fc_softmax_ce:
      case HeadKind::fc_sigmoid_bce: {
        auto p = fc_.params();
        for (auto& r : p) r.name = "head." + r.name;
        return p;
      }
      case HeadKind::pnn:
        return {{"head.patterns", &patterns_, &grad_patterns_, false, false}};
      case HeadKind::de:
        return {{"head.patterns", &patterns_, &grad_patterns_, true, false},
                {"head.log_sigma", &log_sigma_, &grad_log_sigma_, true, false}};
    }
    return {};
  }

  Tensor sigma_vector() const {
    Tensor s({feat_dim_});
    for (std::size_t a = 0; a < feat_dim_; ++a) s[a] = std::exp(log_sigma_[a]);
    return s;
  }

 private:
  std::span<const double> pattern(std::size_t cls, std::size_t k) const {
    return {patterns_.ptr() + (cls * m_ + k) * feat_dim_, feat_dim_};
  }
  std::span<const double> class_exponents(std::size_t b, std::size_t cls) const {
    return {exponents_.ptr() + (b * n_classes_ + cls) * m_, m_};
  }

  std::pair<double, Tensor> fc_backward(std::span<const std::size_t> labels, double scale) {
    const std::size_t batch = logits_.dim(0);
    Tensor grad_logits({batch, n_classes_});
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const LossResult r = kind_ == HeadKind::fc_softmax_ce
                               ? softmax_ce_loss(logits_.row(b), labels[b])
                               : sigmoid_bce_loss(logits_.row(b), labels[b]);
      total += r.loss;
      for (std::size_t i = 0; i < n_classes_; ++i) grad_logits.at(b, i) = r.grad_logits[i] * scale;
    }
    return {total * scale, fc_.backward(grad_logits)};
  }

  std::pair<double, Tensor> pattern_backward(std::span<const std::size_t> labels, double scale) {
    const std::size_t batch = feats_.dim(0);
    const double weight = scale / static_cast<double>(n_classes_);
    Tensor grad_z({batch, n_classes_, m_});
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      check_label(labels[b], n_classes_);
      for (std::size_t i = 0; i < n_classes_; ++i) {
        std::span<double> gz{grad_z.ptr() + (b * n_classes_ + i) * m_, m_};
        total += detail::class_term(class_exponents(b, i), i == labels[b], gz, weight).loss;
      }
    }

    Tensor grad_feats({batch, feat_dim_});
    grad_patterns_.fill(0.0);
    grad_log_sigma_.fill(0.0);
    std::vector<double> inv(feat_dim_);  // 1 / (2 sigma_a^2)
    for (std::size_t a = 0; a < feat_dim_; ++a) inv[a] = 0.5 * std::exp(-2.0 * log_sigma_[a]);
    double* gs = grad_log_sigma_.ptr();
    for (std::size_t b = 0; b < batch; ++b) {
      auto f = feats_.row(b);
      auto gf = grad_feats.row(b);
      for (std::size_t i = 0; i < n_classes_; ++i) {
        for (std::size_t k = 0; k < m_; ++k) {
          const double g = grad_z[(b * n_classes_ + i) * m_ + k];
          if (g == 0.0) continue;
          auto x = pattern(i, k);
          double* gp = grad_patterns_.ptr() + (i * m_ + k) * feat_dim_;
          if (kind_ == HeadKind::pnn) {
            const double dist = euclidean(f, x);
            if (dist == 0.0) continue;
            const double c = g / (dist * 4.0 * sigma_ * sigma_);
            for (std::size_t a = 0; a < feat_dim_; ++a) {
              gf[a] += c * (f[a] - x[a]);
              gp[a] -= c * (f[a] - x[a]);
            }
          } else if (de_form_ == DeForm::squared) {
            for (std::size_t a = 0; a < feat_dim_; ++a) {
              const double d = f[a] - x[a];
              const double t = g * d * inv[a];
              gf[a] += t;
              gp[a] -= t;
              gs[a] -= t * d;
            }
          } else {
            for (std::size_t a = 0; a < feat_dim_; ++a) {
              const double d = f[a] - x[a];
              gf[a] += 0.5 * g * inv[a];
              gp[a] -= 0.5 * g * inv[a];
              gs[a] -= g * d * inv[a];
            }
          }
        }
      }
    }
    if (kind_ == HeadKind::pnn) grad_patterns_.fill(0.0);  // frozen
    return {total * scale / static_cast<double>(n_classes_), std::move(grad_feats)};
  }

  HeadKind kind_;
  std::size_t feat_dim_;
  std::size_t n_classes_;
  std::size_t m_ = 0;
  double sigma_ = 1.0;
  DeForm de_form_ = DeForm::squared;
  Dense fc_;
  Tensor patterns_, grad_patterns_;
  Tensor log_sigma_, grad_log_sigma_;

  bool has_input_ = false;
  Tensor logits_;
  Tensor feats_;
  Tensor exponents_;
};

}  // namespace advlab

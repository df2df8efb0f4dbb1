#pragma once

// Labelled image datasets: MNIST IDX parsing, synthetic band classes,
// category subsets and sample removal.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "advlab/container.hpp"
#include "advlab/numerics.hpp"
#include "advlab/text.hpp"

namespace advlab {

// Images [N, H, W, C] with values in [0, 1] and labels in [0, n_classes).
class LabeledDataset {
 public:
  LabeledDataset() = default;

  LabeledDataset(Tensor images, std::vector<std::size_t> labels, std::size_t n_classes,
                 std::string name)
      : images_(std::move(images)),
        labels_(std::move(labels)),
        n_classes_(n_classes),
        name_(std::move(name)) {
    require(images_.rank() == 4, ErrorKind::shape,
            "dataset images must be [N,H,W,C], got " + to_string(images_.shape()));
    require(images_.dim(0) == labels_.size(), ErrorKind::shape,
            std::to_string(images_.dim(0)) + " images but " + std::to_string(labels_.size()) +
                " labels");
    require(n_classes_ >= 1, ErrorKind::range, "dataset needs at least one class");
    for (std::size_t l : labels_)
      require(l < n_classes_, ErrorKind::range,
              "label " + std::to_string(l) + " outside [0, " + std::to_string(n_classes_) + ")");
    for (double v : images_.data())
      require(v >= 0.0 && v <= 1.0, ErrorKind::range, "image value outside [0, 1]");
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t n_classes() const { return n_classes_; }
  const std::string& name() const { return name_; }
  std::size_t height() const { return images_.dim(1); }
  std::size_t width() const { return images_.dim(2); }
  std::size_t channels() const { return images_.dim(3); }
  std::size_t sample_size() const { return images_.row_size(); }

  const Tensor& images() const { return images_; }
  const std::vector<std::size_t>& labels() const { return labels_; }
  std::span<const double> sample(std::size_t i) const { return images_.row(i); }
  std::size_t label(std::size_t i) const { return labels_[i]; }

  Tensor gather(std::span<const std::size_t> idx) const {
    require(!idx.empty(), ErrorKind::range, "cannot gather an empty batch");
    Tensor out({idx.size(), height(), width(), channels()});
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto src = sample(idx[b]);
      std::copy(src.begin(), src.end(), out.row(b).begin());
    }
    return out;
  }

  std::vector<std::size_t> gather_labels(std::span<const std::size_t> idx) const {
    std::vector<std::size_t> out(idx.size());
    for (std::size_t b = 0; b < idx.size(); ++b) out[b] = labels_[idx[b]];
    return out;
  }

  // Samples at `idx`, in that order; labels and class count unchanged.
  LabeledDataset select(std::span<const std::size_t> idx, std::string name) const {
    if (idx.empty()) fail(ErrorKind::degenerate, "selection leaves an empty dataset");
    for (std::size_t i : idx)
      require(i < size(), ErrorKind::range, "sample index " + std::to_string(i) + " out of range");
    return LabeledDataset(gather(idx), gather_labels(idx), n_classes_, std::move(name));
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(n_classes_, 0);
    for (std::size_t l : labels_) ++counts[l];
    return counts;
  }

  void save(const std::string& path, const std::string& spec, std::uint64_t seed) const {
    Container c;
    c.magic = kDatasetMagic;
    c.prng_id = std::string(kPrngId);
    c.spec = "name=" + name_ + ";classes=" + std::to_string(n_classes_) + ";seed=" +
             std::to_string(seed) + (spec.empty() ? "" : ";" + spec);
    c.blocks.push_back(images_);
    Tensor labels({std::max<std::size_t>(labels_.size(), 1)});
    for (std::size_t i = 0; i < labels_.size(); ++i) labels[i] = static_cast<double>(labels_[i]);
    c.blocks.push_back(std::move(labels));
    write_container(path, c);
  }

  static LabeledDataset load(const std::string& path) {
    Container c = read_container(path, kDatasetMagic);
    require(c.blocks.size() == 2, ErrorKind::format, "dataset container needs 2 blocks");
    std::string name = "dataset";
    std::size_t classes = 0;
    for (auto item : split(c.spec, ';')) {
      if (item.starts_with("name=")) name = std::string(item.substr(5));
      if (item.starts_with("classes=")) classes = parse_u64(item.substr(8), "classes");
    }
    std::vector<std::size_t> labels(c.blocks[1].size());
    for (std::size_t i = 0; i < labels.size(); ++i)
      labels[i] = static_cast<std::size_t>(c.blocks[1][i]);
    return LabeledDataset(std::move(c.blocks[0]), std::move(labels), classes, name);
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;

 private:
  Tensor images_;
  std::vector<std::size_t> labels_;
  std::size_t n_classes_ = 0;
  std::string name_;
};

// ---------------------------------------------------------------------------
// MNIST IDX

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t at,
                          const std::string& path) {
  require(b.size() >= at + 4, ErrorKind::format, "truncated IDX header in " + path);
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

inline std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

inline LabeledDataset load_mnist(const std::string& images_path, const std::string& labels_path,
                                 std::string name = "mnist") {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  const std::uint32_t img_magic = detail::be32(img, 0, images_path);
  require(img_magic == kIdxImageMagic, ErrorKind::format,
          "bad IDX image magic " + detail::hex32(img_magic) + " in " + images_path);
  const std::uint32_t lab_magic = detail::be32(lab, 0, labels_path);
  require(lab_magic == kIdxLabelMagic, ErrorKind::format,
          "bad IDX label magic " + detail::hex32(lab_magic) + " in " + labels_path);

  const std::size_t n = detail::be32(img, 4, images_path);
  const std::size_t rows = detail::be32(img, 8, images_path);
  const std::size_t cols = detail::be32(img, 12, images_path);
  const std::size_t n_labels = detail::be32(lab, 4, labels_path);
  require(n == n_labels, ErrorKind::format,
          "IDX count mismatch: " + std::to_string(n) + " images vs " + std::to_string(n_labels) +
              " labels");
  require(n > 0 && rows > 0 && cols > 0, ErrorKind::format, "empty IDX file " + images_path);
  require(img.size() >= 16 + n * rows * cols, ErrorKind::format,
          "truncated IDX image data in " + images_path);
  require(lab.size() >= 8 + n, ErrorKind::format, "truncated IDX label data in " + labels_path);

  Tensor images({n, rows, cols, 1});
  for (std::size_t i = 0; i < images.size(); ++i) images[i] = img[16 + i] / 255.0;
  std::vector<std::size_t> labels(n);
  std::size_t classes = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = lab[8 + i];
    classes = std::max(classes, labels[i] + 1);
  }
  return LabeledDataset(std::move(images), std::move(labels), std::max<std::size_t>(classes, 10),
                        std::move(name));
}

struct MnistSplits {
  LabeledDataset train, test;
};

inline MnistSplits load_mnist_dir(const std::string& dir) {
  return {load_mnist(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte", "mnist-train"),
          load_mnist(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte", "mnist-test")};
}

// ---------------------------------------------------------------------------
// Band classes

struct BandSpec {
  std::size_t n_classes = 11;
  std::size_t band_width = 24;
  std::size_t overlap = 0;  // raw pixel values added on each side of a band
  std::size_t height = 28, width = 28, channels = 1;
  std::size_t per_class_train = 1000;
  std::size_t per_class_test = 50;
  std::uint64_t seed = 1;

  // Raw-value range [lo, hi) of class `cls`, after widening and clipping.
  std::pair<std::int64_t, std::int64_t> range(std::size_t cls) const {
    const auto w = static_cast<std::int64_t>(band_width);
    const auto o = static_cast<std::int64_t>(overlap);
    const auto c = static_cast<std::int64_t>(cls);
    return {std::max<std::int64_t>(0, c * w - o), std::min<std::int64_t>(256, (c + 1) * w + o)};
  }

  std::string to_string() const {
    return "bands=" + std::to_string(n_classes) + ";band_width=" + std::to_string(band_width) +
           ";overlap=" + std::to_string(overlap) + ";input=" + std::to_string(height) + "x" +
           std::to_string(width) + "x" + std::to_string(channels) + ";train=" +
           std::to_string(per_class_train) + ";test=" + std::to_string(per_class_test) +
           ";seed=" + std::to_string(seed);
  }
};

struct BandSplits {
  LabeledDataset train, test;
};

namespace detail {

inline LabeledDataset band_split(const BandSpec& spec, std::size_t per_class, Rng rng,
                                 const std::string& name) {
  require(per_class >= 1, ErrorKind::config, "band split needs at least one sample per class");
  const std::size_t n = per_class * spec.n_classes;
  const std::size_t d = spec.height * spec.width * spec.channels;
  Tensor images({n, spec.height, spec.width, spec.channels});
  std::vector<std::size_t> labels(n);
  // Classes interleave: sample s belongs to class s % n_classes.
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t cls = s % spec.n_classes;
    const auto [lo, hi] = spec.range(cls);
    const auto raw = rand_uniform_ints(rng, lo, hi, d);
    auto row = images.row(s);
    for (std::size_t a = 0; a < d; ++a) row[a] = static_cast<double>(raw[a]) / 255.0;
    labels[s] = cls;
  }
  return LabeledDataset(std::move(images), std::move(labels), spec.n_classes, name);
}

}  // namespace detail

inline BandSplits gen_band_classes(const BandSpec& spec) {
  require(spec.n_classes >= 2, ErrorKind::config, "band classes need at least 2 classes");
  require(spec.band_width >= 1, ErrorKind::config, "band width must be at least 1");
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    const auto [lo, hi] = spec.range(c);
    if (lo >= hi)
      fail(ErrorKind::degenerate,
           "band class " + std::to_string(c) + " is empty after clipping to [0, 255]");
  }
  const Rng root(spec.seed);
  const std::string tag = "bands-ov" + std::to_string(spec.overlap);
  return {detail::band_split(spec, spec.per_class_train, root.child("band-train"), tag + "-train"),
          detail::band_split(spec, spec.per_class_test, root.child("band-test"), tag + "-test")};
}

// ---------------------------------------------------------------------------
// Subsets

// Keeps samples whose label is in `keep` and relabels keep[j] -> j.
inline LabeledDataset subset_by_labels(const LabeledDataset& ds, std::span<const std::size_t> keep) {
  require(!keep.empty(), ErrorKind::range, "subset_by_labels needs at least one label");
  std::vector<std::ptrdiff_t> remap(ds.n_classes(), -1);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    require(keep[j] < ds.n_classes(), ErrorKind::range,
            "unknown label " + std::to_string(keep[j]) + " for a dataset with " +
                std::to_string(ds.n_classes()) + " classes");
    require(remap[keep[j]] < 0, ErrorKind::range, "duplicate label " + std::to_string(keep[j]));
    remap[keep[j]] = static_cast<std::ptrdiff_t>(j);
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (remap[ds.label(i)] >= 0) idx.push_back(i);
  if (idx.empty()) fail(ErrorKind::degenerate, "subset_by_labels selected no samples");
  std::vector<std::size_t> labels(idx.size());
  for (std::size_t b = 0; b < idx.size(); ++b)
    labels[b] = static_cast<std::size_t>(remap[ds.label(idx[b])]);
  std::string name = ds.name() + "-labels";
  for (std::size_t k : keep) name += "_" + std::to_string(k);
  return LabeledDataset(ds.gather(idx), std::move(labels), keep.size(), std::move(name));
}

// floor(total / n_classes) samples per class, drawn without replacement.
// With `exact_total` the first total % n_classes classes take one extra
// sample so the result has exactly `total` samples.
// Output keeps the original sample order.
inline LabeledDataset balanced_subsample(const LabeledDataset& ds, std::size_t total,
                                         std::uint64_t seed, bool exact_total = false) {
  const std::size_t base = total / ds.n_classes();
  require(base >= 1, ErrorKind::range, "total too small for a per-class quota");
  std::vector<std::vector<std::size_t>> by_class(ds.n_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.label(i)].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < ds.n_classes(); ++c) {
    const std::size_t quota = base + (exact_total && c < total % ds.n_classes() ? 1 : 0);
    require(by_class[c].size() >= quota, ErrorKind::range,
            "class " + std::to_string(c) + " has " + std::to_string(by_class[c].size()) +
                " samples, quota is " + std::to_string(quota));
    const auto perm = permutation(rng, by_class[c].size());
    for (std::size_t j = 0; j < quota; ++j) keep.push_back(by_class[c][perm[j]]);
  }
  std::sort(keep.begin(), keep.end());
  return ds.select(keep, ds.name() + "-balanced" + std::to_string(total));
}

inline LabeledDataset remove_indices(const LabeledDataset& ds, const std::set<std::size_t>& drop) {
  for (std::size_t i : drop)
    require(i < ds.size(), ErrorKind::range,
            "index " + std::to_string(i) + " out of range for " + std::to_string(ds.size()) +
                " samples");
  if (drop.empty()) return ds;
  std::vector<std::size_t> keep;
  keep.reserve(ds.size() - drop.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!drop.contains(i)) keep.push_back(i);
  return ds.select(keep, ds.name() + "-minus" + std::to_string(drop.size()));
}

inline std::set<std::size_t> random_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  require(k <= n, ErrorKind::range,
          "cannot pick " + std::to_string(k) + " of " + std::to_string(n) + " samples");
  Rng rng(seed);
  const auto perm = permutation(rng, n);
  return {perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k)};
}

inline LabeledDataset remove_random(const LabeledDataset& ds, std::size_t k, std::uint64_t seed) {
  return remove_indices(ds, random_indices(ds.size(), k, seed));
}

// First `n` samples (or all of them).
inline LabeledDataset head_subset(const LabeledDataset& ds, std::size_t n) {
  if (n == 0 || n >= ds.size()) return ds;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return ds.select(idx, ds.name() + "-first" + std::to_string(n));
}

}  // namespace advlab

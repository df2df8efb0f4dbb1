#pragma once

// Feature extractor + head, network specifications and checkpoints.

#include <charconv>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "advlab/container.hpp"
#include "advlab/heads.hpp"
#include "advlab/layers.hpp"
#include "advlab/text.hpp"

namespace advlab {

enum class ExtractorKind { mlp, cnn };

struct NetworkSpec {
  ExtractorKind extractor = ExtractorKind::mlp;
  std::size_t height = 28, width = 28, channels = 1;
  std::vector<std::size_t> conv_channels{32, 64};  // cnn extractor only
  std::vector<std::size_t> hidden{200, 200};       // dense relu trunk
  HeadKind head = HeadKind::fc_softmax_ce;
  std::size_t n_classes = 10;
  std::size_t patterns = 4;  // m, pattern heads only
  double sigma = 1.0;        // pnn only
  DeForm de_form = DeForm::squared;
  std::uint64_t seed = 1;

  std::size_t input_size() const { return height * width * channels; }

  // 784(relu)-200(relu)-200(relu)-10
  static NetworkSpec reference_mlp(HeadKind head = HeadKind::fc_softmax_ce,
                                   std::size_t classes = 10) {
    NetworkSpec s;
    s.head = head;
    s.n_classes = classes;
    return s;
  }

  // conv(32)-relu-pool-conv(64)-relu-pool-flatten, then the 200-200 trunk
  static NetworkSpec reference_cnn(HeadKind head = HeadKind::fc_softmax_ce,
                                   std::size_t classes = 10) {
    NetworkSpec s = reference_mlp(head, classes);
    s.extractor = ExtractorKind::cnn;
    return s;
  }

  // 784-32-10, used to find persistently misclassified samples
  static NetworkSpec shallow_mlp(std::size_t classes = 10) {
    NetworkSpec s = reference_mlp(HeadKind::fc_softmax_ce, classes);
    s.hidden = {32};
    return s;
  }

  std::string to_string() const {
    auto join = [](const std::vector<std::size_t>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    std::string s = "extractor=" + std::string(extractor == ExtractorKind::mlp ? "mlp" : "cnn");
    s += ";input=" + std::to_string(height) + "x" + std::to_string(width) + "x" +
         std::to_string(channels);
    if (extractor == ExtractorKind::cnn) s += ";conv=" + join(conv_channels);
    s += ";hidden=" + join(hidden);
    s += ";head=" + std::string(advlab::to_string(head));
    s += ";classes=" + std::to_string(n_classes);
    if (head == HeadKind::pnn || head == HeadKind::de) s += ";patterns=" + std::to_string(patterns);
    if (head == HeadKind::pnn) s += ";sigma=" + format_double(sigma);
    if (head == HeadKind::de && de_form == DeForm::verbatim) s += ";de_form=verbatim";
    s += ";seed=" + std::to_string(seed);
    return s;
  }

  static NetworkSpec parse(std::string_view text) {
    NetworkSpec s;
    s.conv_channels.clear();
    bool saw_conv = false;
    for (std::string_view item : split(text, ';')) {
      if (item.empty()) continue;
      const std::size_t eq = item.find('=');
      require(eq != std::string_view::npos, ErrorKind::config,
              "network spec item '" + std::string(item) + "' lacks '='");
      const std::string_view key = item.substr(0, eq), val = item.substr(eq + 1);
      auto list = [&](std::string_view v) {
        std::vector<std::size_t> out;
        if (v.empty()) return out;
        for (auto p : split(v, ',')) out.push_back(parse_u64(p, key));
        return out;
      };
      if (key == "extractor") {
        require(val == "mlp" || val == "cnn", ErrorKind::config,
                "unknown extractor '" + std::string(val) + "'");
        s.extractor = val == "mlp" ? ExtractorKind::mlp : ExtractorKind::cnn;
      } else if (key == "input") {
        auto dims = split(val, 'x');
        require(dims.size() == 3, ErrorKind::config, "input must be HxWxC");
        s.height = parse_u64(dims[0], key);
        s.width = parse_u64(dims[1], key);
        s.channels = parse_u64(dims[2], key);
      } else if (key == "conv") {
        s.conv_channels = list(val);
        saw_conv = true;
      } else if (key == "hidden") {
        s.hidden = list(val);
      } else if (key == "head") {
        s.head = parse_head_kind(val);
      } else if (key == "classes") {
        s.n_classes = parse_u64(val, key);
      } else if (key == "patterns") {
        s.patterns = parse_u64(val, key);
      } else if (key == "sigma") {
        s.sigma = parse_double(val, key);
      } else if (key == "de_form") {
        require(val == "squared" || val == "verbatim", ErrorKind::config, "bad de_form");
        s.de_form = val == "squared" ? DeForm::squared : DeForm::verbatim;
      } else if (key == "seed") {
        s.seed = parse_u64(val, key);
      } else {
        fail(ErrorKind::config, "unknown network spec key '" + std::string(key) + "'");
      }
    }
    if (!saw_conv) s.conv_channels = {32, 64};
    return s;
  }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

class Network {
 public:
  explicit Network(const NetworkSpec& spec) : spec_(spec), head_(make_head(spec)) {
    build_layers();
    initialize();
  }

  Network(const Network& other) : spec_(other.spec_), head_(other.head_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Network& operator=(const Network& other) {
    if (this != &other) {
      Network copy(other);
      *this = std::move(copy);
    }
    return *this;
  }
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const NetworkSpec& spec() const { return spec_; }
  std::size_t n_classes() const { return spec_.n_classes; }
  std::size_t input_size() const { return spec_.input_size(); }
  Head& head() { return head_; }
  const Head& head() const { return head_; }
  std::vector<std::unique_ptr<Layer>>& layers() { return layers_; }

  // Class probabilities [batch, n_classes]; caches state for backward().
  Tensor forward(const Tensor& x) {
    require(x.rank() >= 2 && x.row_size() == input_size(), ErrorKind::shape,
            "network expects " + std::to_string(input_size()) + " inputs per sample, got " +
                to_string(x.shape()));
    Tensor h = x.reshaped(first_layer_shape(x.dim(0)));
    for (auto& layer : layers_) h = layer->forward(h);
    features_ = h;
    input_shape_ = x.shape();
    forwarded_ = true;
    return head_.forward(h);
  }

  // Loss of the last forward batch; fills every parameter gradient and the
  // input gradient.
  double backward(std::span<const std::size_t> labels, Reduction reduction = Reduction::mean) {
    require(forwarded_, ErrorKind::state, "network backward called before forward");
    auto [loss, grad] = head_.backward(labels, reduction);
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) grad = (*it)->backward(grad);
    input_grad_ = std::move(grad).reshaped(input_shape_);
    return loss;
  }

  double loss(const Tensor& x, std::span<const std::size_t> labels,
              Reduction reduction = Reduction::mean) {
    forward(x);
    return head_.loss(labels, reduction);
  }

  const Tensor& input_grad() const {
    require(!input_grad_.empty(), ErrorKind::state, "no backward pass has run");
    return input_grad_;
  }
  const Tensor& features() const { return features_; }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      for (auto& p : layers_[i]->params()) {
        p.name = "layer" + std::to_string(i) + "." + p.name;
        out.push_back(p);
      }
    for (auto& p : head_.params()) out.push_back(p);
    return out;
  }

  void save(const std::string& path) {
    Container c;
    c.magic = kCheckpointMagic;
    c.prng_id = std::string(kPrngId);
    c.spec = spec_.to_string();
    for (auto& p : parameters()) c.blocks.push_back(*p.value);
    write_container(path, c);
  }

  static Network load(const std::string& path) {
    Container c = read_container(path, kCheckpointMagic);
    Network net(NetworkSpec::parse(c.spec));
    auto params = net.parameters();
    require(params.size() == c.blocks.size(), ErrorKind::format,
            "checkpoint " + path + " has " + std::to_string(c.blocks.size()) +
                " blocks, network needs " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      require(params[i].value->shape() == c.blocks[i].shape(), ErrorKind::format,
              "checkpoint block " + std::to_string(i) + " has shape " +
                  to_string(c.blocks[i].shape()));
      *params[i].value = std::move(c.blocks[i]);
    }
    return net;
  }

 private:
  static std::size_t feature_dim(const NetworkSpec& s) {
    if (!s.hidden.empty()) return s.hidden.back();
    if (s.extractor == ExtractorKind::mlp) return s.input_size();
    return (s.height / 4) * (s.width / 4) * s.conv_channels.at(1);
  }

  static Head make_head(const NetworkSpec& s) {
    require(s.height > 0 && s.width > 0 && s.channels > 0, ErrorKind::config,
            "input dimensions must be positive");
    if (s.head == HeadKind::pnn || s.head == HeadKind::de)
      return Head(s.head, feature_dim(s), s.n_classes, s.patterns, s.sigma, s.de_form);
    return Head(s.head, feature_dim(s), s.n_classes);
  }

  Shape first_layer_shape(std::size_t batch) const {
    if (spec_.extractor == ExtractorKind::cnn)
      return {batch, spec_.height, spec_.width, spec_.channels};
    return {batch, input_size()};
  }

  void build_layers() {
    std::size_t in = input_size();
    if (spec_.extractor == ExtractorKind::cnn) {
      require(spec_.conv_channels.size() == 2, ErrorKind::config,
              "cnn extractor needs exactly two conv channel counts");
      require(spec_.height % 4 == 0 && spec_.width % 4 == 0, ErrorKind::config,
              "cnn extractor needs height and width divisible by 4");
      std::size_t h = spec_.height, w = spec_.width, c = spec_.channels;
      for (std::size_t out : spec_.conv_channels) {
        require(out > 0, ErrorKind::config, "conv channel count must be positive");
        layers_.push_back(std::make_unique<Conv2d>(h, w, c, out));
        layers_.push_back(std::make_unique<Relu>());
        layers_.push_back(std::make_unique<MaxPool2d>(h, w, out));
        h /= 2;
        w /= 2;
        c = out;
      }
      layers_.push_back(std::make_unique<Flatten>());
      in = h * w * c;
    }
    for (std::size_t width : spec_.hidden) {
      require(width > 0, ErrorKind::config, "hidden width must be positive");
      layers_.push_back(std::make_unique<Dense>(in, width));
      layers_.push_back(std::make_unique<Relu>());
      in = width;
    }
    require(in == head_.feat_dim(), ErrorKind::config,
            "extractor output " + std::to_string(in) + " does not match head input " +
                std::to_string(head_.feat_dim()));
  }

  // He-normal weights for relu-fed layers, zero biases, LeCun-normal FC head,
  // standard-normal patterns, log sigma = 0.
  void initialize() {
    Rng rng(spec_.seed);
    auto fill_normal = [&](Tensor& t, double stddev) {
      Tensor z = rand_normal(rng, t.size());
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * z[i];
    };
    for (auto& layer : layers_) {
      if (auto* d = dynamic_cast<Dense*>(layer.get())) {
        fill_normal(d->weight(), std::sqrt(2.0 / static_cast<double>(d->in_features())));
      } else if (auto* c = dynamic_cast<Conv2d*>(layer.get())) {
        fill_normal(c->weight(), std::sqrt(2.0 / static_cast<double>(c->fan_in())));
      }
    }
    if (head_.is_pattern_head()) {
      fill_normal(head_.patterns(), 1.0);
    } else {
      fill_normal(head_.fc().weight(), std::sqrt(1.0 / static_cast<double>(head_.feat_dim())));
    }
  }

  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Head head_;

  bool forwarded_ = false;
  Shape input_shape_;
  Tensor features_;
  Tensor input_grad_;
};

inline Network build_network(const NetworkSpec& spec) { return Network(spec); }

}  // namespace advlab

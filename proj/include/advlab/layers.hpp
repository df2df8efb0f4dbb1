#pragma once

// Feature-extractor layers with exact analytic backward passes.
//
// All layers take a batch tensor whose leading dimension is the batch size.
// Image tensors are channels-last: [batch, height, width, channels].
// backward() overwrites the layer's parameter gradients with the gradient of
// the batch loss and returns the gradient with respect to the layer input.

#include <memory>
#include <string>
#include <vector>

#include "advlab/numerics.hpp"

namespace advlab {

enum class LayerKind { dense, relu, conv2d, maxpool2d, flatten };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

// A trainable (or frozen) tensor together with its gradient buffer.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
  Tensor* grad = nullptr;
  bool trainable = true;
  bool decay = false;  // receives the L2 weight-decay term
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual LayerKind kind() const = 0;
  // Per-sample output shape for a per-sample input shape.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<ParamRef> params() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;

 protected:
  static std::size_t batch_of(const Tensor& x) {
    require(x.rank() >= 1, ErrorKind::shape, "layer input needs a batch dimension");
    return x.dim(0);
  }
  void require_forward(const char* name) const {
    require(has_input_, ErrorKind::state, std::string(name) + " backward called before forward");
  }
  bool has_input_ = false;
};

class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out)
      : weight_({out, in}), bias_({out}), grad_weight_({out, in}), grad_bias_({out}) {}

  LayerKind kind() const override { return LayerKind::dense; }
  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  const Tensor& grad_weight() const { return grad_weight_; }
  const Tensor& grad_bias() const { return grad_bias_; }

  Shape output_shape(const Shape& in) const override {
    require(shape_size(in) == in_features(), ErrorKind::shape,
            "dense layer expects " + std::to_string(in_features()) + " inputs, got " +
                to_string(in));
    return {out_features()};
  }

  // y = x W^T + b
  Tensor forward(const Tensor& x) override {
    const std::size_t batch = batch_of(x);
    require(x.row_size() == in_features(), ErrorKind::shape,
            "dense layer expects " + std::to_string(in_features()) + " inputs per sample, got " +
                to_string(x.shape()));
    input_ = x.reshaped({batch, in_features()});
    has_input_ = true;
    Tensor y({batch, out_features()});
    auto ym = detail::as_matrix(y.ptr(), batch, out_features());
    ym.noalias() = detail::as_matrix(input_.ptr(), batch, in_features()) *
                   detail::as_matrix(weight_.ptr(), out_features(), in_features()).transpose();
    ym.rowwise() += detail::as_matrix(bias_.ptr(), 1, out_features()).row(0);
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    require_forward("dense");
    const std::size_t batch = input_.dim(0);
    require(grad_out.size() == batch * out_features(), ErrorKind::shape,
            "dense backward gradient has shape " + to_string(grad_out.shape()));
    auto gy = detail::as_matrix(grad_out.ptr(), batch, out_features());
    auto x = detail::as_matrix(input_.ptr(), batch, in_features());
    detail::as_matrix(grad_weight_.ptr(), out_features(), in_features()).noalias() =
        gy.transpose() * x;
    detail::as_matrix(grad_bias_.ptr(), 1, out_features()).noalias() = gy.colwise().sum();
    Tensor gx({batch, in_features()});
    detail::as_matrix(gx.ptr(), batch, in_features()).noalias() =
        gy * detail::as_matrix(weight_.ptr(), out_features(), in_features());
    return gx;
  }

  std::vector<ParamRef> params() override {
    return {{"weight", &weight_, &grad_weight_, true, true},
            {"bias", &bias_, &grad_bias_, true, true}};
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  Tensor weight_, bias_, grad_weight_, grad_bias_;
  Tensor input_;
};

class Relu final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  Shape output_shape(const Shape& in) const override { return in; }

  Tensor forward(const Tensor& x) override {
    batch_of(x);
    shape_ = x.shape();
    active_.resize(x.size());
    has_input_ = true;
    Tensor y(x.shape());
    const double* __restrict in = x.ptr();
    double* __restrict out = y.ptr();
    unsigned char* __restrict mask = active_.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = in[i] > 0.0;
      out[i] = in[i] > 0.0 ? in[i] : 0.0;
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    require_forward("relu");
    require(grad_out.size() == active_.size(), ErrorKind::shape, "relu backward shape mismatch");
    Tensor gx(shape_);
    const double* __restrict g = grad_out.ptr();
    double* __restrict out = gx.ptr();
    const unsigned char* __restrict mask = active_.data();
    for (std::size_t i = 0; i < active_.size(); ++i) out[i] = mask[i] ? g[i] : 0.0;
    return gx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

 private:
  Shape shape_;
  std::vector<unsigned char> active_;
};

// 3x3 kernels, stride 1, zero padding that preserves height and width.
// Weight layout: [out_channels, 3, 3, in_channels].
class Conv2d final : public Layer {
 public:
  static constexpr std::size_t kKernel = 3;

  Conv2d(std::size_t height, std::size_t width, std::size_t in_channels, std::size_t out_channels)
      : height_(height),
        width_(width),
        in_channels_(in_channels),
        weight_({out_channels, kKernel, kKernel, in_channels}),
        bias_({out_channels}),
        grad_weight_(weight_.shape()),
        grad_bias_({out_channels}) {}

  LayerKind kind() const override { return LayerKind::conv2d; }
  std::size_t in_channels() const { return in_channels_; }
  std::size_t out_channels() const { return weight_.dim(0); }
  std::size_t fan_in() const { return kKernel * kKernel * in_channels_; }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& grad_weight() const { return grad_weight_; }
  const Tensor& grad_bias() const { return grad_bias_; }

  Shape output_shape(const Shape& in) const override {
    require(in == Shape{height_, width_, in_channels_}, ErrorKind::shape,
            "conv2d expects " + to_string({height_, width_, in_channels_}) + ", got " +
                to_string(in));
    return {height_, width_, out_channels()};
  }

  Tensor forward(const Tensor& x) override {
    const std::size_t batch = batch_of(x);
    const std::size_t pixels = height_ * width_;
    require(x.row_size() == pixels * in_channels_, ErrorKind::shape,
            "conv2d input " + to_string(x.shape()) + " does not match " +
                to_string({height_, width_, in_channels_}));
    if (patches_.rank() != 2 || patches_.dim(0) != batch * pixels)
      patches_ = Tensor({batch * pixels, fan_in()});
    for (std::size_t b = 0; b < batch; ++b) im2col(x.row(b).data(), patches_.ptr() + b * pixels * fan_in());
    has_input_ = true;

    Tensor y({batch, height_, width_, out_channels()});
    auto ym = detail::as_matrix(y.ptr(), batch * pixels, out_channels());
    ym.noalias() = detail::as_matrix(patches_.ptr(), batch * pixels, fan_in()) *
                   detail::as_matrix(weight_.ptr(), out_channels(), fan_in()).transpose();
    ym.rowwise() += detail::as_matrix(bias_.ptr(), 1, out_channels()).row(0);
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    require_forward("conv2d");
    const std::size_t pixels = height_ * width_;
    const std::size_t rows = patches_.dim(0);
    const std::size_t batch = rows / pixels;
    require(grad_out.size() == rows * out_channels(), ErrorKind::shape,
            "conv2d backward gradient has shape " + to_string(grad_out.shape()));
    auto gy = detail::as_matrix(grad_out.ptr(), rows, out_channels());
    auto p = detail::as_matrix(patches_.ptr(), rows, fan_in());
    detail::as_matrix(grad_weight_.ptr(), out_channels(), fan_in()).noalias() = gy.transpose() * p;
    detail::as_matrix(grad_bias_.ptr(), 1, out_channels()).noalias() = gy.colwise().sum();

    grad_patches_.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(fan_in()));
    grad_patches_.noalias() = gy * detail::as_matrix(weight_.ptr(), out_channels(), fan_in());
    const auto& grad_patches = grad_patches_;
    Tensor gx({batch, height_, width_, in_channels_});
    for (std::size_t b = 0; b < batch; ++b)
      col2im(grad_patches.data() + b * pixels * fan_in(), gx.row(b).data());
    return gx;
  }

  std::vector<ParamRef> params() override {
    return {{"weight", &weight_, &grad_weight_, true, true},
            {"bias", &bias_, &grad_bias_, true, true}};
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  // Row (y, x) of the patch matrix holds the 3x3xC neighbourhood in
  // (ky, kx, c) order, zeros outside the image.
  void im2col(const double* img, double* out) const {
    const auto h = static_cast<std::ptrdiff_t>(height_);
    const auto w = static_cast<std::ptrdiff_t>(width_);
    const std::size_t c = in_channels_;
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double* row = out + static_cast<std::size_t>(y * w + x) * fan_in();
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
            double* dst = row + static_cast<std::size_t>(ky * 3 + kx) * c;
            const std::ptrdiff_t sy = y + ky - 1, sx = x + kx - 1;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
              std::fill(dst, dst + c, 0.0);
            } else {
              const double* src = img + static_cast<std::size_t>(sy * w + sx) * c;
              std::copy(src, src + c, dst);
            }
          }
        }
      }
    }
  }

  void col2im(const double* cols, double* img) const {
    const auto h = static_cast<std::ptrdiff_t>(height_);
    const auto w = static_cast<std::ptrdiff_t>(width_);
    const std::size_t c = in_channels_;
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        const double* row = cols + static_cast<std::size_t>(y * w + x) * fan_in();
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t sy = y + ky - 1, sx = x + kx - 1;
            if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
            const double* src = row + static_cast<std::size_t>(ky * 3 + kx) * c;
            double* dst = img + static_cast<std::size_t>(sy * w + sx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }

  std::size_t height_, width_, in_channels_;
  Tensor weight_, bias_, grad_weight_, grad_bias_;
  Tensor patches_;
  detail::RowMatrix grad_patches_;
};

// 2x2 window, stride 2. Backward routes each gradient to the first maximal
// cell in row-major window order.
class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t height, std::size_t width, std::size_t channels)
      : height_(height), width_(width), channels_(channels) {
    require(height % 2 == 0 && width % 2 == 0, ErrorKind::shape,
            "maxpool2d needs even height and width, got " + to_string({height, width}));
  }

  LayerKind kind() const override { return LayerKind::maxpool2d; }

  Shape output_shape(const Shape& in) const override {
    require(in == Shape{height_, width_, channels_}, ErrorKind::shape,
            "maxpool2d expects " + to_string({height_, width_, channels_}) + ", got " +
                to_string(in));
    return {height_ / 2, width_ / 2, channels_};
  }

  Tensor forward(const Tensor& x) override {
    const std::size_t batch = batch_of(x);
    require(x.row_size() == height_ * width_ * channels_, ErrorKind::shape,
            "maxpool2d input " + to_string(x.shape()) + " does not match " +
                to_string({height_, width_, channels_}));
    const std::size_t oh = height_ / 2, ow = width_ / 2;
    Tensor y({batch, oh, ow, channels_});
    winners_.assign(y.size(), 0);
    has_input_ = true;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = b * height_ * width_ * channels_;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
          for (std::size_t c = 0; c < channels_; ++c) {
            std::size_t best = base + ((2 * i) * width_ + 2 * j) * channels_ + c;
            for (std::size_t di = 0; di < 2; ++di)
              for (std::size_t dj = 0; dj < 2; ++dj) {
                const std::size_t at = base + ((2 * i + di) * width_ + 2 * j + dj) * channels_ + c;
                if (x[at] > x[best]) best = at;
              }
            const std::size_t o = ((b * oh + i) * ow + j) * channels_ + c;
            y[o] = x[best];
            winners_[o] = best;
          }
    }
    batch_ = batch;
    return y;
  }

  Tensor backward(const Tensor& grad_out) override {
    require_forward("maxpool2d");
    require(grad_out.size() == winners_.size(), ErrorKind::shape, "maxpool2d backward shape mismatch");
    Tensor gx({batch_, height_, width_, channels_});
    for (std::size_t o = 0; o < winners_.size(); ++o) gx[winners_[o]] += grad_out[o];
    return gx;
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  std::size_t height_, width_, channels_;
  std::vector<std::size_t> winners_;
  std::size_t batch_ = 0;
};

class Flatten final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::flatten; }
  Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }

  Tensor forward(const Tensor& x) override {
    const std::size_t batch = batch_of(x);
    in_shape_ = x.shape();
    has_input_ = true;
    return x.reshaped({batch, x.row_size()});
  }

  Tensor backward(const Tensor& grad_out) override {
    require_forward("flatten");
    return grad_out.reshaped(in_shape_);
  }

  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }

 private:
  Shape in_shape_;
};

}  // namespace advlab

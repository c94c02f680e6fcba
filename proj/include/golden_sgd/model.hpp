#pragma once

// Sequential model described by a ModelSpec, plus the 11-layer digit CNN.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "golden_sgd/errors.hpp"
#include "golden_sgd/layers.hpp"
#include "golden_sgd/rng.hpp"
#include "golden_sgd/tensor.hpp"

namespace golden_sgd {

struct Conv2dSpec {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
};
struct ReluSpec {};
struct MaxPool2Spec {};
struct FlattenSpec {};
struct DropoutSpec {
  double rate = 0.25;
};
struct DenseSpec {
  std::size_t in_features;
  std::size_t out_features;
};
// Loss head; must be the final layer.
struct SoftmaxCrossEntropySpec {};

using LayerSpec =
    std::variant<Conv2dSpec, ReluSpec, MaxPool2Spec, FlattenSpec, DropoutSpec, DenseSpec, SoftmaxCrossEntropySpec>;

struct ModelSpec {
  Shape input_shape;  // per-sample shape, e.g. {1, 28, 28}
  std::vector<LayerSpec> layers;

  // Per-sample output shape of every layer, throwing ShapeError on the first
  // incompatibility and if the loss head is missing or duplicated.
  std::vector<Shape> validate() const {
    if (layers.empty() || !std::holds_alternative<SoftmaxCrossEntropySpec>(layers.back())) {
      throw ShapeError("model must end with exactly one softmax cross-entropy head");
    }
    std::vector<Shape> shapes;
    Shape s = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto where = "layer " + std::to_string(i) + ": ";
      std::visit(
          [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Conv2dSpec>) {
              if (s.size() != 3 || s[0] != l.in_channels) {
                throw ShapeError(where + "conv expects " + std::to_string(l.in_channels) +
                                 " channels, got " + shape_to_string(s));
              }
              if (l.stride == 0 || s[1] + 2 * l.padding < l.kernel || s[2] + 2 * l.padding < l.kernel) {
                throw ShapeError(where + "conv kernel does not fit " + shape_to_string(s));
              }
              s = {l.out_channels, (s[1] + 2 * l.padding - l.kernel) / l.stride + 1,
                   (s[2] + 2 * l.padding - l.kernel) / l.stride + 1};
            } else if constexpr (std::is_same_v<L, MaxPool2Spec>) {
              if (s.size() != 3 || s[1] % 2 || s[2] % 2) {
                throw ShapeError(where + "maxpool needs even spatial dims, got " + shape_to_string(s));
              }
              s = {s[0], s[1] / 2, s[2] / 2};
            } else if constexpr (std::is_same_v<L, FlattenSpec>) {
              s = {shape_size(s)};
            } else if constexpr (std::is_same_v<L, DropoutSpec>) {
              if (!(l.rate >= 0.0 && l.rate < 1.0)) throw DomainError(where + "dropout rate outside [0,1)");
            } else if constexpr (std::is_same_v<L, DenseSpec>) {
              if (s.size() != 1 || s[0] != l.in_features) {
                throw ShapeError(where + "dense expects " + std::to_string(l.in_features) +
                                 " features, got " + shape_to_string(s));
              }
              s = {l.out_features};
            } else if constexpr (std::is_same_v<L, SoftmaxCrossEntropySpec>) {
              if (i + 1 != layers.size()) throw ShapeError(where + "loss head must be last");
              if (s.size() != 1) throw ShapeError(where + "loss head needs flat logits");
            }
          },
          layers[i]);
      shapes.push_back(s);
    }
    return shapes;
  }
};

// Activations recorded by a forward pass, consumed by Model::backward.
struct Trace {
  std::vector<Tensor> activations;  // [0] is the input, [i+1] the output of layer i
  std::vector<std::vector<double>> dropout_masks;
  std::vector<std::vector<std::size_t>> pool_argmax;

  Tensor& logits() { return activations.back(); }
  const Tensor& logits() const { return activations.back(); }
};

class Model {
 public:
  Model(ModelSpec spec, Rng& init_rng) : spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      param_index_.push_back(params_.size());
      if (const auto* c = std::get_if<Conv2dSpec>(&spec_.layers[i])) {
        const std::size_t fan_in = c->in_channels * c->kernel * c->kernel;
        const auto prefix = "conv" + std::to_string(++conv_count_);
        params_.push_back({prefix + ".weight",
                           kaiming_uniform_init(init_rng, fan_in, {c->out_channels, c->in_channels, c->kernel, c->kernel})});
        params_.push_back({prefix + ".bias", Tensor({c->out_channels})});
      } else if (const auto* d = std::get_if<DenseSpec>(&spec_.layers[i])) {
        const auto prefix = "fc" + std::to_string(++dense_count_);
        params_.push_back({prefix + ".weight",
                           kaiming_uniform_init(init_rng, d->in_features, {d->in_features, d->out_features})});
        params_.push_back({prefix + ".bias", Tensor({d->out_features})});
      }
    }
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  void zero_grad() noexcept {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  // Forward through every layer except the loss head. `dropout_rng` is only
  // consulted in training mode. Const: safe for concurrent inference.
  Trace forward(const Tensor& input, bool training, Rng* dropout_rng = nullptr) const {
    check_input(input);
    if (training && dropout_rng == nullptr && has_dropout()) {
      throw DomainError("training-mode forward needs a dropout rng");
    }
    Trace trace;
    const std::size_t n_layers = spec_.layers.size() - 1;
    trace.activations.reserve(n_layers + 1);
    trace.dropout_masks.resize(n_layers);
    trace.pool_argmax.resize(n_layers);
    trace.activations.push_back(input.reshaped(input.shape()));
    for (std::size_t i = 0; i < n_layers; ++i) {
      const Tensor& x = trace.activations.back();
      const std::size_t p = param_index_[i];
      Tensor y = std::visit(
          [&](const auto& l) -> Tensor {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Conv2dSpec>) {
              return conv2d(x, params_[p].tensor, params_[p + 1].tensor, l.stride, l.padding);
            } else if constexpr (std::is_same_v<L, ReluSpec>) {
              return relu(x);
            } else if constexpr (std::is_same_v<L, MaxPool2Spec>) {
              return maxpool2x2(x, trace.pool_argmax[i]);
            } else if constexpr (std::is_same_v<L, FlattenSpec>) {
              return x.reshaped({x.dim(0), x.size() / x.dim(0)});
            } else if constexpr (std::is_same_v<L, DropoutSpec>) {
              Rng unused(0);
              return dropout(x, l.rate, training ? *dropout_rng : unused, training, trace.dropout_masks[i]);
            } else if constexpr (std::is_same_v<L, DenseSpec>) {
              return dense(x, params_[p].tensor, params_[p + 1].tensor);
            } else {
              throw ShapeError("loss head reached inside forward");
            }
          },
          spec_.layers[i]);
      trace.activations.push_back(std::move(y));
    }
    return trace;
  }

  Tensor predict(const Tensor& input) const { return std::move(forward(input, false).logits()); }

  // Mean cross-entropy of the trace's logits.
  static double loss(const Trace& trace, std::span<const int> labels) {
    return softmax_cross_entropy(trace.logits(), labels);
  }

  // Accumulates parameter gradients of the mean cross-entropy loss, and the
  // input gradient into trace.activations[0].grad when `input_grad` is set.
  void backward(Trace& trace, std::span<const int> labels, bool input_grad = false) {
    softmax_cross_entropy_backward(trace.logits(), labels);
    const std::size_t n_layers = spec_.layers.size() - 1;
    for (std::size_t i = n_layers; i-- > 0;) {
      Tensor& x = trace.activations[i];
      const Tensor& y = trace.activations[i + 1];
      const std::size_t p = param_index_[i];
      std::visit(
          [&](const auto& l) {
            using L = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<L, Conv2dSpec>) {
              conv2d_backward(x, params_[p].tensor, params_[p + 1].tensor, y, l.stride, l.padding, input_grad || i > 0);
            } else if constexpr (std::is_same_v<L, ReluSpec>) {
              relu_backward(x, y);
            } else if constexpr (std::is_same_v<L, MaxPool2Spec>) {
              maxpool2x2_backward(x, y, trace.pool_argmax[i]);
            } else if constexpr (std::is_same_v<L, FlattenSpec>) {
              auto gx = x.grad();
              auto gy = y.grad();
              for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += gy[k];
            } else if constexpr (std::is_same_v<L, DropoutSpec>) {
              dropout_backward(x, y, trace.dropout_masks[i]);
            } else if constexpr (std::is_same_v<L, DenseSpec>) {
              dense_backward(x, params_[p].tensor, params_[p + 1].tensor, y);
            }
          },
          spec_.layers[i]);
    }
  }

 private:
  bool has_dropout() const {
    for (const auto& l : spec_.layers) {
      if (const auto* d = std::get_if<DropoutSpec>(&l); d && d->rate > 0.0) return true;
    }
    return false;
  }

  void check_input(const Tensor& input) const {
    if (input.rank() != spec_.input_shape.size() + 1) {
      throw ShapeError("model input must be a batch of " + shape_to_string(spec_.input_shape) + ", got " +
                       shape_to_string(input.shape()));
    }
    for (std::size_t i = 0; i < spec_.input_shape.size(); ++i) {
      if (input.dim(i + 1) != spec_.input_shape[i]) {
        throw ShapeError("model input must be a batch of " + shape_to_string(spec_.input_shape) + ", got " +
                         shape_to_string(input.shape()));
      }
    }
  }

  ModelSpec spec_;
  std::vector<NamedTensor> params_;
  std::vector<std::size_t> param_index_;
  std::size_t conv_count_ = 0;
  std::size_t dense_count_ = 0;
};

inline constexpr std::size_t kMnistHiddenWidth = 128;

inline ModelSpec mnist_cnn_spec(double dropout_rate = 0.25) {
  ModelSpec spec;
  spec.input_shape = {1, 28, 28};
  spec.layers = {
      Conv2dSpec{1, 16},
      ReluSpec{},
      MaxPool2Spec{},
      Conv2dSpec{16, 32},
      ReluSpec{},
      MaxPool2Spec{},
      FlattenSpec{},
      DropoutSpec{dropout_rate},
      DenseSpec{32 * 7 * 7, kMnistHiddenWidth},
      ReluSpec{},
      DenseSpec{kMnistHiddenWidth, 10},
      SoftmaxCrossEntropySpec{},
  };
  return spec;
}

// conv(1->16) relu pool, conv(16->32) relu pool, flatten, dropout(0.25),
// dense(1568->128) relu, dense(128->10), softmax cross-entropy.
inline Model build_mnist_cnn(Rng& rng, double dropout_rate = 0.25) {
  return Model(mnist_cnn_spec(dropout_rate), rng);
}

}  // namespace golden_sgd

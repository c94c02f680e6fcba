#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "golden_sgd/model.hpp"
#include "golden_sgd/rng.hpp"
#include "golden_sgd/tensor.hpp"

namespace golden_sgd {

// |a - n| / max(1, |a| + |n|)
inline double gradient_relative_error(double analytic, double numeric) noexcept {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic) + std::abs(numeric));
}

struct GradCheckOptions {
  double epsilon = 1e-5;
  // 0 checks every element; otherwise at most this many elements per tensor,
  // chosen by a seeded shuffle.
  std::size_t max_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct CheckedTensor {
  std::string name;
  Tensor* tensor;
};

// Compares the gradients already stored in each tensor's grad buffer with
// central differences of `loss`. Data buffers are restored bit-exactly.
inline GradCheckResult grad_check(const std::function<double()>& loss, std::span<const CheckedTensor> tensors,
                                  const GradCheckOptions& options = {}) {
  GradCheckResult result;
  Rng sampler(options.sample_seed);
  for (const auto& [name, tensor] : tensors) {
    std::vector<std::size_t> indices(tensor->size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    if (options.max_per_tensor != 0 && indices.size() > options.max_per_tensor) {
      shuffle(indices.begin(), indices.end(), sampler);
      indices.resize(options.max_per_tensor);
      std::sort(indices.begin(), indices.end());
    }
    auto data = tensor->data();
    auto grad = tensor->grad();
    for (std::size_t i : indices) {
      const double saved = data[i];
      data[i] = saved + options.epsilon;
      const double plus = loss();
      data[i] = saved - options.epsilon;
      const double minus = loss();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.epsilon);
      const double err = gradient_relative_error(grad[i], numeric);
      ++result.checked;
      if (err > result.max_relative_error || !std::isfinite(err)) {
        result.max_relative_error = std::isfinite(err) ? err : HUGE_VAL;
        result.worst_tensor = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

// Gradient check of a whole model in evaluation mode (dropout disabled):
// every parameter tensor plus the input batch.
inline GradCheckResult grad_check(Model& model, const Tensor& input, std::span<const int> labels,
                                  const GradCheckOptions& options = {}) {
  model.zero_grad();
  Trace trace = model.forward(input, false);
  model.backward(trace, labels, true);
  Tensor probe = input.reshaped(input.shape());
  {
    auto g = trace.activations.front().grad();
    std::copy(g.begin(), g.end(), probe.grad().begin());
  }
  auto loss = [&] { return Model::loss(model.forward(probe, false), labels); };
  std::vector<CheckedTensor> tensors;
  for (auto& p : model.parameters()) tensors.push_back({p.name, &p.tensor});
  tensors.push_back({"input", &probe});
  return grad_check(loss, tensors, options);
}

}  // namespace golden_sgd

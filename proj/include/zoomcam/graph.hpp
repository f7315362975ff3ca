#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "zoomcam/tensor.hpp"

namespace zoomcam {

struct Conv2d {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  bool has_bias = false;
};

struct ReLU {};

struct MaxPool {
  std::size_t kernel_h = 2;
  std::size_t kernel_w = 2;
  std::size_t stride_h = 2;
  std::size_t stride_w = 2;
};

struct GlobalAvgPool {};

struct Flatten {};

struct Linear {
  std::size_t in_dim = 1;
  std::size_t out_dim = 1;
  bool has_bias = false;
};

using LayerKind =
    std::variant<Conv2d, ReLU, MaxPool, GlobalAvgPool, Flatten, Linear>;

inline std::string_view kind_name(const LayerKind& kind) {
  static constexpr std::array<std::string_view, 6> names = {
      "conv2d", "relu", "maxpool", "gap", "flatten", "linear"};
  return names[kind.index()];
}

struct LayerSpec {
  std::string name;
  LayerKind kind;

  template <typename T>
  bool is() const {
    return std::holds_alternative<T>(kind);
  }
};

// Weight and bias of one layer. Both are empty tensors for layers without
// parameters; `bias` is empty when the layer declares no bias.
//   Conv2d: weight (out, in, kh, kw), bias (out)
//   Linear: weight (out, in),         bias (out)
struct LayerParams {
  Tensor weight;
  Tensor bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

using ParamSet = std::vector<LayerParams>;

// A validated chain of layers with their weights. Immutable once built;
// copies share the weight storage.
class ModelGraph {
 public:
  using Shape3 = std::array<std::size_t, 3>;  // channel, height, width

  ModelGraph(Shape3 input_shape, std::vector<LayerSpec> layers, ParamSet params,
             std::size_t class_count)
      : input_shape_(input_shape),
        layers_(std::move(layers)),
        params_(std::make_shared<const ParamSet>(std::move(params))),
        class_count_(class_count) {
    validate();
  }

  const Shape3& input_shape() const { return input_shape_; }
  Dims input_dims() const {
    return {1, input_shape_[0], input_shape_[1], input_shape_[2]};
  }
  std::size_t class_count() const { return class_count_; }
  std::size_t layer_count() const { return layers_.size(); }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  const ParamSet& params() const { return *params_; }
  std::shared_ptr<const ParamSet> shared_params() const { return params_; }

  // Output dims of layer i (batch 1).
  const Dims& output_dims(std::size_t i) const { return out_dims_.at(i); }

  std::optional<std::size_t> find_layer(std::string_view name) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t layer_index(std::string_view name) const {
    if (auto i = find_layer(name)) return *i;
    throw Error("unknown layer '" + std::string(name) + "'");
  }

  // Same architecture with replacement weights (validated).
  ModelGraph with_params(ParamSet params) const {
    return ModelGraph(input_shape_, layers_, std::move(params), class_count_);
  }

 private:
  void validate();

  Shape3 input_shape_;
  std::vector<LayerSpec> layers_;
  std::shared_ptr<const ParamSet> params_;
  std::size_t class_count_;
  std::vector<Dims> out_dims_;
};

namespace detail {

inline std::string layer_label(const LayerSpec& spec) {
  return "layer '" + spec.name + "' (" + std::string(kind_name(spec.kind)) +
         ")";
}

inline void expect_dims(const LayerSpec& spec, const Tensor& t,
                        const Dims& want, const char* what) {
  if (t.dims() != want) {
    throw ShapeError(layer_label(spec) + ": " + what + " has dims " +
                     dims_to_string(t.dims()) + ", expected " +
                     dims_to_string(want));
  }
}

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t s,
                               std::size_t p) {
  return (in + 2 * p - k) / s + 1;
}

}  // namespace detail

inline void ModelGraph::validate() {
  if (layers_.empty()) throw ShapeError("model has no layers");
  if (params_->size() != layers_.size()) {
    throw ShapeError("model has " + std::to_string(layers_.size()) +
                     " layers but " + std::to_string(params_->size()) +
                     " parameter entries");
  }
  if (input_shape_[0] == 0 || input_shape_[1] == 0 || input_shape_[2] == 0)
    throw ShapeError("input shape has a zero extent");

  std::unordered_set<std::string> names;
  Dims cur = input_dims();
  out_dims_.clear();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& spec = layers_[i];
    const LayerParams& p = (*params_)[i];
    const std::string label = detail::layer_label(spec);
    if (spec.name.empty()) throw ShapeError("layer " + std::to_string(i) + " has an empty name");
    if (!names.insert(spec.name).second)
      throw ShapeError("duplicate layer name '" + spec.name + "'");

    auto need_4d = [&] {
      if (cur.size() != 4)
        throw ShapeError(label + ": expects a 4-D input, got " +
                         dims_to_string(cur));
    };
    auto no_params = [&] {
      if (!p.weight.empty() || !p.bias.empty())
        throw ShapeError(label + ": layer takes no parameters");
    };

    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Conv2d>) {
            need_4d();
            if (k.kernel_h == 0 || k.kernel_w == 0 || k.stride_h == 0 ||
                k.stride_w == 0 || k.out_channels == 0)
              throw ShapeError(label + ": zero kernel, stride or channel count");
            if (cur[1] != k.in_channels)
              throw ShapeError(label + ": expects " +
                               std::to_string(k.in_channels) +
                               " input channels, got " + std::to_string(cur[1]));
            if (cur[2] + 2 * k.pad_h < k.kernel_h ||
                cur[3] + 2 * k.pad_w < k.kernel_w)
              throw ShapeError(label + ": kernel larger than padded input " +
                               dims_to_string(cur));
            detail::expect_dims(spec, p.weight,
                                {k.out_channels, k.in_channels, k.kernel_h,
                                 k.kernel_w},
                                "weight");
            if (k.has_bias)
              detail::expect_dims(spec, p.bias, {k.out_channels}, "bias");
            else if (!p.bias.empty())
              throw ShapeError(label + ": bias given but has_bias is false");
            cur = {1, k.out_channels,
                   detail::conv_extent(cur[2], k.kernel_h, k.stride_h, k.pad_h),
                   detail::conv_extent(cur[3], k.kernel_w, k.stride_w, k.pad_w)};
          } else if constexpr (std::is_same_v<K, ReLU>) {
            no_params();
          } else if constexpr (std::is_same_v<K, MaxPool>) {
            need_4d();
            no_params();
            if (k.kernel_h == 0 || k.kernel_w == 0 || k.stride_h == 0 ||
                k.stride_w == 0)
              throw ShapeError(label + ": zero kernel or stride");
            if (cur[2] < k.kernel_h || cur[3] < k.kernel_w)
              throw ShapeError(label + ": window larger than input " +
                               dims_to_string(cur));
            cur = {1, cur[1], detail::conv_extent(cur[2], k.kernel_h, k.stride_h, 0),
                   detail::conv_extent(cur[3], k.kernel_w, k.stride_w, 0)};
          } else if constexpr (std::is_same_v<K, GlobalAvgPool>) {
            need_4d();
            no_params();
            cur = {1, cur[1], 1, 1};
          } else if constexpr (std::is_same_v<K, Flatten>) {
            no_params();
            cur = {1, element_count(cur)};
          } else if constexpr (std::is_same_v<K, Linear>) {
            const std::size_t in = element_count(cur);
            if (in != k.in_dim)
              throw ShapeError(label + ": expects " + std::to_string(k.in_dim) +
                               " inputs, got " + std::to_string(in) + " from " +
                               dims_to_string(cur));
            detail::expect_dims(spec, p.weight, {k.out_dim, k.in_dim}, "weight");
            if (k.has_bias)
              detail::expect_dims(spec, p.bias, {k.out_dim}, "bias");
            else if (!p.bias.empty())
              throw ShapeError(label + ": bias given but has_bias is false");
            cur = {1, k.out_dim};
          }
        },
        spec.kind);

    if (!p.weight.all_finite() || !p.bias.all_finite())
      throw ShapeError(label + ": non-finite parameter");
    out_dims_.push_back(cur);
  }
  if (element_count(cur) != class_count_) {
    throw ShapeError("final layer '" + layers_.back().name + "' produces " +
                     std::to_string(element_count(cur)) + " values, expected " +
                     std::to_string(class_count_) + " classes");
  }
}

// Pre-softmax class scores.
struct ScoreVector {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

// Frozen per-layer state recorded by forward(). Backward passes read the
// nonlinearity masks and the weight snapshot from here, never from a re-run.
struct TapeEntry {
  Tensor input;
  Tensor output;
  std::vector<unsigned char> relu_pass;  // ReLU: 1 where input > 0
  std::vector<std::size_t> argmax;       // MaxPool: flat input index per output
};

class ActivationTape {
 public:
  ActivationTape() = default;

  std::size_t size() const { return entries_.size(); }
  const TapeEntry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<TapeEntry>& entries() const { return entries_; }
  const ScoreVector& scores() const { return scores_; }
  const ParamSet& params() const { return *params_; }

 private:
  friend struct TapeAccess;

  std::vector<TapeEntry> entries_;
  ScoreVector scores_;
  std::shared_ptr<const ParamSet> params_;
};

struct ForwardResult {
  ScoreVector scores;
  ActivationTape tape;
};

namespace detail {

inline Tensor conv2d_forward(const Conv2d& k, const LayerParams& p,
                             const Tensor& in, const Dims& out_dims) {
  Tensor out(out_dims);
  const std::size_t ih = in.dim(2), iw = in.dim(3);
  const std::size_t oh = out_dims[2], ow = out_dims[3];
  for (std::size_t o = 0; o < k.out_channels; ++o) {
    const double b = k.has_bias ? p.bias[o] : 0.0;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = b;
        for (std::size_t c = 0; c < k.in_channels; ++c) {
          for (std::size_t u = 0; u < k.kernel_h; ++u) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * k.stride_h + u) -
                                      static_cast<std::ptrdiff_t>(k.pad_h);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) continue;
            for (std::size_t v = 0; v < k.kernel_w; ++v) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * k.stride_w + v) -
                                        static_cast<std::ptrdiff_t>(k.pad_w);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) continue;
              acc += p.weight.at(o, c, u, v) *
                     in.at(0, c, static_cast<std::size_t>(iy),
                           static_cast<std::size_t>(ix));
            }
          }
        }
        out.at(0, o, y, x) = acc;
      }
    }
  }
  return out;
}

inline Tensor conv2d_backward(const Conv2d& k, const LayerParams& p,
                              const Dims& in_dims, const Tensor& grad_out) {
  Tensor grad_in(in_dims);
  const std::size_t ih = in_dims[2], iw = in_dims[3];
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);
  for (std::size_t o = 0; o < k.out_channels; ++o) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const double g = grad_out.at(0, o, y, x);
        if (g == 0.0) continue;
        for (std::size_t c = 0; c < k.in_channels; ++c) {
          for (std::size_t u = 0; u < k.kernel_h; ++u) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * k.stride_h + u) -
                                      static_cast<std::ptrdiff_t>(k.pad_h);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(ih)) continue;
            for (std::size_t v = 0; v < k.kernel_w; ++v) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(x * k.stride_w + v) -
                                        static_cast<std::ptrdiff_t>(k.pad_w);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(iw)) continue;
              grad_in.at(0, c, static_cast<std::size_t>(iy),
                         static_cast<std::size_t>(ix)) += p.weight.at(o, c, u, v) * g;
            }
          }
        }
      }
    }
  }
  return grad_in;
}

// Ties resolve to the first maximal position in row-major window order.
inline Tensor maxpool_forward(const MaxPool& k, const Tensor& in,
                              const Dims& out_dims,
                              std::vector<std::size_t>& argmax) {
  Tensor out(out_dims);
  argmax.assign(out.size(), 0);
  const std::size_t channels = in.dim(1);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < out_dims[2]; ++y) {
      for (std::size_t x = 0; x < out_dims[3]; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_at = 0;
        for (std::size_t u = 0; u < k.kernel_h; ++u) {
          for (std::size_t v = 0; v < k.kernel_w; ++v) {
            const std::size_t idx =
                in.offset(0, c, y * k.stride_h + u, x * k.stride_w + v);
            if (in[idx] > best) {
              best = in[idx];
              best_at = idx;
            }
          }
        }
        const std::size_t o = out.offset(0, c, y, x);
        out[o] = best;
        argmax[o] = best_at;
      }
    }
  }
  return out;
}

inline Tensor linear_forward(const Linear& k, const LayerParams& p,
                             const Tensor& in) {
  Tensor out(Dims{1, k.out_dim});
  for (std::size_t o = 0; o < k.out_dim; ++o) {
    double acc = k.has_bias ? p.bias[o] : 0.0;
    for (std::size_t i = 0; i < k.in_dim; ++i)
      acc += p.weight[o * k.in_dim + i] * in[i];
    out[o] = acc;
  }
  return out;
}

// Runs layers [first, last) on `x`. When `record` is set, every layer's
// input, output and masks are appended to it.
inline Tensor run_layers(const ModelGraph& model, const ParamSet& params,
                         std::size_t first, std::size_t last, Tensor x,
                         std::vector<TapeEntry>* record) {
  for (std::size_t i = first; i < last; ++i) {
    const LayerSpec& spec = model.layer(i);
    const Dims& out_dims = model.output_dims(i);
    TapeEntry entry;
    Tensor y = std::visit(
        [&](const auto& k) -> Tensor {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, Conv2d>) {
            return conv2d_forward(k, params[i], x, out_dims);
          } else if constexpr (std::is_same_v<K, ReLU>) {
            Tensor out(x.dims());
            entry.relu_pass.resize(x.size());
            for (std::size_t j = 0; j < x.size(); ++j) {
              const bool pass = x[j] > 0.0;
              entry.relu_pass[j] = pass ? 1 : 0;
              out[j] = pass ? x[j] : 0.0;
            }
            return out;
          } else if constexpr (std::is_same_v<K, MaxPool>) {
            return maxpool_forward(k, x, out_dims, entry.argmax);
          } else if constexpr (std::is_same_v<K, GlobalAvgPool>) {
            Tensor out(out_dims);
            const std::size_t area = x.dim(2) * x.dim(3);
            for (std::size_t c = 0; c < x.dim(1); ++c) {
              double acc = 0.0;
              for (std::size_t j = 0; j < area; ++j) acc += x[c * area + j];
              out[c] = acc / static_cast<double>(area);
            }
            return out;
          } else if constexpr (std::is_same_v<K, Flatten>) {
            return x.reshaped(out_dims);
          } else {
            return linear_forward(k, params[i], x);
          }
        },
        spec.kind);
    if (!y.all_finite())
      throw Error(layer_label(spec) + ": produced a non-finite value");
    if (record) {
      entry.input = std::move(x);
      entry.output = y;
      record->push_back(std::move(entry));
    }
    x = std::move(y);
  }
  return x;
}

// Gradient with respect to layer i's input, given the gradient with respect
// to its output. Uses only the tape entry and the parameter snapshot.
inline Tensor layer_backward(const LayerSpec& spec, const LayerParams& p,
                             const TapeEntry& entry, const Tensor& grad_out) {
  const Dims& in_dims = entry.input.dims();
  return std::visit(
      [&](const auto& k) -> Tensor {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Conv2d>) {
          return conv2d_backward(k, p, in_dims, grad_out);
        } else if constexpr (std::is_same_v<K, ReLU>) {
          Tensor g(in_dims);
          for (std::size_t j = 0; j < g.size(); ++j)
            g[j] = entry.relu_pass[j] ? grad_out[j] : 0.0;
          return g;
        } else if constexpr (std::is_same_v<K, MaxPool>) {
          Tensor g(in_dims);
          for (std::size_t j = 0; j < grad_out.size(); ++j)
            g[entry.argmax[j]] += grad_out[j];
          return g;
        } else if constexpr (std::is_same_v<K, GlobalAvgPool>) {
          Tensor g(in_dims);
          const std::size_t area = in_dims[2] * in_dims[3];
          const double scale = 1.0 / static_cast<double>(area);
          for (std::size_t c = 0; c < in_dims[1]; ++c)
            for (std::size_t j = 0; j < area; ++j)
              g[c * area + j] = grad_out[c] * scale;
          return g;
        } else if constexpr (std::is_same_v<K, Flatten>) {
          return grad_out.reshaped(in_dims);
        } else {
          Tensor g(in_dims);
          for (std::size_t o = 0; o < k.out_dim; ++o) {
            const double go = grad_out[o];
            if (go == 0.0) continue;
            for (std::size_t i = 0; i < k.in_dim; ++i)
              g[i] += p.weight[o * k.in_dim + i] * go;
          }
          return g;
        }
      },
      spec.kind);
}

}  // namespace detail

struct TapeAccess {
  static ActivationTape make(std::vector<TapeEntry> entries, ScoreVector scores,
                             std::shared_ptr<const ParamSet> params) {
    ActivationTape t;
    t.entries_ = std::move(entries);
    t.scores_ = std::move(scores);
    t.params_ = std::move(params);
    return t;
  }
};

inline ForwardResult forward(const ModelGraph& model, const Tensor& input) {
  const Dims want = model.input_dims();
  if (input.dims() != want) {
    throw ShapeError("input has dims " + dims_to_string(input.dims()) +
                     ", model '" + model.layer(0).name + "' expects " +
                     dims_to_string(want));
  }
  if (!input.all_finite()) throw Error("input contains non-finite values");
  std::vector<TapeEntry> entries;
  entries.reserve(model.layer_count());
  Tensor out = detail::run_layers(model, model.params(), 0, model.layer_count(),
                                  input, &entries);
  ScoreVector scores{std::vector<double>(out.data().begin(), out.data().end())};
  ActivationTape tape =
      TapeAccess::make(std::move(entries), scores, model.shared_params());
  return {std::move(scores), std::move(tape)};
}

namespace detail {

inline void check_tape(const ModelGraph& model, const ActivationTape& tape) {
  if (tape.size() != model.layer_count())
    throw Error("tape has " + std::to_string(tape.size()) +
                " entries but model has " +
                std::to_string(model.layer_count()) + " layers");
}

inline void check_class(const ModelGraph& model, std::size_t class_idx) {
  if (class_idx >= model.class_count())
    throw Error("class index " + std::to_string(class_idx) +
                " out of range (class count " +
                std::to_string(model.class_count()) + ")");
}

}  // namespace detail

// Gradient of an arbitrary upstream seed at the output of layer `last`
// propagated back to the output of layer `target` (target <= last).
inline Tensor backpropagate(const ModelGraph& model, const ActivationTape& tape,
                            std::size_t last, std::size_t target, Tensor grad) {
  detail::check_tape(model, tape);
  for (std::size_t i = last; i > target; --i) {
    grad = detail::layer_backward(model.layer(i), tape.params()[i],
                                  tape.entry(i), grad);
  }
  return grad;
}

// dS^c / d(output of `layer_name`), same shape as that output.
inline Tensor backward_to_layer(const ModelGraph& model,
                                const ActivationTape& tape,
                                std::size_t class_idx,
                                std::string_view layer_name) {
  detail::check_class(model, class_idx);
  detail::check_tape(model, tape);
  const std::size_t target = model.layer_index(layer_name);
  const std::size_t last = model.layer_count() - 1;
  Tensor seed(tape.entry(last).output.dims());
  seed[class_idx] = 1.0;
  return backpropagate(model, tape, last, target, std::move(seed));
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

// Central-difference check of backward_to_layer. Each coordinate of the
// layer's output is perturbed by +-step and the rest of the network is
// re-run. Coordinates whose perturbation flips any downstream ReLU or
// max-pool decision straddle a kink and are skipped. The error per
// coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
inline GradCheckReport grad_check(const ModelGraph& model, const Tensor& input,
                                  std::size_t class_idx,
                                  std::string_view layer_name, double step) {
  if (!(step > 0.0)) throw Error("grad_check step must be positive");
  detail::check_class(model, class_idx);
  const std::size_t target = model.layer_index(layer_name);
  const auto [scores, tape] = forward(model, input);
  const Tensor analytic = backward_to_layer(model, tape, class_idx, layer_name);
  const std::size_t n = model.layer_count();

  auto same_decisions = [&](const std::vector<TapeEntry>& replay) {
    for (std::size_t j = 0; j < replay.size(); ++j) {
      const TapeEntry& orig = tape.entry(target + 1 + j);
      if (replay[j].relu_pass != orig.relu_pass ||
          replay[j].argmax != orig.argmax)
        return false;
    }
    return true;
  };

  GradCheckReport report;
  Tensor act = tape.entry(target).output;
  for (std::size_t j = 0; j < act.size(); ++j) {
    const double saved = act[j];
    std::vector<TapeEntry> plus_rec, minus_rec;
    act[j] = saved + step;
    const Tensor plus = detail::run_layers(model, model.params(), target + 1, n,
                                           act, &plus_rec);
    act[j] = saved - step;
    const Tensor minus = detail::run_layers(model, model.params(), target + 1,
                                            n, act, &minus_rec);
    act[j] = saved;
    if (!same_decisions(plus_rec) || !same_decisions(minus_rec)) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = (plus[class_idx] - minus[class_idx]) / (2.0 * step);
    const double a = analytic[j];
    const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
    report.max_relative_error =
        std::max(report.max_relative_error, std::abs(a - numeric) / denom);
    ++report.checked;
  }
  return report;
}

}  // namespace zoomcam

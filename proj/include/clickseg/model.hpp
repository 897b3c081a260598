// Copyright 2026 The clickseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clickseg/click.hpp"
#include "clickseg/grid.hpp"
#include "clickseg/nn/kernels.hpp"

namespace clickseg {

// Raised when the optimisation produces a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Encoder-decoder topology. Level l has base_width << l channels and the
// bottleneck base_width << depth.
struct ArchConfig {
  int in_channels = 3;
  int base_width = 16;
  int depth = 4;
  int out_channels = 1;

  int width_at(int level) const { return base_width << level; }
  int divisor() const { return 1 << depth; }

  void validate() const {
    if (in_channels != 3) throw std::invalid_argument("ArchConfig: in_channels must be 3");
    if (out_channels != 1) throw std::invalid_argument("ArchConfig: out_channels must be 1");
    if (base_width < 1) throw std::invalid_argument("ArchConfig: base_width must be >= 1");
    if (depth < 1 || depth > 8) throw std::invalid_argument("ArchConfig: depth must be in [1, 8]");
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

enum class Mode { train, infer };

struct TensorSlot {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

template <typename T>
struct BlockTape {
  nn::FeatureMap<T> input, pre1, act1, pre2, act2;
  nn::NormStats<T> s1, s2;
};

// Activations kept by a train-mode forward pass for the backward pass.
template <typename T>
struct Tape {
  std::vector<BlockTape<T>> enc;
  std::vector<std::vector<unsigned char>> pool_argmax;
  BlockTape<T> bottleneck;
  std::vector<BlockTape<T>> dec;
  nn::FeatureMap<T> probs;
};

// Fully convolutional encoder-decoder: `depth` down blocks with 2x2 max
// pooling, a bottleneck, `depth` up blocks fed by 2x2 transposed convolutions
// and concatenated skip connections, and a 1x1 sigmoid head. Every block is
// conv3x3-BN-ReLU-conv3x3-BN-ReLU.
//
// Parameter order: encoder blocks (shallow to deep), bottleneck, then for each
// decoder level from deep to shallow the transposed convolution followed by
// its block, and finally the head. Within a block: conv1 weight, bn1 gamma,
// bn1 beta, conv2 weight, bn2 gamma, bn2 beta. Buffers hold running mean then
// running variance for every normalization layer in the same order.
template <typename T>
class UNet {
 public:
  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  explicit UNet(ArchConfig arch = {}) : arch_(arch) {
    arch_.validate();
    build_layout();
  }

  const ArchConfig& arch() const noexcept { return arch_; }

  std::span<T> parameters() noexcept { return params_; }
  std::span<const T> parameters() const noexcept { return params_; }
  std::span<T> buffers() noexcept { return buffers_; }
  std::span<const T> buffers() const noexcept { return buffers_; }
  const std::vector<TensorSlot>& parameter_slots() const noexcept { return param_slots_; }
  const std::vector<TensorSlot>& buffer_slots() const noexcept { return buffer_slots_; }

  // He-normal convolutions, unit BN scale, zero shifts and biases.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::fill(params_.begin(), params_.end(), T(0));
    for (const auto& slot : param_slots_) {
      const bool is_weight = slot.name.ends_with(".weight");
      const bool is_gamma = slot.name.ends_with(".gamma");
      if (is_gamma) {
        std::fill_n(params_.begin() + static_cast<std::ptrdiff_t>(slot.offset), slot.count, T(1));
      } else if (is_weight) {
        double fan_in = 1.0;
        if (slot.shape.size() == 4 && slot.name.find("up") != std::string::npos) {
          fan_in = slot.shape[0];
        } else {
          for (std::size_t i = 1; i < slot.shape.size(); ++i) fan_in *= slot.shape[i];
        }
        const bool head = slot.name.starts_with("head");
        std::normal_distribution<double> dist(0.0, std::sqrt((head ? 1.0 : 2.0) / fan_in));
        for (std::size_t i = 0; i < slot.count; ++i) params_[slot.offset + i] = T(dist(rng));
      }
    }
    for (std::size_t b = 0; b < bn_count_; ++b) {
      const auto& var_slot = buffer_slots_[2 * b + 1];
      const auto& mean_slot = buffer_slots_[2 * b];
      std::fill_n(buffers_.begin() + static_cast<std::ptrdiff_t>(mean_slot.offset), mean_slot.count, T(0));
      std::fill_n(buffers_.begin() + static_cast<std::ptrdiff_t>(var_slot.offset), var_slot.count, T(1));
    }
  }

  template <typename U>
  UNet<U> cast() const {
    UNet<U> out(arch_);
    std::transform(params_.begin(), params_.end(), out.parameters().begin(), [](T v) { return U(v); });
    std::transform(buffers_.begin(), buffers_.end(), out.buffers().begin(), [](T v) { return U(v); });
    return out;
  }

  void check_input(const nn::FeatureMap<T>& x) const {
    if (x.c != arch_.in_channels) throw std::invalid_argument("UNet: input must have 3 channels");
    if (x.n < 1) throw std::invalid_argument("UNet: empty batch");
    if (x.h % arch_.divisor() != 0 || x.w % arch_.divisor() != 0) {
      throw std::invalid_argument("UNet: input " + std::to_string(x.w) + "x" + std::to_string(x.h) +
                                  " is not divisible by " + std::to_string(arch_.divisor()));
    }
  }

  // Inference with running statistics. Safe to call concurrently.
  nn::FeatureMap<T> infer(nn::FeatureMap<T> x) const {
    check_input(x);
    std::vector<nn::FeatureMap<T>> skips;
    skips.reserve(static_cast<std::size_t>(arch_.depth));
    for (int l = 0; l < arch_.depth; ++l) {
      x = infer_block(enc_[l], x);
      auto pooled = nn::maxpool2x2_forward(x, nullptr);
      skips.push_back(std::move(x));
      x = std::move(pooled);
    }
    x = infer_block(bottleneck_, x);
    for (int l = arch_.depth - 1; l >= 0; --l) {
      auto up = nn::upconv2x2_forward(x, span(up_[l].weight), span(up_[l].bias), up_[l].cout);
      x = infer_block(dec_[l], nn::concat_channels(skips[l], up));
    }
    return nn::head_forward(x, span(head_weight_), params_[head_bias_.offset]);
  }

  // Training-mode forward with batch statistics. Records activations in
  // `tape`; updates running statistics when requested.
  const nn::FeatureMap<T>& forward_train(nn::FeatureMap<T> x, Tape<T>& tape, bool update_running_stats) {
    check_input(x);
    tape.enc.resize(static_cast<std::size_t>(arch_.depth));
    tape.dec.resize(static_cast<std::size_t>(arch_.depth));
    tape.pool_argmax.resize(static_cast<std::size_t>(arch_.depth));
    for (int l = 0; l < arch_.depth; ++l) {
      const auto& out = train_block(enc_[l], std::move(x), tape.enc[l], update_running_stats);
      x = nn::maxpool2x2_forward(out, &tape.pool_argmax[l]);
    }
    const nn::FeatureMap<T>* y = &train_block(bottleneck_, std::move(x), tape.bottleneck, update_running_stats);
    for (int l = arch_.depth - 1; l >= 0; --l) {
      auto up = nn::upconv2x2_forward(*y, span(up_[l].weight), span(up_[l].bias), up_[l].cout);
      y = &train_block(dec_[l], nn::concat_channels(tape.enc[l].act2, up), tape.dec[l], update_running_stats);
    }
    tape.probs = nn::head_forward(*y, span(head_weight_), params_[head_bias_.offset]);
    return tape.probs;
  }

  // Accumulates d(loss)/d(parameters) into grads given d(loss)/d(probs).
  void backward(const Tape<T>& tape, const nn::FeatureMap<T>& dprobs, std::span<T> grads) const {
    if (grads.size() != params_.size()) throw std::invalid_argument("UNet::backward: gradient size mismatch");
    T dbias = T(0);
    auto d = nn::head_backward(tape.dec[0].act2, span(head_weight_), tape.probs, dprobs,
                               grads.subspan(head_weight_.offset, head_weight_.count), dbias);
    grads[head_bias_.offset] += dbias;

    std::vector<nn::FeatureMap<T>> dskip(static_cast<std::size_t>(arch_.depth));
    for (int l = 0; l < arch_.depth; ++l) {
      auto dcat = backward_block(dec_[l], tape.dec[l], std::move(d), grads, true);
      nn::FeatureMap<T> dup;
      nn::split_channels(dcat, arch_.width_at(l), dskip[l], dup);
      const auto& up_in = l == arch_.depth - 1 ? tape.bottleneck.act2 : tape.dec[l + 1].act2;
      d = nn::upconv2x2_backward(up_in, span(up_[l].weight), dup, grads.subspan(up_[l].weight.offset, up_[l].weight.count),
                                 grads.subspan(up_[l].bias.offset, up_[l].bias.count));
    }
    d = backward_block(bottleneck_, tape.bottleneck, std::move(d), grads, true);
    for (int l = arch_.depth - 1; l >= 0; --l) {
      const auto& out = tape.enc[l].act2;
      auto denc = nn::maxpool2x2_backward(d, tape.pool_argmax[l], out.h, out.w);
      for (std::size_t i = 0; i < denc.data.size(); ++i) denc.data[i] += dskip[l].data[i];
      d = backward_block(enc_[l], tape.enc[l], std::move(denc), grads, l > 0);
    }
  }

 private:
  struct Block {
    int cin = 0, cout = 0;
    TensorSlot conv1, gamma1, beta1, conv2, gamma2, beta2;
    TensorSlot mean1, var1, mean2, var2;
  };
  struct Up {
    int cin = 0, cout = 0;
    TensorSlot weight, bias;
  };

  std::span<const T> span(const TensorSlot& s) const {
    return std::span<const T>(params_).subspan(s.offset, s.count);
  }
  std::span<const T> buffer_span(const TensorSlot& s) const {
    return std::span<const T>(buffers_).subspan(s.offset, s.count);
  }

  TensorSlot add_param(const std::string& name, std::vector<int> shape) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    TensorSlot s{name, std::move(shape), param_total_, count};
    param_total_ += count;
    param_slots_.push_back(s);
    return s;
  }
  TensorSlot add_buffer(const std::string& name, int channels) {
    TensorSlot s{name, {channels}, buffer_total_, static_cast<std::size_t>(channels)};
    buffer_total_ += s.count;
    buffer_slots_.push_back(s);
    return s;
  }

  Block make_block(const std::string& name, int cin, int cout) {
    Block b;
    b.cin = cin;
    b.cout = cout;
    b.conv1 = add_param(name + ".conv1.weight", {cout, cin, 3, 3});
    b.gamma1 = add_param(name + ".bn1.gamma", {cout});
    b.beta1 = add_param(name + ".bn1.beta", {cout});
    b.conv2 = add_param(name + ".conv2.weight", {cout, cout, 3, 3});
    b.gamma2 = add_param(name + ".bn2.gamma", {cout});
    b.beta2 = add_param(name + ".bn2.beta", {cout});
    b.mean1 = add_buffer(name + ".bn1.running_mean", cout);
    b.var1 = add_buffer(name + ".bn1.running_var", cout);
    b.mean2 = add_buffer(name + ".bn2.running_mean", cout);
    b.var2 = add_buffer(name + ".bn2.running_var", cout);
    bn_count_ += 2;
    return b;
  }

  void build_layout() {
    int cin = arch_.in_channels;
    for (int l = 0; l < arch_.depth; ++l) {
      enc_.push_back(make_block("enc" + std::to_string(l), cin, arch_.width_at(l)));
      cin = arch_.width_at(l);
    }
    bottleneck_ = make_block("bottleneck", cin, arch_.width_at(arch_.depth));
    up_.resize(static_cast<std::size_t>(arch_.depth));
    dec_.resize(static_cast<std::size_t>(arch_.depth));
    for (int l = arch_.depth - 1; l >= 0; --l) {
      const int deep = arch_.width_at(l + 1), width = arch_.width_at(l);
      Up u;
      u.cin = deep;
      u.cout = width;
      u.weight = add_param("up" + std::to_string(l) + ".weight", {deep, width, 2, 2});
      u.bias = add_param("up" + std::to_string(l) + ".bias", {width});
      up_[l] = u;
      dec_[l] = make_block("dec" + std::to_string(l), 2 * width, width);
    }
    head_weight_ = add_param("head.weight", {1, arch_.base_width, 1, 1});
    head_bias_ = add_param("head.bias", {1});
    params_.assign(param_total_, T(0));
    buffers_.assign(buffer_total_, T(0));
  }

  nn::FeatureMap<T> infer_block(const Block& b, const nn::FeatureMap<T>& x) const {
    auto y = nn::conv3x3_forward(x, span(b.conv1), b.cout);
    nn::batchnorm_relu_infer(y, span(b.gamma1), span(b.beta1), buffer_span(b.mean1), buffer_span(b.var1), kBnEps);
    auto z = nn::conv3x3_forward(y, span(b.conv2), b.cout);
    nn::batchnorm_relu_infer(z, span(b.gamma2), span(b.beta2), buffer_span(b.mean2), buffer_span(b.var2), kBnEps);
    return z;
  }

  void update_running(const TensorSlot& mean, const TensorSlot& var, const nn::NormStats<T>& s, std::size_t m) {
    const double unbias = m > 1 ? double(m) / double(m - 1) : 1.0;
    for (std::size_t c = 0; c < mean.count; ++c) {
      T& rm = buffers_[mean.offset + c];
      T& rv = buffers_[var.offset + c];
      rm = T((1.0 - kBnMomentum) * double(rm) + kBnMomentum * double(s.mean[c]));
      rv = T((1.0 - kBnMomentum) * double(rv) + kBnMomentum * double(s.var[c]) * unbias);
    }
  }

  const nn::FeatureMap<T>& train_block(const Block& b, nn::FeatureMap<T> x, BlockTape<T>& t, bool update) {
    t.input = std::move(x);
    t.pre1 = nn::conv3x3_forward(t.input, span(b.conv1), b.cout);
    t.act1 = t.pre1;
    nn::batchnorm_relu_train(t.act1, span(b.gamma1), span(b.beta1), kBnEps, t.s1);
    t.pre2 = nn::conv3x3_forward(t.act1, span(b.conv2), b.cout);
    t.act2 = t.pre2;
    nn::batchnorm_relu_train(t.act2, span(b.gamma2), span(b.beta2), kBnEps, t.s2);
    if (update) {
      update_running(b.mean1, b.var1, t.s1, t.pre1.row());
      update_running(b.mean2, b.var2, t.s2, t.pre2.row());
    }
    return t.act2;
  }

  nn::FeatureMap<T> backward_block(const Block& b, const BlockTape<T>& t, nn::FeatureMap<T> dout,
                                   std::span<T> grads, bool need_input_grad) const {
    auto g = [&](const TensorSlot& s) { return grads.subspan(s.offset, s.count); };
    nn::batchnorm_relu_backward(t.pre2, t.act2, t.s2, span(b.gamma2), dout, g(b.gamma2), g(b.beta2));
    nn::FeatureMap<T> dact1;
    nn::conv3x3_backward(t.act1, span(b.conv2), dout, g(b.conv2), &dact1);
    nn::batchnorm_relu_backward(t.pre1, t.act1, t.s1, span(b.gamma1), dact1, g(b.gamma1), g(b.beta1));
    nn::FeatureMap<T> dx;
    nn::conv3x3_backward(t.input, span(b.conv1), dact1, g(b.conv1), need_input_grad ? &dx : nullptr);
    return dx;
  }

  ArchConfig arch_;
  std::vector<TensorSlot> param_slots_;
  std::vector<TensorSlot> buffer_slots_;
  std::size_t param_total_ = 0;
  std::size_t buffer_total_ = 0;
  std::size_t bn_count_ = 0;
  std::vector<Block> enc_;
  Block bottleneck_;
  std::vector<Up> up_;
  std::vector<Block> dec_;
  TensorSlot head_weight_, head_bias_;
  std::vector<T> params_;
  std::vector<T> buffers_;
};

// Network input: normalized image plus foreground and background guidance.
struct InputStack {
  Grid2D image;
  Grid2D foreground;
  Grid2D background;
};

inline constexpr double kClickSigma = 2.0;

inline InputStack make_input(const Grid2D& image, std::span<const Click> clicks, double sigma = kClickSigma) {
  auto [fg, bg] = stamp_guidance_pair(clicks, image.width(), image.height(), sigma);
  return InputStack{image, std::move(fg), std::move(bg)};
}

template <typename T>
nn::FeatureMap<T> pack_inputs(std::span<const InputStack> inputs) {
  if (inputs.empty()) throw std::invalid_argument("pack_inputs: empty batch");
  const int w = inputs.front().image.width();
  const int h = inputs.front().image.height();
  nn::FeatureMap<T> x(3, static_cast<int>(inputs.size()), h, w);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const InputStack& in = inputs[i];
    const Grid2D* channels[3] = {&in.image, &in.foreground, &in.background};
    for (int c = 0; c < 3; ++c) {
      if (channels[c]->width() != w || channels[c]->height() != h) {
        throw std::invalid_argument("pack_inputs: inconsistent dimensions in batch");
      }
      const auto v = channels[c]->values();
      std::transform(v.begin(), v.end(), x.plane_ptr(c, static_cast<int>(i)), [](float f) { return T(f); });
    }
  }
  return x;
}

template <typename T>
std::vector<Grid2D> unpack_probs(const nn::FeatureMap<T>& probs, Spacing spacing = {}) {
  std::vector<Grid2D> out;
  out.reserve(static_cast<std::size_t>(probs.n));
  for (int i = 0; i < probs.n; ++i) {
    Grid2D g(probs.w, probs.h, spacing);
    const T* p = probs.plane_ptr(0, i);
    std::transform(p, p + probs.plane(), g.values().begin(), [](T v) { return static_cast<float>(v); });
    out.push_back(std::move(g));
  }
  return out;
}

// Infer-mode prediction for a batch of equally sized inputs.
inline std::vector<Grid2D> predict(const UNet<float>& net, std::span<const InputStack> inputs) {
  auto probs = net.infer(pack_inputs<float>(inputs));
  return unpack_probs(probs, inputs.front().image.spacing());
}

inline Grid2D predict(const UNet<float>& net, const InputStack& input) {
  return predict(net, std::span<const InputStack>(&input, 1)).front();
}

// Soft Dice 2*sum(g*p) / (sum(g^2) + sum(p^2)). Undefined when both are zero.
inline double dice_score(std::span<const float> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("dice_score: dimension mismatch");
  double inter = 0.0, denom = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = pred[i];
    const double g = gt[i];
    inter += g * p;
    denom += g * g + p * p;
  }
  if (denom == 0.0) throw std::domain_error("dice_score: prediction and ground truth are both empty");
  return 2.0 * inter / denom;
}

inline double dice_score(const Grid2D& pred, const BinaryMask& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw std::invalid_argument("dice_score: dimension mismatch");
  }
  return dice_score(pred.values(), gt.bits());
}

template <typename T>
struct DiceLoss {
  double loss = 0.0;
  std::vector<double> dice;   // per image
  nn::FeatureMap<T> dprobs;   // d(loss)/d(probs)
};

// Mean over the batch of (1 - Dice) with its gradient w.r.t. probabilities.
template <typename T>
DiceLoss<T> dice_loss(const nn::FeatureMap<T>& probs, std::span<const BinaryMask> gts) {
  if (static_cast<std::size_t>(probs.n) != gts.size() || gts.empty()) {
    throw std::invalid_argument("dice_loss: batch size mismatch");
  }
  DiceLoss<T> out;
  out.dprobs = nn::FeatureMap<T>(1, probs.n, probs.h, probs.w);
  const double n = double(probs.n);
  for (int i = 0; i < probs.n; ++i) {
    const BinaryMask& gt = gts[static_cast<std::size_t>(i)];
    if (gt.width() != probs.w || gt.height() != probs.h) throw std::invalid_argument("dice_loss: dimension mismatch");
    if (!gt.any()) throw std::invalid_argument("dice_loss: empty ground truth in batch");
    const T* p = probs.plane_ptr(0, i);
    const auto g = gt.bits();
    double inter = 0.0, denom = 0.0;
    for (std::size_t k = 0; k < probs.plane(); ++k) {
      inter += double(g[k]) * double(p[k]);
      denom += double(g[k]) + double(p[k]) * double(p[k]);
    }
    const double dice = 2.0 * inter / denom;
    out.dice.push_back(dice);
    out.loss += (1.0 - dice) / n;
    T* dp = out.dprobs.plane_ptr(0, i);
    const double scale = -2.0 / (n * denom * denom);
    for (std::size_t k = 0; k < probs.plane(); ++k) {
      dp[k] = T(scale * (double(g[k]) * denom - 2.0 * inter * double(p[k])));
    }
  }
  return out;
}

inline double dice_loss(std::span<const Grid2D> preds, std::span<const BinaryMask> gts) {
  if (preds.size() != gts.size() || preds.empty()) throw std::invalid_argument("dice_loss: batch size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!gts[i].any()) throw std::invalid_argument("dice_loss: empty ground truth in batch");
    loss += (1.0 - dice_score(preds[i], gts[i])) / double(preds.size());
  }
  return loss;
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Everything needed to continue training bit-for-bit.
struct ModelState {
  UNet<float> net;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
  std::int64_t step_count = 0;
  std::uint64_t rng_seed = 4242;
  std::int32_t epochs_completed = 0;

  static ModelState create(const ArchConfig& arch, std::uint64_t seed) {
    ModelState s{UNet<float>(arch), {}, {}, 0, seed, 0};
    s.net.initialize(seed);
    s.adam_m.assign(s.net.parameters().size(), 0.0f);
    s.adam_v.assign(s.net.parameters().size(), 0.0f);
    return s;
  }
};

inline void adam_update(std::span<float> params, std::span<const float> grads, std::span<float> m,
                        std::span<float> v, std::int64_t step, const AdamConfig& cfg) {
  const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double mi = cfg.beta1 * double(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * double(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = float(mi);
    v[i] = float(vi);
    params[i] = float(double(params[i]) - cfg.learning_rate * (mi / c1) / (std::sqrt(vi / c2) + cfg.epsilon));
  }
}

// Forward of a single input. Train mode uses batch statistics and updates the
// running statistics.
inline Grid2D forward(ModelState& state, const InputStack& input, Mode mode) {
  if (mode == Mode::infer) return predict(state.net, input);
  Tape<float> tape;
  const auto& probs = state.net.forward_train(pack_inputs<float>(std::span<const InputStack>(&input, 1)), tape, true);
  return unpack_probs(probs, input.image.spacing()).front();
}

struct TrainingExample {
  InputStack input;
  BinaryMask gt;
};

// One supervised Adam step on the batch; returns the Dice loss before the update.
inline double train_step(ModelState& state, std::span<const TrainingExample> batch, const AdamConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<InputStack> inputs;
  std::vector<BinaryMask> gts;
  inputs.reserve(batch.size());
  gts.reserve(batch.size());
  for (const auto& ex : batch) {
    inputs.push_back(ex.input);
    gts.push_back(ex.gt);
  }
  Tape<float> tape;
  const auto& probs = state.net.forward_train(pack_inputs<float>(inputs), tape, true);
  auto loss = dice_loss<float>(probs, gts);
  if (!std::isfinite(loss.loss)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss " << loss.loss << " at step " << state.step_count + 1 << " (dice:";
    for (double d : loss.dice) msg << ' ' << d;
    msg << ')';
    throw NumericError(msg.str());
  }
  std::vector<float> grads(state.net.parameters().size(), 0.0f);
  state.net.backward(tape, loss.dprobs, grads);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("train_step: non-finite gradient for parameter index " + std::to_string(i) + " at step " +
                         std::to_string(state.step_count + 1));
    }
  }
  ++state.step_count;
  adam_update(state.net.parameters(), grads, state.adam_m, state.adam_v, state.step_count, cfg);
  return loss.loss;
}

}  // namespace clickseg

#pragma once

// Quantization-aware layers: a linear layer that fake-quantizes its weight
// and input activation on the forward pass (straight-through gradients), a
// small pre-norm transformer assembled from such layers, tag-based selection
// of trainable subsets, and activation observers for static calibration.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fqat/quant.hpp"
#include "fqat/tensor.hpp"

namespace fqat::layers {

enum class LayerTag { FF, Attn, Other };

// Which layers receive gradient updates. TF covers the transformer proper,
// i.e. the union of FF and Attn; All additionally includes Other-tagged
// layers (the output head).
enum class SelectionMode { FF, Attn, TF, All };

const char* tag_name(LayerTag t);
const char* selection_name(SelectionMode m);
SelectionMode selection_from_name(const std::string& name);
bool selected(SelectionMode mode, LayerTag tag);

// Differentiable fake-quantization. Forward emits quantize-then-dequantize
// values; backward passes the incoming gradient through unchanged wherever
// the rounded code stayed inside the representable range and blocks it where
// clamping saturated (clipped straight-through estimator).
engine::Tensor fake_quant_node(const engine::Tensor& x,
                               const quant::QuantSpec& spec);

// Accumulates raw (pre-quantization) activations seen by one layer.
struct ActivationObserver {
  std::vector<float> collected;

  void add(std::span<const float> values) {
    collected.insert(collected.end(), values.begin(), values.end());
  }
  void clear() { collected.clear(); }
};

enum class ForwardMode {
  Quantized,    // fake-quantize weights and input activations
  Full,         // plain float path (reference / calibration)
  FullObserve,  // plain float path, recording inputs into observers
};

class QuantLinear {
 public:
  QuantLinear() = default;
  // weight is [in, out]; bias is [out] (pass an undefined tensor for none).
  QuantLinear(std::string name, LayerTag tag, engine::Tensor weight,
              engine::Tensor bias);

  engine::Tensor forward(const engine::Tensor& x, ForwardMode mode) const;

  const std::string& name() const { return name_; }
  LayerTag tag() const { return tag_; }
  engine::Tensor& weight() { return weight_; }
  const engine::Tensor& weight() const { return weight_; }
  engine::Tensor& bias() { return bias_; }
  const engine::Tensor& bias() const { return bias_; }
  bool has_bias() const { return bias_.defined(); }
  std::size_t in_features() const { return weight_.shape()[0]; }
  std::size_t out_features() const { return weight_.shape()[1]; }

  quant::QuantSpec weight_spec;  // Narrow, dynamic, per-tensor by default
  quant::QuantSpec act_spec;     // Wide, dynamic, 8-bit by default

  std::shared_ptr<ActivationObserver> observer;  // set while calibrating

 private:
  std::string name_;
  LayerTag tag_ = LayerTag::Other;
  engine::Tensor weight_;
  engine::Tensor bias_;
};

struct ModelConfig {
  std::size_t width = 64;
  std::size_t blocks = 2;
  std::size_t ff_mult = 4;
  double layernorm_eps = 1e-5;

  bool operator==(const ModelConfig&) const = default;
};

// Two-block single-head pre-norm transformer over [positions, width] inputs
// with a width-preserving output projection. Every linear is quantization
// aware; attention logits, softmax and layernorms stay in float.
class ToyModel {
 public:
  ToyModel() = default;

  static ToyModel random(const ModelConfig& cfg, std::uint64_t seed);
  ToyModel clone() const;

  engine::Tensor forward(const engine::Tensor& x,
                         ForwardMode mode = ForwardMode::Quantized) const;

  const ModelConfig& config() const { return cfg_; }

  // Stable manifest order: block0 attn q/k/v/out, block0 ff in/out,
  // block1 ..., head.
  std::vector<QuantLinear*> linears();
  std::vector<const QuantLinear*> linears() const;
  QuantLinear* find(const std::string& name);

  void set_weight_bits(double bits);
  void set_act_bits(double bits);
  void set_act_bits(LayerTag tag, double bits);
  // Disables activation fake-quantization entirely (weight-only studies).
  void set_act_quant_enabled(bool enabled);
  bool act_quant_enabled() const { return act_quant_enabled_; }

  void select_trainable(SelectionMode mode);
  SelectionMode selection() const { return selection_; }
  std::vector<engine::Tensor> trainable_params();
  std::vector<engine::Tensor> all_params();

  struct Observation {
    std::string name;
    LayerTag tag;
    quant::CalibrationStats stats;
  };

  void enable_observers();
  void clear_observers();
  // Full-precision pass that records every layer's input activations.
  void observe(const engine::Tensor& x);
  // Per-layer stats over everything observed so far (throws if observers are
  // off or empty).
  std::vector<Observation> collect_observations(double k_sigma) const;
  // Same pooling but grouped by tag.
  std::vector<Observation> collect_tag_observations(double k_sigma) const;
  // Freezes each layer's activation quantizer to the calibrated affine
  // parameters (mode becomes Static).
  void install_static_activations(const std::vector<Observation>& obs);

 private:
  struct Block {
    QuantLinear q, k, v, out;  // attention projections
    QuantLinear ff_in, ff_out;
  };

  ModelConfig cfg_;
  std::vector<Block> blocks_;
  QuantLinear head_;
  SelectionMode selection_ = SelectionMode::All;
  bool act_quant_enabled_ = true;

  engine::Tensor apply_linear(const QuantLinear& lin, const engine::Tensor& x,
                              ForwardMode mode) const;
};

}  // namespace fqat::layers

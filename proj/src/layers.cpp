#include "fqat/layers.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace fqat::layers {

const char* tag_name(LayerTag t) {
  switch (t) {
    case LayerTag::FF: return "ff";
    case LayerTag::Attn: return "attn";
    case LayerTag::Other: return "other";
  }
  return "?";
}

const char* selection_name(SelectionMode m) {
  switch (m) {
    case SelectionMode::FF: return "ff";
    case SelectionMode::Attn: return "attn";
    case SelectionMode::TF: return "tf";
    case SelectionMode::All: return "all";
  }
  return "?";
}

SelectionMode selection_from_name(const std::string& name) {
  if (name == "ff") return SelectionMode::FF;
  if (name == "attn") return SelectionMode::Attn;
  if (name == "tf") return SelectionMode::TF;
  if (name == "all") return SelectionMode::All;
  throw std::invalid_argument("unknown layer selection '" + name +
                              "' (expected ff|attn|tf|all)");
}

bool selected(SelectionMode mode, LayerTag tag) {
  switch (mode) {
    case SelectionMode::FF: return tag == LayerTag::FF;
    case SelectionMode::Attn: return tag == LayerTag::Attn;
    case SelectionMode::TF: return tag == LayerTag::FF || tag == LayerTag::Attn;
    case SelectionMode::All: return true;
  }
  return false;
}

engine::Tensor fake_quant_node(const engine::Tensor& x,
                               const quant::QuantSpec& spec) {
  auto r = quant::fake_quant_ste(x.values(), x.shape(), spec);
  auto mask = std::make_shared<std::vector<std::uint8_t>>(std::move(r.in_range));
  return engine::make_op(
      "fake_quant", {x}, std::move(r.values), x.shape(), [mask](engine::Node& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if ((*mask)[i]) p.grad[i] += self.grad[i];
        }
      });
}

QuantLinear::QuantLinear(std::string name, LayerTag tag, engine::Tensor weight,
                         engine::Tensor bias)
    : name_(std::move(name)), tag_(tag), weight_(std::move(weight)),
      bias_(std::move(bias)) {
  if (weight_.shape().size() != 2) {
    throw std::invalid_argument("linear weight must be 2-D [in, out]");
  }
  if (bias_.defined() && (bias_.shape().size() != 1 ||
                          bias_.shape()[0] != weight_.shape()[1])) {
    throw std::invalid_argument("linear bias must be 1-D [out]");
  }
  weight_spec.form = quant::RangeForm::Narrow;
  weight_spec.bits = 8.0;
  act_spec.form = quant::RangeForm::Wide;
  act_spec.bits = 8.0;
}

engine::Tensor QuantLinear::forward(const engine::Tensor& x,
                                    ForwardMode mode) const {
  if (mode == ForwardMode::FullObserve && observer) {
    observer->add(x.values());
  }
  engine::Tensor y;
  if (mode == ForwardMode::Quantized) {
    const engine::Tensor xq = fake_quant_node(x, act_spec);
    const engine::Tensor wq = fake_quant_node(weight_, weight_spec);
    y = engine::matmul(xq, wq);
  } else {
    y = engine::matmul(x, weight_);
  }
  return bias_.defined() ? engine::add(y, bias_) : y;
}

namespace {

engine::Tensor random_weight(std::size_t in, std::size_t out,
                             std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  const double scale = 1.0 / std::sqrt(double(in));
  std::vector<float> w(in * out);
  for (auto& v : w) v = float(dist(rng) * scale);
  return engine::Tensor::from_data(std::move(w), {in, out}, true);
}

QuantLinear make_linear(const std::string& name, LayerTag tag, std::size_t in,
                        std::size_t out, std::mt19937_64& rng) {
  return QuantLinear(name, tag, random_weight(in, out, rng),
                     engine::Tensor::zeros({out}, true));
}

QuantLinear clone_linear(const QuantLinear& src) {
  engine::Tensor w = engine::Tensor::from_data(
      src.weight().values(), src.weight().shape(), src.weight().requires_grad());
  engine::Tensor b;
  if (src.has_bias()) {
    b = engine::Tensor::from_data(src.bias().values(), src.bias().shape(),
                                  src.bias().requires_grad());
  }
  QuantLinear out(src.name(), src.tag(), std::move(w), std::move(b));
  out.weight_spec = src.weight_spec;
  out.act_spec = src.act_spec;
  return out;
}

}  // namespace

ToyModel ToyModel::random(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.width == 0 || cfg.blocks == 0 || cfg.ff_mult == 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  std::mt19937_64 rng(seed);
  ToyModel m;
  m.cfg_ = cfg;
  const std::size_t d = cfg.width;
  const std::size_t h = cfg.width * cfg.ff_mult;
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    Block blk;
    blk.q = make_linear(prefix + ".attn.q", LayerTag::Attn, d, d, rng);
    blk.k = make_linear(prefix + ".attn.k", LayerTag::Attn, d, d, rng);
    blk.v = make_linear(prefix + ".attn.v", LayerTag::Attn, d, d, rng);
    blk.out = make_linear(prefix + ".attn.out", LayerTag::Attn, d, d, rng);
    blk.ff_in = make_linear(prefix + ".ff.in", LayerTag::FF, d, h, rng);
    blk.ff_out = make_linear(prefix + ".ff.out", LayerTag::FF, h, d, rng);
    m.blocks_.push_back(std::move(blk));
  }
  m.head_ = make_linear("head", LayerTag::Other, d, d, rng);
  return m;
}

ToyModel ToyModel::clone() const {
  ToyModel m;
  m.cfg_ = cfg_;
  m.selection_ = selection_;
  m.act_quant_enabled_ = act_quant_enabled_;
  for (const auto& b : blocks_) {
    Block blk;
    blk.q = clone_linear(b.q);
    blk.k = clone_linear(b.k);
    blk.v = clone_linear(b.v);
    blk.out = clone_linear(b.out);
    blk.ff_in = clone_linear(b.ff_in);
    blk.ff_out = clone_linear(b.ff_out);
    m.blocks_.push_back(std::move(blk));
  }
  m.head_ = clone_linear(head_);
  return m;
}

engine::Tensor ToyModel::apply_linear(const QuantLinear& lin,
                                      const engine::Tensor& x,
                                      ForwardMode mode) const {
  if (mode == ForwardMode::Quantized && !act_quant_enabled_) {
    // Weight-only quantization: quantize W, keep the activation in float.
    const engine::Tensor wq = fake_quant_node(lin.weight(), lin.weight_spec);
    engine::Tensor y = engine::matmul(x, wq);
    return lin.has_bias() ? engine::add(y, lin.bias()) : y;
  }
  return lin.forward(x, mode);
}

engine::Tensor ToyModel::forward(const engine::Tensor& x,
                                 ForwardMode mode) const {
  if (x.shape().size() != 2 || x.shape()[1] != cfg_.width) {
    throw std::invalid_argument("model input must be [positions, width]");
  }
  const double att_scale = 1.0 / std::sqrt(double(cfg_.width));
  engine::Tensor h = x;
  for (const auto& blk : blocks_) {
    engine::Tensor a = engine::layernorm(h, cfg_.layernorm_eps);
    engine::Tensor q = apply_linear(blk.q, a, mode);
    engine::Tensor k = apply_linear(blk.k, a, mode);
    engine::Tensor v = apply_linear(blk.v, a, mode);
    engine::Tensor att = engine::softmax(
        engine::scalar_mul(engine::matmul(q, engine::transpose(k)), att_scale));
    h = engine::add(h, apply_linear(blk.out, engine::matmul(att, v), mode));

    engine::Tensor f = engine::layernorm(h, cfg_.layernorm_eps);
    f = apply_linear(blk.ff_out, engine::gelu(apply_linear(blk.ff_in, f, mode)),
                     mode);
    h = engine::add(h, f);
  }
  return apply_linear(head_, engine::layernorm(h, cfg_.layernorm_eps), mode);
}

std::vector<QuantLinear*> ToyModel::linears() {
  std::vector<QuantLinear*> out;
  for (auto& b : blocks_) {
    out.push_back(&b.q);
    out.push_back(&b.k);
    out.push_back(&b.v);
    out.push_back(&b.out);
    out.push_back(&b.ff_in);
    out.push_back(&b.ff_out);
  }
  out.push_back(&head_);
  return out;
}

std::vector<const QuantLinear*> ToyModel::linears() const {
  std::vector<const QuantLinear*> out;
  for (const auto& b : blocks_) {
    out.push_back(&b.q);
    out.push_back(&b.k);
    out.push_back(&b.v);
    out.push_back(&b.out);
    out.push_back(&b.ff_in);
    out.push_back(&b.ff_out);
  }
  out.push_back(&head_);
  return out;
}

QuantLinear* ToyModel::find(const std::string& name) {
  for (auto* lin : linears()) {
    if (lin->name() == name) return lin;
  }
  return nullptr;
}

void ToyModel::set_weight_bits(double bits) {
  for (auto* lin : linears()) {
    lin->weight_spec.bits = bits;
    quant::validate(lin->weight_spec);
  }
}

void ToyModel::set_act_bits(double bits) {
  for (auto* lin : linears()) {
    lin->act_spec.bits = bits;
    quant::validate(lin->act_spec);
  }
}

void ToyModel::set_act_bits(LayerTag tag, double bits) {
  for (auto* lin : linears()) {
    if (lin->tag() == tag) {
      lin->act_spec.bits = bits;
      quant::validate(lin->act_spec);
    }
  }
}

void ToyModel::set_act_quant_enabled(bool enabled) { act_quant_enabled_ = enabled; }

void ToyModel::select_trainable(SelectionMode mode) {
  selection_ = mode;
  for (auto* lin : linears()) {
    const bool on = selected(mode, lin->tag());
    lin->weight().set_requires_grad(on);
    if (lin->has_bias()) lin->bias().set_requires_grad(on);
  }
}

std::vector<engine::Tensor> ToyModel::trainable_params() {
  std::vector<engine::Tensor> out;
  for (auto* lin : linears()) {
    if (lin->weight().requires_grad()) out.push_back(lin->weight());
    if (lin->has_bias() && lin->bias().requires_grad()) out.push_back(lin->bias());
  }
  return out;
}

std::vector<engine::Tensor> ToyModel::all_params() {
  std::vector<engine::Tensor> out;
  for (auto* lin : linears()) {
    out.push_back(lin->weight());
    if (lin->has_bias()) out.push_back(lin->bias());
  }
  return out;
}

void ToyModel::enable_observers() {
  for (auto* lin : linears()) {
    if (!lin->observer) lin->observer = std::make_shared<ActivationObserver>();
  }
}

void ToyModel::clear_observers() {
  for (auto* lin : linears()) lin->observer.reset();
}

void ToyModel::observe(const engine::Tensor& x) {
  forward(x, ForwardMode::FullObserve);
}

std::vector<ToyModel::Observation> ToyModel::collect_observations(
    double k_sigma) const {
  std::vector<Observation> out;
  for (const auto* lin : linears()) {
    if (!lin->observer || lin->observer->collected.empty()) {
      throw std::invalid_argument("layer '" + lin->name() +
                                  "' has no recorded activations; run observe() first");
    }
    out.push_back({lin->name(), lin->tag(),
                   quant::calibrate(std::span<const float>(lin->observer->collected),
                                    k_sigma)});
  }
  return out;
}

std::vector<ToyModel::Observation> ToyModel::collect_tag_observations(
    double k_sigma) const {
  std::vector<Observation> out;
  for (LayerTag tag : {LayerTag::FF, LayerTag::Attn, LayerTag::Other}) {
    std::vector<float> pooled;
    for (const auto* lin : linears()) {
      if (lin->tag() != tag) continue;
      if (!lin->observer || lin->observer->collected.empty()) {
        throw std::invalid_argument("layer '" + lin->name() +
                                    "' has no recorded activations; run observe() first");
      }
      pooled.insert(pooled.end(), lin->observer->collected.begin(),
                    lin->observer->collected.end());
    }
    if (!pooled.empty()) {
      out.push_back({tag_name(tag), tag,
                     quant::calibrate(std::span<const float>(pooled), k_sigma)});
    }
  }
  return out;
}

void ToyModel::install_static_activations(const std::vector<Observation>& obs) {
  for (const auto& o : obs) {
    QuantLinear* lin = find(o.name);
    if (!lin) {
      throw std::invalid_argument("observation for unknown layer '" + o.name + "'");
    }
    lin->act_spec.mode = quant::Mode::Static;
    lin->act_spec.static_params = quant::static_params_for(o.stats, lin->act_spec);
    quant::validate(lin->act_spec);
  }
}

}  // namespace fqat::layers

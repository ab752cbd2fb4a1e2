#include "fqat/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace fqat::layers {

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  if (s.size() > 0xffff) throw std::runtime_error("layer name too long");
  put<std::uint16_t>(os, std::uint16_t(s.size()));
  os.write(s.data(), std::streamsize(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint16_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("checkpoint truncated");
  return s;
}

void put_spec(std::ostream& os, const quant::QuantSpec& spec) {
  put<double>(os, spec.bits);
  put<std::uint8_t>(os, std::uint8_t(spec.form));
  put<std::uint8_t>(os, std::uint8_t(spec.rounding));
  put<std::uint8_t>(os, std::uint8_t(spec.mode));
  put<std::uint8_t>(os, std::uint8_t(spec.granularity));
  put<std::int32_t>(os, spec.channel_axis);
  put<std::uint8_t>(os, spec.static_params ? 1 : 0);
  put<double>(os, spec.static_params ? spec.static_params->scale : 0.0);
  put<double>(os, spec.static_params ? spec.static_params->offset : 0.0);
}

quant::QuantSpec get_spec(std::istream& is) {
  quant::QuantSpec spec;
  spec.bits = get<double>(is);
  spec.form = quant::RangeForm(get<std::uint8_t>(is));
  spec.rounding = quant::Rounding(get<std::uint8_t>(is));
  spec.mode = quant::Mode(get<std::uint8_t>(is));
  spec.granularity = quant::Granularity(get<std::uint8_t>(is));
  spec.channel_axis = get<std::int32_t>(is);
  const bool has_static = get<std::uint8_t>(is) != 0;
  const double scale = get<double>(is);
  const double offset = get<double>(is);
  if (has_static) spec.static_params = quant::StaticParams{scale, offset};
  quant::validate(spec);
  return spec;
}

void put_floats(std::ostream& os, const std::vector<float>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           std::streamsize(v.size() * sizeof(float)));
}

std::vector<float> get_floats(std::istream& is, std::size_t n) {
  std::vector<float> v(n);
  is.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(float)));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const ToyModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");

  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  const auto& cfg = model.config();
  put<std::uint32_t>(os, std::uint32_t(cfg.width));
  put<std::uint32_t>(os, std::uint32_t(cfg.blocks));
  put<std::uint32_t>(os, std::uint32_t(cfg.ff_mult));
  put<double>(os, cfg.layernorm_eps);

  const auto linears = model.linears();
  put<std::uint32_t>(os, std::uint32_t(linears.size()));
  for (const auto* lin : linears) {
    put_string(os, lin->name());
    put<std::uint8_t>(os, std::uint8_t(lin->tag()));
    put<std::uint32_t>(os, std::uint32_t(lin->in_features()));
    put<std::uint32_t>(os, std::uint32_t(lin->out_features()));
    put<std::uint8_t>(os, lin->has_bias() ? 1 : 0);
    put_spec(os, lin->weight_spec);
    put_spec(os, lin->act_spec);
  }
  for (const auto* lin : linears) {
    put_floats(os, lin->weight().values());
    if (lin->has_bias()) put_floats(os, lin->bias().values());
  }
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

ToyModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "' for reading");

  char magic[4];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("'" + path + "' is not a model checkpoint");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " +
                             std::to_string(version));
  }

  ModelConfig cfg;
  cfg.width = get<std::uint32_t>(is);
  cfg.blocks = get<std::uint32_t>(is);
  cfg.ff_mult = get<std::uint32_t>(is);
  cfg.layernorm_eps = get<double>(is);

  // Build the geometry, then overwrite every field from the manifest.
  ToyModel model = ToyModel::random(cfg, 0);
  auto linears = model.linears();
  const auto n_layers = get<std::uint32_t>(is);
  if (n_layers != linears.size()) {
    throw std::runtime_error("checkpoint layer count does not match geometry");
  }

  struct Entry {
    bool has_bias;
    std::size_t rows, cols;
  };
  std::vector<Entry> entries;
  for (auto* lin : linears) {
    const std::string name = get_string(is);
    if (name != lin->name()) {
      throw std::runtime_error("checkpoint manifest mismatch: expected layer '" +
                               lin->name() + "', found '" + name + "'");
    }
    const auto tag = LayerTag(get<std::uint8_t>(is));
    if (tag != lin->tag()) {
      throw std::runtime_error("checkpoint tag mismatch for layer '" + name + "'");
    }
    const std::size_t rows = get<std::uint32_t>(is);
    const std::size_t cols = get<std::uint32_t>(is);
    if (rows != lin->in_features() || cols != lin->out_features()) {
      throw std::runtime_error("checkpoint shape mismatch for layer '" + name + "'");
    }
    const bool has_bias = get<std::uint8_t>(is) != 0;
    if (has_bias != lin->has_bias()) {
      throw std::runtime_error("checkpoint bias mismatch for layer '" + name + "'");
    }
    lin->weight_spec = get_spec(is);
    lin->act_spec = get_spec(is);
    entries.push_back({has_bias, rows, cols});
  }
  for (std::size_t i = 0; i < linears.size(); ++i) {
    auto* lin = linears[i];
    lin->weight().values_mut() = get_floats(is, entries[i].rows * entries[i].cols);
    if (entries[i].has_bias) {
      lin->bias().values_mut() = get_floats(is, entries[i].cols);
    }
  }
  return model;
}

}  // namespace fqat::layers

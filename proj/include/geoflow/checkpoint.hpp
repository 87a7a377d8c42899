#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "geoflow/crc32.hpp"
#include "geoflow/nets.hpp"

namespace geoflow {

/// Network checkpoints: magic "GFNC1", a little-endian u32 header
/// length, a JSON header (spec, version, checksum, dtype), then the
/// raw little-endian parameter block. Reload is bit-exact for f64
/// payloads; f32 trades precision for size behind the dtype flag.
namespace checkpoint {

constexpr char kMagic[5] = {'G', 'F', 'N', 'C', '1'};
constexpr int kVersion = 1;

inline const char* activation_name(Activation a) {
  return a == Activation::tanh ? "tanh" : "silu";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "silu") return Activation::silu;
  throw std::runtime_error("checkpoint: unknown activation '" + s + "'");
}

inline void write(const std::string& path, const std::string& kind, const MlpSpec& spec,
                  std::span<const double> params, int state_dim, int cond_dim, bool f32 = false) {
  std::string payload;
  if (f32) {
    payload.resize(params.size() * 4);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const float v = static_cast<float>(params[i]);
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      for (int b = 0; b < 4; ++b) payload[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
    }
  } else {
    payload.resize(params.size() * 8);
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::uint64_t u;
      std::memcpy(&u, &params[i], 8);
      for (int b = 0; b < 8; ++b) payload[i * 8 + b] = static_cast<char>((u >> (8 * b)) & 0xFF);
    }
  }
  nlohmann::json header = {
      {"version", kVersion},
      {"kind", kind},
      {"input_dim", spec.input_dim},
      {"hidden", spec.hidden},
      {"output_dim", spec.output_dim},
      {"activation", activation_name(spec.activation)},
      {"seed", spec.seed},
      {"param_count", params.size()},
      {"dtype", f32 ? "f32" : "f64"},
      {"state_dim", state_dim},
      {"cond_dim", cond_dim},
      {"checksum", crc32({reinterpret_cast<const std::uint8_t*>(payload.data()), payload.size()})},
  };
  const std::string hs = header.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(kMagic, 5);
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  char lenb[4];
  for (int b = 0; b < 4; ++b) lenb[b] = static_cast<char>((hlen >> (8 * b)) & 0xFF);
  f.write(lenb, 4);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct Loaded {
  std::string kind;
  MlpSpec spec;
  Vec params;
  int state_dim = 0;
  int cond_dim = 0;
};

inline Loaded read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 9) throw std::runtime_error("checkpoint: truncated file " + path);
  if (std::memcmp(bytes.data(), kMagic, 5) != 0)
    throw std::runtime_error("checkpoint: magic mismatch in " + path);
  std::uint32_t hlen = 0;
  for (int b = 0; b < 4; ++b)
    hlen |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes[5 + b])) << (8 * b);
  if (bytes.size() < 9 + static_cast<std::size_t>(hlen))
    throw std::runtime_error("checkpoint: truncated header in " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 9, bytes.begin() + 9 + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt header in " + path + ": " + e.what());
  }
  if (header.at("version").get<int>() != kVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  Loaded out;
  out.kind = header.at("kind").get<std::string>();
  out.spec.input_dim = header.at("input_dim").get<int>();
  out.spec.hidden = header.at("hidden").get<std::vector<int>>();
  out.spec.output_dim = header.at("output_dim").get<int>();
  out.spec.activation = activation_from_name(header.at("activation").get<std::string>());
  out.spec.seed = header.at("seed").get<std::uint64_t>();
  out.state_dim = header.at("state_dim").get<int>();
  out.cond_dim = header.at("cond_dim").get<int>();
  const auto param_count = header.at("param_count").get<std::size_t>();
  const std::string dtype = header.at("dtype").get<std::string>();
  const std::size_t word = dtype == "f32" ? 4 : 8;
  const std::size_t payload_off = 9 + hlen;
  if (bytes.size() != payload_off + param_count * word)
    throw std::runtime_error("checkpoint: truncated payload in " + path);
  const auto* payload = reinterpret_cast<const std::uint8_t*>(bytes.data() + payload_off);
  const std::uint32_t crc = crc32({payload, param_count * word});
  if (crc != header.at("checksum").get<std::uint32_t>())
    throw std::runtime_error("checkpoint: checksum mismatch in " + path);
  out.params.resize(param_count);
  for (std::size_t i = 0; i < param_count; ++i) {
    if (word == 8) {
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(payload[i * 8 + b]) << (8 * b);
      std::memcpy(&out.params[i], &u, 8);
    } else {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(payload[i * 4 + b]) << (8 * b);
      float v;
      std::memcpy(&v, &u, 4);
      out.params[i] = v;
    }
  }
  if (out.params.size() != out.spec.param_count())
    throw std::runtime_error("checkpoint: parameter count does not match spec in " + path);
  return out;
}

}  // namespace checkpoint

inline void save_checkpoint(const CorrectorNet& net, const std::string& path, bool f32 = false) {
  checkpoint::write(path, "corrector", net.spec, net.params, net.dim(), 0, f32);
}

inline void save_checkpoint(const VelocityNet& net, const std::string& path, bool f32 = false) {
  checkpoint::write(path, "velocity", net.spec, net.params, net.state_dim, net.cond_dim, f32);
}

inline CorrectorNet load_corrector(const std::string& path) {
  auto loaded = checkpoint::read(path);
  if (loaded.kind != "corrector")
    throw std::runtime_error("load_corrector: checkpoint kind is '" + loaded.kind + "'");
  return CorrectorNet{loaded.spec, std::move(loaded.params)};
}

inline VelocityNet load_velocity(const std::string& path) {
  auto loaded = checkpoint::read(path);
  if (loaded.kind != "velocity")
    throw std::runtime_error("load_velocity: checkpoint kind is '" + loaded.kind + "'");
  VelocityNet net;
  net.spec = loaded.spec;
  net.params = std::move(loaded.params);
  net.state_dim = loaded.state_dim;
  net.cond_dim = loaded.cond_dim;
  return net;
}

}  // namespace geoflow

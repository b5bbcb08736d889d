#pragma once

// SUDACKPT checkpoint files, little-endian:
//   "SUDACKPT" u16 version=1 u64 iteration u32 tensor_count
//   per tensor: u16 name_len, name bytes, u8 rank, rank x u64 dims, f64 payload
//   u32 CRC-32 of every preceding byte

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/binary_io.hpp"
#include "suda/errors.hpp"
#include "suda/trainer.hpp"

namespace suda::ckpt {

using ad::Shape;
using ad::Tensor;

inline constexpr std::string_view kMagic = "SUDACKPT";
inline constexpr std::uint16_t kVersion = 1;

struct Checkpoint {
  std::uint64_t iteration = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw FormatError("checkpoint has no tensor '" + name + "'", 0);
  }
  bool has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return true;
    return false;
  }
};

inline std::vector<std::uint8_t> encode(const Checkpoint& c) {
  bin::Writer w;
  w.put_bytes(kMagic);
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint64_t>(c.iteration);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    if (name.size() > 0xFFFF) throw DataError("tensor name too long: " + name.substr(0, 32) + "...");
    if (t.rank() > 0xFF) throw DataError("tensor rank too large for " + name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.values()) w.put_f64(v);
  }
  const std::uint32_t crc = bin::crc32(w.bytes());
  w.put<std::uint32_t>(crc);
  return w.bytes();
}

inline Checkpoint decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagic.size() + 2 + 8 + 4 + 4) throw FormatError("checkpoint truncated", bytes.size());
  const std::size_t body = bytes.size() - 4;
  {
    bin::Reader tail(bytes);
    tail.get_bytes(body, "body");
    const auto stored = tail.get<std::uint32_t>("checksum");
    if (stored != bin::crc32(bytes.data(), body)) throw FormatError("checkpoint CRC mismatch", body);
  }
  bin::Reader r(bytes, body);
  if (r.get_bytes(kMagic.size(), "magic") != kMagic) throw FormatError("bad checkpoint magic", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), 8);
  Checkpoint c;
  c.iteration = r.get<std::uint64_t>("iteration");
  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>("name length");
    std::string name = r.get_bytes(len, "name");
    const auto rank = r.get<std::uint8_t>("rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const std::size_t at = r.position();
      const auto d = r.get<std::uint64_t>("dimension");
      if (d != 0 && n > r.remaining() / d) throw FormatError("tensor '" + name + "' larger than the file", at);
      n *= d;
      shape.push_back(d);
    }
    r.require(n * 8, "payload");
    std::vector<double> values(n);
    for (auto& v : values) v = r.get_f64("payload");
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes before checksum", r.position());
  return c;
}

inline void save(const Checkpoint& c, const std::filesystem::path& path) { bin::write_file(path, encode(c)); }
inline Checkpoint load(const std::filesystem::path& path) { return decode(bin::read_file(path)); }

// ---------------------------------------------------------------------------
// Training state <-> checkpoint. The architecture-defining settings travel as
// scalar tensors named config.* so a checkpoint can be read on its own.

inline Checkpoint from_state(const train::TrainState& s, const train::TrainConfig& cfg) {
  Checkpoint c;
  c.iteration = s.iteration;
  auto scalar = [&c](const std::string& name, double v) { c.tensors.emplace_back("config." + name, Tensor::scalar(v)); };
  scalar("tier", static_cast<double>(cfg.tier));
  scalar("n_bands", static_cast<double>(cfg.asa.bands));
  scalar("heads", static_cast<double>(cfg.asa.heads));
  scalar("attention_mode", static_cast<double>(cfg.asa.mode));
  scalar("classes", static_cast<double>(cfg.classes));
  scalar("image_size", static_cast<double>(cfg.image_size));
  s.visit([&c](const std::string& name, const Tensor& t) { c.tensors.emplace_back(name, t); });
  return c;
}

// Architecture fields of cfg are overwritten from the checkpoint.
inline train::TrainState to_state(const Checkpoint& c, train::TrainConfig& cfg) {
  auto scalar = [&c](const std::string& name) {
    const Tensor& t = c.get("config." + name);
    if (t.size() != 1) throw FormatError("config." + name + " is not a scalar", 0);
    return t.item();
  };
  const double tier = scalar("tier");
  if (tier < 0 || tier > 3) throw FormatError("checkpoint tier out of range", 0);
  cfg.tier = static_cast<train::Tier>(static_cast<int>(tier));
  cfg.asa.bands = static_cast<std::size_t>(scalar("n_bands"));
  cfg.asa.heads = static_cast<std::size_t>(scalar("heads"));
  cfg.asa.mode = static_cast<st::AttentionMode>(static_cast<int>(scalar("attention_mode")));
  cfg.classes = static_cast<std::size_t>(scalar("classes"));
  cfg.image_size = static_cast<std::size_t>(scalar("image_size"));
  cfg.asa.validate();

  train::TrainState s;
  s.st1 = st::make_zero_params(cfg.asa);
  s.st2 = st::make_zero_params(cfg.asa);
  s.st1_v = st::make_zero_params(cfg.asa);
  s.st2_v = st::make_zero_params(cfg.asa);
  const auto gw = models::classifier_widths(train::input_width(cfg), cfg.classes);
  const auto cw = models::discriminator_widths(train::input_width(cfg));
  s.g = models::make_zero_mlp(gw);
  s.g_v = models::make_zero_mlp(gw);
  s.cd = models::make_zero_mlp(cw);
  s.cd_v = models::make_zero_mlp(cw);
  s.iteration = c.iteration;

  std::size_t expected = 0;
  s.visit([&](const std::string& name, Tensor& t) {
    ++expected;
    const Tensor& src = c.get(name);
    if (src.shape() != t.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + ad::shape_string(src.shape()) + ", expected " +
                        ad::shape_string(t.shape()),
                        0);
    }
    t = src;
  });
  std::size_t config_count = 0;
  for (const auto& [n, t] : c.tensors) config_count += n.starts_with("config.");
  if (c.tensors.size() != expected + config_count) throw FormatError("checkpoint has unexpected tensors", 0);
  return s;
}

inline void save_state(const train::TrainState& s, const train::TrainConfig& cfg, const std::filesystem::path& path) {
  save(from_state(s, cfg), path);
}

inline train::TrainState load_state(const std::filesystem::path& path, train::TrainConfig& cfg) {
  return to_state(load(path), cfg);
}

}  // namespace suda::ckpt

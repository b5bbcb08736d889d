#pragma once

// Two-domain synthetic classification benchmark. Source images are clean
// class patterns; target images are the same kind of patterns plus a shift
// injected into known frequency bands, so the set of domain-variant bands is
// ground truth rather than a guess.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/binary_io.hpp"
#include "suda/errors.hpp"
#include "suda/rng.hpp"
#include "suda/spectral.hpp"

namespace suda::data {

using ad::Shape;
using ad::Tensor;

enum class PerturbationKind {
  Illumination,  // smooth per-image brightness field, biased brighter
  Texture,       // one dataset-wide pattern, randomly translated per image
  Noise,         // independent per image and channel
};

inline std::string to_string(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::Illumination: return "illumination";
    case PerturbationKind::Texture: return "texture";
    case PerturbationKind::Noise: return "noise";
  }
  return "?";
}

struct BandPerturbation {
  PerturbationKind kind = PerturbationKind::Noise;
  std::vector<std::size_t> bands;
  double amplitude = 0;  // pixel-space RMS of the injected field
};

struct DomainShiftSpec {
  std::vector<BandPerturbation> perturbations;
  std::array<double, 3> color_gain{1.0, 1.0, 1.0};
  std::array<double, 3> color_offset{0.0, 0.0, 0.0};

  // Sorted union of all perturbed bands; a nonzero color offset perturbs the
  // band holding DC, which is band 0.
  std::vector<std::uint16_t> perturbed_bands() const {
    std::set<std::uint16_t> s;
    for (const auto& p : perturbations)
      if (p.amplitude > 0)
        for (auto b : p.bands) s.insert(static_cast<std::uint16_t>(b));
    if (std::any_of(color_offset.begin(), color_offset.end(), [](double v) { return v != 0.0; })) s.insert(0);
    return {s.begin(), s.end()};
  }

  void validate(std::size_t n_bands) const {
    for (const auto& p : perturbations) {
      if (!std::isfinite(p.amplitude) || p.amplitude < 0) throw ConfigError("shift amplitudes must be finite and >= 0");
      for (auto b : p.bands) {
        if (b >= n_bands) {
          throw ConfigError("perturbed band " + std::to_string(b) + " outside [0, " + std::to_string(n_bands) + ")");
        }
      }
    }
    for (double g : color_gain)
      if (!std::isfinite(g)) throw ConfigError("color gain must be finite");
    for (double o : color_offset)
      if (!std::isfinite(o)) throw ConfigError("color offset must be finite");
  }

  // Every amplitude and the color shift scaled by `factor`; 0 removes the shift.
  DomainShiftSpec scaled(double factor) const {
    DomainShiftSpec out = *this;
    for (auto& p : out.perturbations) p.amplitude *= factor;
    for (std::size_t c = 0; c < 3; ++c) {
      out.color_gain[c] = 1.0 + (color_gain[c] - 1.0) * factor;
      out.color_offset[c] *= factor;
    }
    return out;
  }

  std::string describe() const {
    std::ostringstream os;
    for (const auto& p : perturbations) {
      os << to_string(p.kind) << " bands=";
      for (std::size_t i = 0; i < p.bands.size(); ++i) os << (i ? "," : "") << p.bands[i];
      os << " amplitude=" << p.amplitude << '\n';
    }
    os << "color_gain=" << color_gain[0] << ',' << color_gain[1] << ',' << color_gain[2] << '\n';
    os << "color_offset=" << color_offset[0] << ',' << color_offset[1] << ',' << color_offset[2] << '\n';
    return os.str();
  }
};

inline std::vector<std::size_t> band_range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> v;
  for (std::size_t b = first; b <= last; ++b) v.push_back(b);
  return v;
}

// Default shift for N = 32: illumination on {0,1}, texture on {12..15},
// noise on {28..31}. Amplitudes are frozen defaults.
inline DomainShiftSpec default_shift(std::size_t n_bands = 32) {
  if (n_bands != 32) {
    // Same layout, proportionally placed.
    auto at = [n_bands](double frac) { return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n_bands))); };
    DomainShiftSpec s;
    s.perturbations = {
        {PerturbationKind::Illumination, band_range(0, std::max<std::size_t>(at(2.0 / 32) , 1) - 1), 0.12},
        {PerturbationKind::Texture, band_range(at(12.0 / 32), std::max(at(16.0 / 32), at(12.0 / 32) + 1) - 1), 0.10},
        {PerturbationKind::Noise, band_range(at(28.0 / 32), n_bands - 1), 0.10},
    };
    s.color_offset = {0.06, -0.03, 0.02};
    return s;
  }
  DomainShiftSpec s;
  s.perturbations = {
      {PerturbationKind::Illumination, band_range(0, 1), 0.12},
      {PerturbationKind::Texture, band_range(12, 15), 0.10},
      {PerturbationKind::Noise, band_range(28, 31), 0.10},
  };
  s.color_offset = {0.06, -0.03, 0.02};
  return s;
}

struct Dataset {
  std::size_t count = 0;
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> images;           // count x C x H x W
  std::vector<std::uint16_t> labels;   // empty when the file carries none
  std::uint64_t seed = 0;
  std::vector<std::uint16_t> perturbed_bands;

  bool has_labels() const { return !labels.empty(); }
  std::size_t image_size() const { return channels * height * width; }

  Tensor image(std::size_t i) const {
    if (i >= count) throw DataError("image index " + std::to_string(i) + " out of range");
    const auto first = images.begin() + static_cast<std::ptrdiff_t>(i * image_size());
    return Tensor(Shape{channels, height, width}, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(image_size())));
  }

  Tensor batch(std::span<const std::size_t> indices) const {
    std::vector<double> out;
    out.reserve(indices.size() * image_size());
    for (auto i : indices) {
      if (i >= count) throw DataError("image index " + std::to_string(i) + " out of range");
      const auto first = images.begin() + static_cast<std::ptrdiff_t>(i * image_size());
      out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(image_size()));
    }
    return Tensor(Shape{indices.size(), channels, height, width}, std::move(out));
  }

  std::vector<std::size_t> batch_labels(std::span<const std::size_t> indices) const {
    if (!has_labels()) throw DataError("dataset carries no labels");
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(labels.at(i));
    return out;
  }

  // Copy without labels; what the training loop is allowed to see of the target.
  Dataset without_labels() const {
    Dataset d = *this;
    d.labels.clear();
    return d;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GenerateConfig {
  std::size_t classes = 4;
  std::size_t source_count = 2000;
  std::size_t target_count = 2000;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t bands = 32;
  DomainShiftSpec shift = default_shift();
  std::uint64_t seed = 42;
};

struct Domains {
  Dataset source;
  Dataset target;  // labels held out for evaluation only
  DomainShiftSpec shift;
};

namespace detail {

// Zero-mean field restricted to `bands`, normalized to unit RMS (zero if the
// bands hold no bins or the draw vanishes).
inline std::vector<double> band_limited_field(std::size_t h, std::size_t w, const spectral::BandMaskSet& masks,
                                              const std::vector<std::size_t>& bands, Rng& rng) {
  spectral::Spectrum s{1, h, w, std::vector<spectral::Complex>(h * w)};
  std::vector<bool> keep(masks.bands(), false);
  for (auto b : bands) keep[b] = true;
  // Hermitian-symmetrize explicitly so the inverse is real.
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      if (!keep[masks.band_of(u, v)]) continue;
      s.at(0, u, v) = {rng.normal(), rng.normal()};
    }
  const std::size_t cy = h / 2, cx = w / 2;
  spectral::Spectrum sym = s;
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      // mirror of (u,v) through the center, modulo the grid
      const std::size_t mu = (2 * cy + h - u) % h;
      const std::size_t mv = (2 * cx + w - v) % w;
      sym.at(0, u, v) = 0.5 * (s.at(0, u, v) + std::conj(s.at(0, mu, mv)));
    }
  Tensor field = spectral::ifft2(sym);
  double ss = 0;
  for (double x : field.values()) ss += x * x;
  const double rms = std::sqrt(ss / static_cast<double>(field.size()));
  std::vector<double> out(field.values().begin(), field.values().end());
  if (rms > 0)
    for (auto& x : out) x /= rms;
  return out;
}

inline double pattern_value(std::size_t family, double x, double y, double w, const std::array<double, 8>& p) {
  const double two_pi = 2.0 * std::numbers::pi;
  switch (family) {
    case 0: {  // oriented bars
      const double a = p[0];
      return std::cos(two_pi * p[1] * (x * std::cos(a) + y * std::sin(a)) / w + p[2]);
    }
    case 1:  // checkers
      return std::cos(two_pi * p[1] * x / w + p[2]) * std::cos(two_pi * p[1] * y / w + p[3]);
    case 2: {  // rings around a jittered center
      const double r = std::hypot(x - p[4], y - p[5]);
      return std::cos(two_pi * p[1] * r / w + p[2]);
    }
    default: {  // blobs
      double v = 0;
      for (int k = 0; k < 2; ++k) {
        const double dx = x - p[4 + 2 * k], dy = y - p[5 + 2 * k];
        v += std::exp(-(dx * dx + dy * dy) / (2.0 * p[1] * p[1]));
      }
      return 2.0 * std::min(v, 1.0) - 1.0;
    }
  }
}

}  // namespace detail

// Clean class pattern for sample `index` of class `label`; values near [0.25, 0.75].
inline Tensor base_image(std::size_t label, std::size_t h, std::size_t w, Rng& rng) {
  const std::size_t family = label % 4;
  const double orientation_offset = static_cast<double>(label / 4) * std::numbers::pi / 4.0;
  std::array<double, 8> p{};
  const double fw = static_cast<double>(w), fh = static_cast<double>(h);
  p[0] = orientation_offset + rng.uniform(-0.25, 0.25);
  p[1] = family == 3 ? rng.uniform(0.08, 0.12) * fw : rng.uniform(5.5, 10.0);
  p[2] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  p[3] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < 2; ++k) {
    p[4 + 2 * k] = fw / 2 + rng.uniform(-0.25, 0.25) * fw;
    p[5 + 2 * k] = fh / 2 + rng.uniform(-0.25, 0.25) * fh;
  }
  const double amp = rng.uniform(0.18, 0.25);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = rng.uniform(0.6, 1.0);
  Tensor img(Shape{3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = detail::pattern_value(family, static_cast<double>(x), static_cast<double>(y), fw, p);
      for (std::size_t c = 0; c < 3; ++c) img[(c * h + y) * w + x] = 0.5 + amp * tint[c] * v;
    }
  return img;
}

// Dataset-wide texture planes (one per channel) for Texture perturbations.
struct TextureBank {
  std::vector<std::vector<double>> planes;  // per perturbation index, 3 planes of H*W
};

inline TextureBank make_texture_bank(const DomainShiftSpec& spec, const spectral::BandMaskSet& masks, std::uint64_t seed) {
  TextureBank bank;
  bank.planes.resize(spec.perturbations.size());
  for (std::size_t k = 0; k < spec.perturbations.size(); ++k) {
    const auto& p = spec.perturbations[k];
    if (p.kind != PerturbationKind::Texture) continue;
    Rng rng(seed, "texture", k);
    const auto field = detail::band_limited_field(masks.height(), masks.width(), masks, p.bands, rng);
    std::array<double, 3> mix{};
    for (auto& m : mix) m = rng.uniform(0.5, 1.0);
    for (std::size_t c = 0; c < 3; ++c)
      for (double v : field) bank.planes[k].push_back(mix[c] * v);
  }
  return bank;
}

// Target-side shift of one clean image, before clamping.
inline Tensor apply_shift(const Tensor& base, const DomainShiftSpec& spec, const spectral::BandMaskSet& masks,
                          const TextureBank& bank, Rng& rng) {
  const std::size_t h = base.extent(1), w = base.extent(2), hw = h * w;
  Tensor out = base.detached();
  for (std::size_t k = 0; k < spec.perturbations.size(); ++k) {
    const auto& p = spec.perturbations[k];
    if (p.amplitude == 0) continue;
    switch (p.kind) {
      case PerturbationKind::Illumination: {
        // Achromatic; sign fixed positive so the target is brighter on average.
        auto field = detail::band_limited_field(h, w, masks, p.bands, rng);
        double mean = 0;
        for (double v : field) mean += v;
        mean /= static_cast<double>(hw);
        const double flip = mean < 0 ? -1.0 : 1.0;
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] += p.amplitude * flip * field[i];
        break;
      }
      case PerturbationKind::Texture: {
        const std::size_t dy = rng.below(h), dx = rng.below(w);
        const double gain = p.amplitude * rng.uniform(0.75, 1.25);
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x)
              out[(c * h + y) * w + x] += gain * bank.planes[k][c * hw + ((y + dy) % h) * w + (x + dx) % w];
        break;
      }
      case PerturbationKind::Noise: {
        for (std::size_t c = 0; c < 3; ++c) {
          const auto field = detail::band_limited_field(h, w, masks, p.bands, rng);
          for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] += p.amplitude * field[i];
        }
        break;
      }
    }
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = spec.color_gain[c] * out[c * hw + i] + spec.color_offset[c];
  return out;
}

namespace detail {

inline void store(Dataset& d, std::size_t i, const Tensor& img) {
  for (std::size_t j = 0; j < d.image_size(); ++j)
    d.images[i * d.image_size() + j] = static_cast<float>(std::clamp(img[j], 0.0, 1.0));
}

}  // namespace detail

inline Domains generate(const GenerateConfig& cfg) {
  if (cfg.classes < 2) throw ConfigError("at least two classes are required");
  if (cfg.source_count < 1 || cfg.target_count < 1) throw ConfigError("dataset counts must be at least 1");
  if (cfg.classes > 65535) throw ConfigError("class ids must fit in u16");
  const auto masks = spectral::make_band_masks(cfg.height, cfg.width, cfg.bands);
  cfg.shift.validate(cfg.bands);

  auto make = [&](std::size_t count) {
    Dataset d;
    d.count = count;
    d.height = cfg.height;
    d.width = cfg.width;
    d.seed = cfg.seed;
    d.images.resize(count * d.image_size());
    d.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) d.labels[i] = static_cast<std::uint16_t>(i % cfg.classes);
    return d;
  };

  Domains out;
  out.shift = cfg.shift;
  out.source = make(cfg.source_count);
  out.target = make(cfg.target_count);
  out.target.perturbed_bands = cfg.shift.perturbed_bands();

  for (std::size_t i = 0; i < cfg.source_count; ++i) {
    Rng rng(cfg.seed, "sample/source", i);
    detail::store(out.source, i, base_image(out.source.labels[i], cfg.height, cfg.width, rng));
  }
  const TextureBank bank = make_texture_bank(cfg.shift, masks, cfg.seed);
  for (std::size_t i = 0; i < cfg.target_count; ++i) {
    Rng rng(cfg.seed, "sample/target", i);
    const Tensor base = base_image(out.target.labels[i], cfg.height, cfg.width, rng);
    Rng shift_rng(cfg.seed, "shift/target", i);
    detail::store(out.target, i, apply_shift(base, cfg.shift, masks, bank, shift_rng));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SUDADATA file format, little-endian:
//   "SUDADATA" u16 version=1 u32 count u16 H u16 W u16 C=3 u8 has_labels u64 seed
//   u16 band_count, band_count x u16 band
//   count*C*H*W f32 pixels, then (has_labels) count x u16 labels

inline constexpr std::string_view kDatasetMagic = "SUDADATA";
inline constexpr std::uint16_t kDatasetVersion = 1;

inline std::vector<std::uint8_t> encode(const Dataset& d) {
  if (d.channels != 3) throw DataError("datasets must have 3 channels");
  if (d.images.size() != d.count * d.image_size()) throw DataError("dataset image buffer does not match its header");
  if (d.has_labels() && d.labels.size() != d.count) throw DataError("dataset label count does not match image count");
  bin::Writer w;
  w.put_bytes(kDatasetMagic);
  w.put<std::uint16_t>(kDatasetVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(d.count));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.height));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.width));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.channels));
  w.put<std::uint8_t>(d.has_labels() ? 1 : 0);
  w.put<std::uint64_t>(d.seed);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(d.perturbed_bands.size()));
  for (auto b : d.perturbed_bands) w.put<std::uint16_t>(b);
  for (float v : d.images) w.put_f32(v);
  for (auto l : d.labels) w.put<std::uint16_t>(l);
  return w.bytes();
}

inline Dataset decode(const std::vector<std::uint8_t>& bytes) {
  bin::Reader r(bytes);
  if (r.get_bytes(kDatasetMagic.size(), "magic") != kDatasetMagic) throw FormatError("bad dataset magic", 0);
  const auto version = r.get<std::uint16_t>("version");
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version), 8);
  Dataset d;
  d.count = r.get<std::uint32_t>("count");
  d.height = r.get<std::uint16_t>("height");
  d.width = r.get<std::uint16_t>("width");
  const std::size_t channels_at = r.position();
  d.channels = r.get<std::uint16_t>("channels");
  if (d.channels != 3) throw FormatError("dataset must have 3 channels", channels_at);
  const std::size_t labels_flag_at = r.position();
  const auto has_labels = r.get<std::uint8_t>("has_labels");
  if (has_labels > 1) throw FormatError("has_labels must be 0 or 1", labels_flag_at);
  d.seed = r.get<std::uint64_t>("seed");
  const auto n_bands = r.get<std::uint16_t>("band count");
  for (std::size_t i = 0; i < n_bands; ++i) d.perturbed_bands.push_back(r.get<std::uint16_t>("band index"));
  const std::size_t n_pixels = d.count * d.image_size();
  r.require(n_pixels * 4, "pixels");
  d.images.resize(n_pixels);
  for (auto& v : d.images) v = r.get_f32("pixel");
  if (has_labels) {
    r.require(d.count * 2, "labels");
    d.labels.resize(d.count);
    for (auto& l : d.labels) l = r.get<std::uint16_t>("label");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after dataset", r.position());
  return d;
}

inline void save(const Dataset& d, const std::filesystem::path& path) { bin::write_file(path, encode(d)); }

inline Dataset load(const std::filesystem::path& path) { return decode(bin::read_file(path)); }

}  // namespace suda::data

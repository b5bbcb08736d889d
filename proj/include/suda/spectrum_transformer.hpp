#pragma once

// Spectrum transformer: decompose an image into N frequency components, pool
// them into a 3N descriptor, run multi-head scaled dot-product attention over
// the descriptor, project, gate with a sigmoid, and recompose the image with
// one gain per (channel, band).

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/errors.hpp"
#include "suda/rng.hpp"
#include "suda/spectral.hpp"

namespace suda::st {

using ad::Shape;
using ad::Tensor;

enum class AttentionMode {
  // Descriptor is a single query/key/value token, as the projection shapes
  // dictate. Softmax over one score is identically 1, so each head returns V.
  Faithful,
  // Descriptor entries become 3N scalar tokens lifted to d_h per head;
  // attention runs over the 3N x 3N score matrix. Experimental.
  Token,
};

inline std::string to_string(AttentionMode m) { return m == AttentionMode::Faithful ? "faithful" : "token"; }

inline AttentionMode parse_attention_mode(const std::string& s) {
  if (s == "faithful") return AttentionMode::Faithful;
  if (s == "token") return AttentionMode::Token;
  throw ConfigError("unknown attention mode '" + s + "' (expected faithful or token)");
}

struct AsaConfig {
  std::size_t bands = 32;
  std::size_t heads = 8;
  std::size_t channels = 3;
  AttentionMode mode = AttentionMode::Faithful;

  std::size_t width() const { return channels * bands; }  // d = 3N
  std::size_t head_width() const { return width() / heads; }  // d_h = d / H

  void validate() const {
    if (bands == 0 || heads == 0 || channels == 0) throw ConfigError("ASA config extents must be positive");
    if (width() % heads != 0) {
      throw ConfigError("heads (" + std::to_string(heads) + ") must divide the descriptor width " +
                        std::to_string(width()));
    }
  }
};

// All learnable values of one spectrum transformer.
struct StParams {
  std::vector<Tensor> p_kvq;  // per head: d x 3d_h (faithful) or d_h x 3d_h (token)
  std::vector<Tensor> lift;   // token mode only, per head: 1 x d_h
  Tensor p_h;                 // H*d_h x d
  Tensor gate_w;              // d x d
  Tensor gate_b;              // d

  // Visits every tensor in the fixed flatten order.
  template <class Self, class F>
  static void visit_impl(Self& self, F&& f) {
    for (std::size_t h = 0; h < self.p_kvq.size(); ++h) f("p_kvq." + std::to_string(h), self.p_kvq[h]);
    for (std::size_t h = 0; h < self.lift.size(); ++h) f("lift." + std::to_string(h), self.lift[h]);
    f(std::string("p_h"), self.p_h);
    f(std::string("gate_w"), self.gate_w);
    f(std::string("gate_b"), self.gate_b);
  }
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  // P_kvq and P_H only (the attention layer proper).
  std::size_t attention_parameter_count() const {
    std::size_t n = p_h.size();
    for (const auto& t : p_kvq) n += t.size();
    for (const auto& t : lift) n += t.size();
    return n;
  }

  // theta: every value, concatenated in visit order.
  Tensor flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    visit([&](const std::string&, const Tensor& t) { out.insert(out.end(), t.values().begin(), t.values().end()); });
    const std::size_t n = out.size();
    return Tensor(Shape{n}, std::move(out));
  }

  // Inverse of flatten; shapes are taken from *this.
  void unflatten(const Tensor& theta) {
    if (theta.size() != parameter_count()) {
      throw DimensionError("unflatten: " + std::to_string(theta.size()) + " values for " +
                           std::to_string(parameter_count()) + " parameters");
    }
    std::size_t offset = 0;
    visit([&](const std::string&, Tensor& t) {
      std::copy_n(theta.values().begin() + offset, t.size(), t.values().begin());
      offset += t.size();
    });
  }

  // Differentiable flatten for taped copies.
  Tensor flatten_taped() const {
    std::vector<Tensor> parts;
    visit([&](const std::string&, const Tensor& t) { parts.push_back(ad::reshape(t, {t.size()})); });
    return ad::concat(parts, 0);
  }

  StParams watched(ad::Tape& tape) const {
    StParams out = *this;
    out.visit([&](const std::string&, Tensor& t) { t = tape.watch(t); });
    return out;
  }
};

inline StParams make_zero_params(const AsaConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.width(), dh = cfg.head_width();
  StParams p;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    if (cfg.mode == AttentionMode::Faithful) {
      p.p_kvq.emplace_back(Shape{d, 3 * dh});
    } else {
      p.p_kvq.emplace_back(Shape{dh, 3 * dh});
      p.lift.emplace_back(Shape{1, dh});
    }
  }
  p.p_h = Tensor(Shape{cfg.heads * dh, d});
  p.gate_w = Tensor(Shape{d, d});
  p.gate_b = Tensor(Shape{d});
  return p;
}

// Xavier-uniform projections; the gate starts at zero, i.e. a uniform 0.5 gain.
inline StParams make_random_params(const AsaConfig& cfg, Rng& rng) {
  StParams p = make_zero_params(cfg);
  auto fill = [&rng](Tensor& t, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
  };
  for (auto& t : p.p_kvq) fill(t, t.extent(0), t.extent(1));
  for (auto& t : p.lift) fill(t, 1, t.extent(1));
  fill(p.p_h, p.p_h.extent(0), p.p_h.extent(1));
  return p;
}

inline void require_shapes(const StParams& p, const AsaConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.width(), dh = cfg.head_width();
  const bool token = cfg.mode == AttentionMode::Token;
  if (p.p_kvq.size() != cfg.heads || p.lift.size() != (token ? cfg.heads : 0)) {
    throw DimensionError("spectrum transformer has " + std::to_string(p.p_kvq.size()) + " heads, config expects " +
                         std::to_string(cfg.heads));
  }
  for (const auto& t : p.p_kvq) {
    if (t.shape() != Shape{token ? dh : d, 3 * dh}) {
      throw DimensionError("P_kvq has shape " + ad::shape_string(t.shape()) + ", config expects " +
                           ad::shape_string({token ? dh : d, 3 * dh}));
    }
  }
  if (p.p_h.shape() != Shape{cfg.heads * dh, d}) throw DimensionError("P_H has shape " + ad::shape_string(p.p_h.shape()));
  if (p.gate_w.shape() != Shape{d, d}) throw DimensionError("gate weight has shape " + ad::shape_string(p.gate_w.shape()));
  if (p.gate_b.shape() != Shape{d}) throw DimensionError("gate bias has shape " + ad::shape_string(p.gate_b.shape()));
}

// descriptor[3n + c] = spatial mean of component (c, n). Input C x N x H x W.
inline Tensor pool(const Tensor& stack) {
  if (stack.rank() != 4) throw DimensionError("pool: stack must be CxNxHxW, got " + ad::shape_string(stack.shape()));
  const Tensor means = ad::mean(stack, {2, 3});  // C x N
  return ad::reshape(ad::swap_last_axes(means), {stack.extent(0) * stack.extent(1)});
}

// Same descriptor straight from spectra: the spatial mean of a component is its
// DC coefficient over H*W, so only the band holding DC is nonzero. B x 3N.
inline Tensor pool_spectra(const std::vector<spectral::Spectrum>& spectra, const spectral::BandMaskSet& masks) {
  const std::size_t batch = spectra.size();
  if (batch == 0) throw DimensionError("pool_spectra: empty batch");
  const std::size_t c_count = spectra.front().channels;
  const std::size_t h = masks.height(), w = masks.width();
  const std::size_t dc_band = masks.band_of(h / 2, w / 2);
  Tensor desc(Shape{batch, c_count * masks.bands()});
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& s = spectra[b];
    masks.require_grid(s.height, s.width, "pool_spectra");
    for (std::size_t c = 0; c < c_count; ++c)
      desc[b * c_count * masks.bands() + dc_band * c_count + c] = s.at(c, h / 2, w / 2).real() / static_cast<double>(h * w);
  }
  return desc;
}

// One attention head on a batch of descriptors (B x d) -> B x d_h.
inline Tensor attention_head(const Tensor& desc, const StParams& p, std::size_t head, const AsaConfig& cfg) {
  const std::size_t d = cfg.width(), dh = cfg.head_width();
  if (desc.rank() != 2 || desc.extent(1) != d) {
    throw DimensionError("attention_head: descriptor batch " + ad::shape_string(desc.shape()) + ", expected Bx" +
                         std::to_string(d));
  }
  const Tensor& proj = p.p_kvq.at(head);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t batch = desc.extent(0);

  if (cfg.mode == AttentionMode::Faithful) {
    if (proj.shape() != Shape{d, 3 * dh}) throw DimensionError("attention_head: P_kvq shape " + ad::shape_string(proj.shape()));
    const Tensor kvq = ad::matmul(desc, proj);  // (K, V, Q)
    const Tensor k = ad::slice(kvq, 1, 0, dh);
    const Tensor v = ad::slice(kvq, 1, dh, 2 * dh);
    const Tensor q = ad::slice(kvq, 1, 2 * dh, 3 * dh);
    // One key per query: the score matrix is 1 x 1 per sample.
    const Tensor scores = ad::reshape(ad::scale(ad::sum(ad::mul(q, k), {1}), inv_sqrt), {batch, 1});
    const Tensor attn = ad::softmax(scores, 1);
    return ad::mul(ad::expand(attn, 1, dh), v);
  }

  if (proj.shape() != Shape{dh, 3 * dh}) throw DimensionError("attention_head: P_kvq shape " + ad::shape_string(proj.shape()));
  const Tensor& lift = p.lift.at(head);
  std::vector<Tensor> rows;
  rows.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor tokens = ad::matmul(ad::reshape(ad::slice(desc, 0, b, b + 1), {d, 1}), lift);  // d x d_h
    const Tensor kvq = ad::matmul(tokens, proj);
    const Tensor k = ad::slice(kvq, 1, 0, dh);
    const Tensor v = ad::slice(kvq, 1, dh, 2 * dh);
    const Tensor q = ad::slice(kvq, 1, 2 * dh, 3 * dh);
    const Tensor attn = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt), 1);
    rows.push_back(ad::reshape(ad::mean(ad::matmul(attn, v), {0}), {1, dh}));
  }
  return ad::concat(rows, 0);
}

// Descriptor batch (B x d) -> gate batch (B x d) in (0,1), descriptor layout.
inline Tensor gate_from_descriptors(const Tensor& desc, const StParams& p, const AsaConfig& cfg) {
  require_shapes(p, cfg);
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (std::size_t h = 0; h < cfg.heads; ++h) heads.push_back(attention_head(desc, p, h, cfg));
  const Tensor projected = ad::matmul(ad::concat(heads, 1), p.p_h);
  const Tensor pre = ad::add_row_bias(ad::matmul(projected, p.gate_w), p.gate_b);
  if (!pre.all_finite()) throw NumericError("spectrum transformer: non-finite gate pre-activation");
  return ad::sigmoid(pre);
}

// B x (N*C) in descriptor order -> B x C x N gains.
inline Tensor gate_to_gains(const Tensor& gate, const AsaConfig& cfg) {
  const std::size_t batch = gate.extent(0);
  return ad::swap_last_axes(ad::reshape(gate, {batch, cfg.bands, cfg.channels}));
}

struct AsaOptions {
  // Overrides the learned gate (C x N); used for bypass and annihilation checks.
  std::optional<Tensor> forced_gate;
  // Optional spatial gain map applied at recomposition (H x W). Off by default.
  std::optional<Tensor> spatial_gain;
};

struct AsaResult {
  Tensor image;  // C x H x W
  Tensor gate;   // C x N
};

inline AsaResult asa_forward(const Tensor& stack, const StParams& p, const AsaConfig& cfg, const AsaOptions& opts = {}) {
  if (stack.rank() != 4 || stack.extent(0) != cfg.channels || stack.extent(1) != cfg.bands) {
    throw DimensionError("asa_forward: stack " + ad::shape_string(stack.shape()) + " does not match config " +
                         std::to_string(cfg.channels) + "x" + std::to_string(cfg.bands));
  }
  Tensor gains;
  if (opts.forced_gate) {
    gains = *opts.forced_gate;
  } else {
    const Tensor desc = ad::reshape(pool(stack), {1, cfg.width()});
    gains = ad::reshape(gate_to_gains(gate_from_descriptors(desc, p, cfg), cfg), {cfg.channels, cfg.bands});
  }
  const Tensor* spatial = opts.spatial_gain ? &*opts.spatial_gain : nullptr;
  Tensor image = spectral::recompose(stack, gains, spatial);
  if (!image.all_finite()) throw NumericError("asa_forward: non-finite output image");
  return {std::move(image), std::move(gains)};
}

// decompose -> pool -> attention -> gate -> recompose for one C x H x W image.
inline AsaResult st_apply(const Tensor& image, const StParams& p, const AsaConfig& cfg,
                          const spectral::BandMaskSet& masks, const AsaOptions& opts = {}) {
  if (masks.bands() != cfg.bands) throw DimensionError("st_apply: masks have " + std::to_string(masks.bands()) + " bands");
  return asa_forward(spectral::decompose(image, masks), p, cfg, opts);
}

struct BatchResult {
  Tensor images;  // B x C x H x W
  Tensor gains;   // B x C x N
};

// Batched transformer on precomputed spectra; one inverse transform per plane.
inline BatchResult st_apply_batch(const std::shared_ptr<const std::vector<spectral::Spectrum>>& spectra,
                                  const spectral::BandMaskSet& masks, const StParams& p, const AsaConfig& cfg) {
  if (masks.bands() != cfg.bands) throw DimensionError("st_apply_batch: mask/config band count mismatch");
  const Tensor desc = pool_spectra(*spectra, masks);
  Tensor gains = gate_to_gains(gate_from_descriptors(desc, p, cfg), cfg);
  Tensor images = spectral::filter_bands(spectra, masks, gains);
  return {std::move(images), std::move(gains)};
}

}  // namespace suda::st

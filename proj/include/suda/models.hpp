#pragma once

// Task classifier G and domain discriminator C_d, both fully-connected
// rectifier stacks over flattened 3 x H x W images.

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/errors.hpp"
#include "suda/rng.hpp"

namespace suda::models {

using ad::Shape;
using ad::Tensor;

inline constexpr std::size_t kClassifierHidden1 = 256;
inline constexpr std::size_t kClassifierHidden2 = 128;
inline constexpr std::size_t kDiscriminatorHidden1 = 128;
inline constexpr std::size_t kDiscriminatorHidden2 = 64;


struct Mlp {
  std::vector<Tensor> weights;  // layer l: in_l x out_l
  std::vector<Tensor> biases;   // layer l: out_l

  template <class Self, class F>
  static void visit_impl(Self& self, F&& f) {
    for (std::size_t l = 0; l < self.weights.size(); ++l) {
      f("w" + std::to_string(l), self.weights[l]);
      f("b" + std::to_string(l), self.biases[l]);
    }
  }
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::size_t input_width() const { return weights.front().extent(0); }
  std::size_t output_width() const { return weights.back().extent(1); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor& t) { n += t.size(); });
    return n;
  }

  Mlp watched(ad::Tape& tape) const {
    Mlp out = *this;
    out.visit([&](const std::string&, Tensor& t) { t = tape.watch(t); });
    return out;
  }
};

inline Mlp make_zero_mlp(const std::vector<std::size_t>& widths) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least an input and an output width");
  Mlp m;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    m.weights.emplace_back(Shape{widths[l], widths[l + 1]});
    m.biases.emplace_back(Shape{widths[l + 1]});
  }
  return m;
}

// He-scaled uniform weights, zero biases.
inline Mlp make_mlp(const std::vector<std::size_t>& widths, Rng& rng) {
  Mlp m = make_zero_mlp(widths);
  for (auto& w : m.weights) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.extent(0)));
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  }
  return m;
}

inline std::vector<std::size_t> classifier_widths(std::size_t input_width, std::size_t classes) {
  return {input_width, kClassifierHidden1, kClassifierHidden2, classes};
}

inline std::vector<std::size_t> discriminator_widths(std::size_t input_width) {
  return {input_width, kDiscriminatorHidden1, kDiscriminatorHidden2, 1};
}

struct MlpOutput {
  Tensor output;    // B x out
  Tensor features;  // B x last hidden width
};

// Rectifier after every layer except the last.
inline MlpOutput mlp_forward(const Tensor& x, const Mlp& m) {
  if (x.rank() != 2 || x.extent(1) != m.input_width()) {
    throw DimensionError("mlp: input " + ad::shape_string(x.shape()) + ", expected Bx" +
                         std::to_string(m.input_width()));
  }
  Tensor h = x;
  Tensor features = x;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    h = ad::add_row_bias(ad::matmul(h, m.weights[l]), m.biases[l]);
    if (l + 1 < m.weights.size()) {
      h = ad::relu(h);
      features = h;
    }
  }
  return {h, features};
}

// Accepts C x H x W or B x C x H x W and returns B x (C*H*W).
inline Tensor flatten_images(const Tensor& images) {
  if (images.rank() == 3) return ad::reshape(images, {1, images.size()});
  if (images.rank() == 4) return ad::reshape(images, {images.extent(0), images.size() / images.extent(0)});
  throw DimensionError("expected CxHxW or BxCxHxW images, got " + ad::shape_string(images.shape()));
}

// Subtracts each image's per-channel mean; G and C_d see zero-mean planes.
inline Tensor center_channels(const Tensor& images) {
  const Tensor batch = images.rank() == 3 ? ad::reshape(images, {1, images.extent(0), images.extent(1), images.extent(2)}) : images;
  if (batch.rank() != 4) throw DimensionError("expected CxHxW or BxCxHxW images, got " + ad::shape_string(images.shape()));
  const std::size_t b = batch.extent(0), c = batch.extent(1), hw = batch.extent(2) * batch.extent(3);
  const Tensor planes = ad::reshape(batch, {b * c, hw});
  const Tensor means = ad::expand(ad::reshape(ad::mean(planes, {1}), {b * c, 1}), 1, hw);
  return ad::reshape(ad::sub(planes, means), batch.shape());
}

struct Classification {
  Tensor logits;    // B x K
  Tensor probs;     // B x K
  Tensor features;  // B x 128
};

inline Classification classify(const Tensor& images, const Mlp& g) {
  auto out = mlp_forward(flatten_images(center_channels(images)), g);
  Tensor probs = ad::softmax(out.output, 1);
  return {std::move(out.output), std::move(probs), std::move(out.features)};
}

struct Discrimination {
  Tensor logits;  // B x 1
  Tensor scores;  // B x 1, 1 = source, 0 = target
};

inline Discrimination discriminate(const Tensor& images, const Mlp& cd) {
  if (cd.output_width() != 1) throw DimensionError("discriminator must have a single output");
  auto out = mlp_forward(flatten_images(center_channels(images)), cd);
  Tensor scores = ad::sigmoid(out.output);
  return {std::move(out.output), std::move(scores)};
}

// One line per layer plus the total, e.g. "3072 -> 256 (786688)".
inline std::string describe(const Mlp& m) {
  std::ostringstream os;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    os << m.weights[l].extent(0) << " -> " << m.weights[l].extent(1) << " ("
       << m.weights[l].size() + m.biases[l].size() << ")\n";
  }
  os << "total " << m.parameter_count() << '\n';
  return os.str();
}

}  // namespace suda::models

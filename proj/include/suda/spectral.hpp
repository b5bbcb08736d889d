#pragma once

// 2-D DFT with a center-shifted layout, radial band partition of the spectrum,
// and decomposition of an image into per-band spatial components.
//
// Conventions: forward transform unnormalized, inverse scaled by 1/(H*W).
// Spectra are stored center-shifted: frequency 0 sits at bin (H/2, W/2).

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/errors.hpp"
#include "suda/image_io.hpp"

namespace suda::spectral {

using Complex = std::complex<double>;
using ad::Shape;
using ad::Tensor;

// Imaginary residue tolerated when an inverse transform is expected to be real.
inline constexpr double kImagResidueTolerance = 1e-9;

namespace detail {

// Radix-2 Cooley-Tukey for powers of two; a direct O(n^2) DFT otherwise.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), pow2_(n != 0 && (n & (n - 1)) == 0), roots_(n) {
    for (std::size_t k = 0; k < n; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      roots_[k] = {std::cos(a), std::sin(a)};
    }
    if (pow2_) {
      rev_.resize(n);
      std::size_t bits = 0;
      while ((std::size_t{1} << bits) < n) ++bits;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
        rev_[i] = r;
      }
    }
  }

  // In place, unnormalized; `inverse` flips the exponent sign only.
  void run(std::span<Complex> x, bool inverse, std::vector<Complex>& scratch) const {
    auto root = [&](std::size_t k) { return inverse ? std::conj(roots_[k % n_]) : roots_[k % n_]; };
    if (pow2_) {
      for (std::size_t i = 0; i < n_; ++i)
        if (i < rev_[i]) std::swap(x[i], x[rev_[i]]);
      for (std::size_t len = 2; len <= n_; len <<= 1) {
        const std::size_t step = n_ / len;
        for (std::size_t start = 0; start < n_; start += len) {
          for (std::size_t j = 0; j < len / 2; ++j) {
            const Complex w = root(j * step);
            const Complex u = x[start + j];
            const Complex v = x[start + j + len / 2] * w;
            x[start + j] = u + v;
            x[start + j + len / 2] = u - v;
          }
        }
      }
      return;
    }
    scratch.assign(n_, Complex{});
    for (std::size_t k = 0; k < n_; ++k) {
      Complex acc{};
      for (std::size_t j = 0; j < n_; ++j) acc += x[j] * root(j * k);
      scratch[k] = acc;
    }
    std::copy(scratch.begin(), scratch.end(), x.begin());
  }

 private:
  std::size_t n_;
  bool pow2_;
  std::vector<Complex> roots_;
  std::vector<std::size_t> rev_;
};

inline const FftPlan& plan_for(std::size_t n) {
  static std::mutex mu;
  static std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan>(n);
  return *slot;
}

// Unnormalized 2-D transform of one H x W plane in natural (unshifted) layout.
inline void transform_plane(std::span<Complex> plane, std::size_t h, std::size_t w, bool inverse) {
  const FftPlan& row_plan = plan_for(w);
  const FftPlan& col_plan = plan_for(h);
  std::vector<Complex> scratch;
  for (std::size_t y = 0; y < h; ++y) row_plan.run(plane.subspan(y * w, w), inverse, scratch);
  std::vector<Complex> col(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) col[y] = plane[y * w + x];
    col_plan.run(col, inverse, scratch);
    for (std::size_t y = 0; y < h; ++y) plane[y * w + x] = col[y];
  }
}

// Natural index k -> centered index.
inline std::size_t shift_index(std::size_t k, std::size_t n) { return (k + n / 2) % n; }
// Centered index i -> natural index.
inline std::size_t unshift_index(std::size_t i, std::size_t n) { return (i + n - n / 2) % n; }

inline void require_image(const Tensor& x, const char* op) {
  if (x.rank() != 3) throw DimensionError(std::string(op) + ": expected CxHxW image, got " + ad::shape_string(x.shape()));
  if (x.extent(0) == 0 || x.extent(1) == 0 || x.extent(2) == 0) {
    throw DimensionError(std::string(op) + ": empty image " + ad::shape_string(x.shape()));
  }
}

}  // namespace detail

struct Spectrum {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Complex> bins;  // channels x height x width, centered

  Complex& at(std::size_t c, std::size_t u, std::size_t v) { return bins[(c * height + u) * width + v]; }
  const Complex& at(std::size_t c, std::size_t u, std::size_t v) const { return bins[(c * height + u) * width + v]; }
  std::size_t plane() const { return height * width; }
};

// Forward transform of each channel, center-shifted.
inline Spectrum fft2(const Tensor& image) {
  detail::require_image(image, "fft2");
  Spectrum s{image.extent(0), image.extent(1), image.extent(2), {}};
  const std::size_t hw = s.plane();
  s.bins.resize(s.channels * hw);
  std::vector<Complex> plane(hw);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t i = 0; i < hw; ++i) plane[i] = image[c * hw + i];
    detail::transform_plane(plane, s.height, s.width, false);
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x)
        s.at(c, detail::shift_index(y, s.height), detail::shift_index(x, s.width)) = plane[y * s.width + x];
  }
  return s;
}

// Inverse of fft2. Fails if the result is not real to within kImagResidueTolerance.
inline Tensor ifft2(const Spectrum& s) {
  if (s.channels == 0 || s.height == 0 || s.width == 0) throw DimensionError("ifft2: empty spectrum");
  if (s.bins.size() != s.channels * s.plane()) throw DimensionError("ifft2: malformed spectrum");
  const std::size_t hw = s.plane();
  Tensor out(Shape{s.channels, s.height, s.width});
  std::vector<Complex> plane(hw);
  const double norm = 1.0 / static_cast<double>(hw);
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x)
        plane[detail::unshift_index(y, s.height) * s.width + detail::unshift_index(x, s.width)] = s.at(c, y, x);
    detail::transform_plane(plane, s.height, s.width, true);
    for (std::size_t i = 0; i < hw; ++i) {
      const Complex v = plane[i] * norm;
      if (std::abs(v.imag()) >= kImagResidueTolerance) {
        throw ConsistencyError("ifft2: imaginary residue " + std::to_string(v.imag()) + " at channel " +
                               std::to_string(c) + ", pixel " + std::to_string(i));
      }
      out[c * hw + i] = v.real();
    }
  }
  return out;
}

// Partition of the centered H x W grid into N annuli of equal normalized radius.
// Bin (u,v) has r = |(u,v) - center| / |corner - center| and belongs to band
// min(floor(r*N), N-1). The comparison is done in exact integer arithmetic.
class BandMaskSet {
 public:
  BandMaskSet() = default;

  BandMaskSet(std::size_t height, std::size_t width, std::size_t bands)
      : height_(height), width_(width), bands_(bands), band_of_(height * width) {
    if (height == 0 || width == 0) throw DimensionError("band masks need a non-empty grid");
    if (bands == 0) throw ConfigError("band count must be at least 1");
    const std::int64_t cy = static_cast<std::int64_t>(height / 2);
    const std::int64_t cx = static_cast<std::int64_t>(width / 2);
    const std::int64_t corner2 = cy * cy + cx * cx;
    std::set<std::int64_t> radii;
    for (std::size_t u = 0; u < height; ++u) {
      for (std::size_t v = 0; v < width; ++v) {
        const std::int64_t dy = static_cast<std::int64_t>(u) - cy;
        const std::int64_t dx = static_cast<std::int64_t>(v) - cx;
        radii.insert(dy * dy + dx * dx);
      }
    }
    if (bands > radii.size()) {
      throw ConfigError("band count " + std::to_string(bands) + " exceeds the " + std::to_string(radii.size()) +
                        " distinct frequency radii of a " + std::to_string(height) + "x" + std::to_string(width) +
                        " grid");
    }
    const std::int64_t n_bands = static_cast<std::int64_t>(bands);
    counts_.assign(bands, 0);
    for (std::size_t u = 0; u < height; ++u) {
      for (std::size_t v = 0; v < width; ++v) {
        const std::int64_t dy = static_cast<std::int64_t>(u) - cy;
        const std::int64_t dx = static_cast<std::int64_t>(v) - cx;
        const std::int64_t d2 = dy * dy + dx * dx;
        std::int64_t n = 0;
        if (corner2 > 0) {
          // largest n with n^2 * corner2 <= d2 * N^2
          n = static_cast<std::int64_t>(std::floor(std::sqrt(static_cast<double>(d2) / corner2) * n_bands));
          while (n > 0 && n * n * corner2 > d2 * n_bands * n_bands) --n;
          while ((n + 1) * (n + 1) * corner2 <= d2 * n_bands * n_bands) ++n;
        }
        n = std::min(n, n_bands - 1);
        band_of_[u * width + v] = static_cast<std::uint16_t>(n);
        ++counts_[static_cast<std::size_t>(n)];
      }
    }
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t bands() const { return bands_; }

  std::size_t band_of(std::size_t u, std::size_t v) const { return band_of_[u * width_ + v]; }
  std::span<const std::uint16_t> band_map() const { return band_of_; }
  std::size_t bin_count(std::size_t band) const { return counts_.at(band); }

  // Binary H x W mask of one band.
  Tensor mask(std::size_t band) const {
    if (band >= bands_) throw DimensionError("band index " + std::to_string(band) + " out of range");
    Tensor m(Shape{height_, width_});
    for (std::size_t i = 0; i < band_of_.size(); ++i) m[i] = band_of_[i] == band ? 1.0 : 0.0;
    return m;
  }

  void require_grid(std::size_t height, std::size_t width, const char* op) const {
    if (height != height_ || width != width_) {
      throw DimensionError(std::string(op) + ": masks are " + std::to_string(height_) + "x" + std::to_string(width_) +
                           ", image is " + std::to_string(height) + "x" + std::to_string(width));
    }
  }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t bands_ = 0;
  std::vector<std::uint16_t> band_of_;
  std::vector<std::size_t> counts_;
};

inline BandMaskSet make_band_masks(std::size_t height, std::size_t width, std::size_t bands) {
  return BandMaskSet(height, width, bands);
}

namespace detail {

// Re ifft2(X * gain[band]) for one channel plane; `gains` indexed by band.
inline void filter_plane(std::span<const Complex> centered, const BandMaskSet& masks, std::span<const double> gains,
                         std::span<double> out) {
  const std::size_t h = masks.height(), w = masks.width();
  std::vector<Complex> plane(h * w);
  const auto band = masks.band_map();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      plane[unshift_index(y, h) * w + unshift_index(x, w)] = centered[y * w + x] * gains[band[y * w + x]];
  transform_plane(plane, h, w, true);
  const double norm = 1.0 / static_cast<double>(h * w);
  for (std::size_t i = 0; i < h * w; ++i) out[i] = plane[i].real() * norm;
}

// Centered spectrum of a real plane.
inline void forward_plane(std::span<const double> values, std::size_t h, std::size_t w, std::span<Complex> centered) {
  std::vector<Complex> plane(values.begin(), values.end());
  transform_plane(plane, h, w, false);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) centered[shift_index(y, h) * w + shift_index(x, w)] = plane[y * w + x];
}

}  // namespace detail

// Channels x N x H x W spatial frequency components. Differentiable in the image.
inline Tensor decompose(const Tensor& image, const BandMaskSet& masks) {
  detail::require_image(image, "decompose");
  const std::size_t c_count = image.extent(0), h = image.extent(1), w = image.extent(2);
  masks.require_grid(h, w, "decompose");
  const std::size_t n_bands = masks.bands(), hw = h * w;
  const Spectrum s = fft2(image);
  Tensor out(Shape{c_count, n_bands, h, w});
  std::vector<double> gains(n_bands);
  for (std::size_t c = 0; c < c_count; ++c) {
    const std::span<const Complex> plane(s.bins.data() + c * hw, hw);
    for (std::size_t n = 0; n < n_bands; ++n) {
      std::fill(gains.begin(), gains.end(), 0.0);
      gains[n] = 1.0;
      detail::filter_plane(plane, masks, gains, out.values().subspan((c * n_bands + n) * hw, hw));
    }
  }
  return ad::Tape::record(std::move(out), {&image}, [&] {
    // Each band filter is real and conjugate-symmetric, hence self-adjoint, so
    // the adjoint is the sum of the filtered upstream gradients.
    return ad::Adjoint([masks, c_count, n_bands, h, w, hw](std::span<const double> g, ad::GradSink& sink) {
      auto gx = sink.buffer(0);
      std::vector<Complex> spec(hw), acc(hw);
      std::vector<double> gains(n_bands, 1.0), tmp(hw);
      for (std::size_t c = 0; c < c_count; ++c) {
        std::fill(acc.begin(), acc.end(), Complex{});
        for (std::size_t n = 0; n < n_bands; ++n) {
          detail::forward_plane(g.subspan((c * n_bands + n) * hw, hw), h, w, spec);
          for (std::size_t i = 0; i < hw; ++i)
            if (masks.band_map()[i] == n) acc[i] += spec[i];
        }
        detail::filter_plane(acc, masks, gains, tmp);
        for (std::size_t i = 0; i < hw; ++i) gx[c * hw + i] += tmp[i];
      }
    });
  });
}

// x_hat[c] = sum_n weights[c,n] * (spatial_gain (*) stack[c,n]).
// Differentiable in the stack, the weights and the optional spatial gain map.
inline Tensor recompose(const Tensor& stack, const Tensor& weights, const Tensor* spatial_gain = nullptr) {
  if (stack.rank() != 4) throw DimensionError("recompose: stack must be CxNxHxW, got " + ad::shape_string(stack.shape()));
  const std::size_t c_count = stack.extent(0), n_bands = stack.extent(1), h = stack.extent(2), w = stack.extent(3);
  const std::size_t hw = h * w;
  if (weights.shape() != Shape{c_count, n_bands}) {
    throw DimensionError("recompose: weights " + ad::shape_string(weights.shape()) + " do not match stack " +
                         ad::shape_string(stack.shape()));
  }
  if (!weights.all_finite()) throw NumericError("recompose: non-finite band gain");
  if (spatial_gain) {
    if (spatial_gain->shape() != Shape{h, w}) {
      throw DimensionError("recompose: spatial gain " + ad::shape_string(spatial_gain->shape()) + " vs " +
                           std::to_string(h) + "x" + std::to_string(w));
    }
    if (!spatial_gain->all_finite()) throw NumericError("recompose: non-finite spatial gain");
  }
  const Tensor unit = Tensor::ones(Shape{h, w});
  const Tensor& map = spatial_gain ? *spatial_gain : unit;

  Tensor out(Shape{c_count, h, w});
  for (std::size_t c = 0; c < c_count; ++c)
    for (std::size_t n = 0; n < n_bands; ++n) {
      const double wt = weights[c * n_bands + n];
      const double* comp = stack.values().data() + (c * n_bands + n) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] += wt * map[i] * comp[i];
    }
  return ad::Tape::record(std::move(out), {&stack, &weights, &map}, [&] {
    return ad::Adjoint([sv = stack.vector(), wv = weights.vector(), mv = map.vector(), c_count, n_bands, hw](
                           std::span<const double> g, ad::GradSink& sink) {
      if (sink.wants(0)) {
        auto gs = sink.buffer(0);
        for (std::size_t c = 0; c < c_count; ++c)
          for (std::size_t n = 0; n < n_bands; ++n)
            for (std::size_t i = 0; i < hw; ++i)
              gs[(c * n_bands + n) * hw + i] += wv[c * n_bands + n] * mv[i] * g[c * hw + i];
      }
      if (sink.wants(1)) {
        auto gw = sink.buffer(1);
        for (std::size_t c = 0; c < c_count; ++c)
          for (std::size_t n = 0; n < n_bands; ++n) {
            double acc = 0;
            for (std::size_t i = 0; i < hw; ++i) acc += g[c * hw + i] * mv[i] * sv[(c * n_bands + n) * hw + i];
            gw[c * n_bands + n] += acc;
          }
      }
      if (sink.wants(2)) {
        auto gm = sink.buffer(2);
        for (std::size_t c = 0; c < c_count; ++c)
          for (std::size_t n = 0; n < n_bands; ++n)
            for (std::size_t i = 0; i < hw; ++i)
              gm[i] += g[c * hw + i] * wv[c * n_bands + n] * sv[(c * n_bands + n) * hw + i];
      }
    });
  });
}

// Sum of |X|^2 over the bins of each band, per channel: C x N.
inline Tensor band_energy(const Tensor& image, const BandMaskSet& masks) {
  detail::require_image(image, "band_energy");
  masks.require_grid(image.extent(1), image.extent(2), "band_energy");
  const Spectrum s = fft2(image);
  const std::size_t hw = s.plane();
  Tensor out(Shape{s.channels, masks.bands()});
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t i = 0; i < hw; ++i) out[c * masks.bands() + masks.band_map()[i]] += std::norm(s.bins[c * hw + i]);
  return out;
}

// Applies per-(sample, channel, band) gains to a batch of precomputed spectra:
// out[b,c] = Re ifft2(X[b,c] * gains[b,c,band(bin)]). Equivalent to
// recompose(decompose(x), gains) but costs one inverse transform per plane.
// Differentiable in `gains` (shape B x C x N); the adjoint needs one forward
// transform of the upstream gradient per plane.
inline Tensor filter_bands(std::shared_ptr<const std::vector<Spectrum>> spectra, const BandMaskSet& masks,
                           const Tensor& gains) {
  const std::size_t batch = spectra->size();
  if (batch == 0) throw DimensionError("filter_bands: empty batch");
  const std::size_t c_count = spectra->front().channels, h = spectra->front().height, w = spectra->front().width;
  masks.require_grid(h, w, "filter_bands");
  const std::size_t n_bands = masks.bands(), hw = h * w;
  if (gains.shape() != Shape{batch, c_count, n_bands}) {
    throw DimensionError("filter_bands: gains " + ad::shape_string(gains.shape()) + " for batch of " +
                         std::to_string(batch) + " spectra with " + std::to_string(c_count) + " channels and " +
                         std::to_string(n_bands) + " bands");
  }
  if (!gains.all_finite()) throw NumericError("filter_bands: non-finite band gain");
  Tensor out(Shape{batch, c_count, h, w});
  for (std::size_t b = 0; b < batch; ++b) {
    const Spectrum& s = (*spectra)[b];
    if (s.channels != c_count || s.height != h || s.width != w) throw DimensionError("filter_bands: ragged batch");
    for (std::size_t c = 0; c < c_count; ++c) {
      detail::filter_plane(std::span<const Complex>(s.bins.data() + c * hw, hw), masks,
                           gains.values().subspan((b * c_count + c) * n_bands, n_bands),
                           out.values().subspan((b * c_count + c) * hw, hw));
    }
  }
  return ad::Tape::record(std::move(out), {&gains}, [&] {
    return ad::Adjoint([spectra, masks, batch, c_count, n_bands, h, w, hw](std::span<const double> g,
                                                                            ad::GradSink& sink) {
      // d/dgain_n = (1/HW) Re sum_{k in band n} X(k) conj(G(k))
      auto gg = sink.buffer(0);
      std::vector<Complex> spec(hw);
      const auto band = masks.band_map();
      const double norm = 1.0 / static_cast<double>(hw);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < c_count; ++c) {
          detail::forward_plane(g.subspan((b * c_count + c) * hw, hw), h, w, spec);
          const Complex* x = (*spectra)[b].bins.data() + c * hw;
          double* dst = gg.data() + (b * c_count + c) * n_bands;
          for (std::size_t i = 0; i < hw; ++i) dst[band[i]] += norm * (x[i] * std::conj(spec[i])).real();
        }
    });
  });
}

// Writes log(1 + |X (*) mask_n|) of every band and channel as band_{n}_{c}.pgm,
// scaled per channel by the largest log-magnitude over all bands.
inline void dump_band_log_magnitude(const Tensor& image, const BandMaskSet& masks, const std::filesystem::path& dir) {
  detail::require_image(image, "dump_band_log_magnitude");
  masks.require_grid(image.extent(1), image.extent(2), "dump_band_log_magnitude");
  const Spectrum s = fft2(image);
  const std::size_t hw = s.plane();
  std::filesystem::create_directories(dir);
  for (std::size_t c = 0; c < s.channels; ++c) {
    std::vector<double> logmag(hw);
    double peak = 0;
    for (std::size_t i = 0; i < hw; ++i) {
      logmag[i] = std::log1p(std::abs(s.bins[c * hw + i]));
      peak = std::max(peak, logmag[i]);
    }
    for (std::size_t n = 0; n < masks.bands(); ++n) {
      std::vector<double> plane(hw, 0.0);
      for (std::size_t i = 0; i < hw; ++i)
        if (masks.band_map()[i] == n && peak > 0) plane[i] = logmag[i] / peak;
      io::write_pgm(dir / ("band_" + std::to_string(n) + "_" + std::to_string(c) + ".pgm"), s.height, s.width, plane);
    }
  }
}

}  // namespace suda::spectral

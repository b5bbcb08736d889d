#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "suda/binary_io.hpp"
#include "suda/metrics.hpp"
#include "suda/spectral.hpp"
#include "suda/synth_data.hpp"

namespace {

using namespace suda;
using namespace suda::data;

// CRC-32 of the encoded seed-42 default source and target files, recorded
// from a reference generation.
constexpr std::uint32_t kGoldenSourceCrc = 0xe7528563;
constexpr std::uint32_t kGoldenTargetCrc = 0x1c7a65a0;

GenerateConfig small_config(std::size_t count = 40) {
  GenerateConfig c;
  c.source_count = count;
  c.target_count = count;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("suda_synth_" + name);
}

TEST(ShiftSpec, DefaultLayout) {
  const auto s = default_shift();
  ASSERT_EQ(s.perturbations.size(), 3u);
  EXPECT_EQ(s.perturbations[0].kind, PerturbationKind::Illumination);
  EXPECT_EQ(s.perturbations[0].bands, band_range(0, 1));
  EXPECT_EQ(s.perturbations[1].kind, PerturbationKind::Texture);
  EXPECT_EQ(s.perturbations[1].bands, band_range(12, 15));
  EXPECT_EQ(s.perturbations[2].kind, PerturbationKind::Noise);
  EXPECT_EQ(s.perturbations[2].bands, band_range(28, 31));
  const std::vector<std::uint16_t> expected{0, 1, 12, 13, 14, 15, 28, 29, 30, 31};
  EXPECT_EQ(s.perturbed_bands(), expected);
  EXPECT_NO_THROW(s.validate(32));
}

TEST(ShiftSpec, InvalidBandIsConfigError) {
  auto s = default_shift();
  EXPECT_THROW(s.validate(16), ConfigError);
  s = DomainShiftSpec{};
  s.perturbations.push_back({PerturbationKind::Noise, {3}, -0.1});
  EXPECT_THROW(s.validate(32), ConfigError);
  GenerateConfig c = small_config();
  c.shift.perturbations.push_back({PerturbationKind::Noise, {32}, 0.1});
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(ShiftSpec, ScaledZeroRemovesEverything) {
  const auto s = default_shift().scaled(0.0);
  EXPECT_TRUE(s.perturbed_bands().empty());
  for (double g : s.color_gain) EXPECT_EQ(g, 1.0);
}

TEST(ShiftSpec, ProportionalLayoutForOtherBandCounts) {
  for (std::size_t n : {8u, 16u, 64u}) {
    const auto s = default_shift(n);
    EXPECT_NO_THROW(s.validate(n));
    EXPECT_EQ(s.perturbations[0].bands.front(), 0u);
    EXPECT_EQ(s.perturbations[2].bands.back(), n - 1);
  }
}

TEST(Generate, RequiresTwoClassesAndSamples) {
  GenerateConfig c = small_config();
  c.classes = 1;
  EXPECT_THROW(generate(c), ConfigError);
  c = small_config();
  c.target_count = 0;
  EXPECT_THROW(generate(c), ConfigError);
}

TEST(Generate, ShapesRangeAndLabels) {
  const auto d = generate(small_config(41));
  for (const Dataset* ds : {&d.source, &d.target}) {
    EXPECT_EQ(ds->count, 41u);
    EXPECT_EQ(ds->images.size(), 41u * 3 * 32 * 32);
    for (float v : ds->images) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_TRUE(d.source.perturbed_bands.empty());
  EXPECT_EQ(d.target.perturbed_bands, default_shift().perturbed_bands());
}

TEST(Generate, ClassPriorsMatchExactly) {
  GenerateConfig c = small_config(100);
  c.classes = 5;
  const auto d = generate(c);
  std::map<std::uint16_t, int> src, tgt;
  for (auto l : d.source.labels) ++src[l];
  for (auto l : d.target.labels) ++tgt[l];
  EXPECT_EQ(src, tgt);
  for (const auto& [label, n] : src) EXPECT_EQ(n, 20) << "class " << label;
}

TEST(Generate, TargetLabelsFollowTheirBaseImage) {
  // The target image is its base pattern plus the shift; regenerating the base
  // from the same stream and label must reproduce the pre-shift structure.
  GenerateConfig c = small_config(12);
  c.shift = DomainShiftSpec{};
  const auto d = generate(c);
  for (std::size_t i = 0; i < 12; ++i) {
    Rng rng(c.seed, "sample/target", i);
    const ad::Tensor base = base_image(d.target.labels[i], 32, 32, rng);
    const ad::Tensor stored = d.target.image(i);
    for (std::size_t j = 0; j < base.size(); ++j)
      EXPECT_NEAR(stored[j], std::clamp(base[j], 0.0, 1.0), 1e-6);
  }
}

TEST(Generate, SameSeedIsByteIdentical) {
  const auto a = generate(small_config());
  const auto b = generate(small_config());
  EXPECT_EQ(encode(a.source), encode(b.source));
  EXPECT_EQ(encode(a.target), encode(b.target));
  GenerateConfig other = small_config();
  other.seed = 43;
  EXPECT_NE(encode(generate(other).target), encode(a.target));
}

TEST(Generate, ShiftRaisesEnergyOnlyOnPerturbedBands) {
  // Measured before clamping, where the band structure is exact.
  const std::size_t n = 32, count = 200;
  const auto masks = spectral::make_band_masks(32, 32, n);
  DomainShiftSpec spec;
  spec.perturbations.push_back({PerturbationKind::Illumination, band_range(0, 2), 0.1});
  const TextureBank bank = make_texture_bank(spec, masks, 7);
  std::vector<double> diff(n, 0.0), base_energy(n, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(7, "sample", i), shift_rng(7, "shift", i);
    const ad::Tensor base = base_image(i % 4, 32, 32, rng);
    const ad::Tensor shifted = apply_shift(base, spec, masks, bank, shift_rng);
    const ad::Tensor eb = spectral::band_energy(base, masks), es = spectral::band_energy(shifted, masks);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t b = 0; b < n; ++b) {
        diff[b] += (es[c * n + b] - eb[c * n + b]) / count;
        base_energy[b] += eb[c * n + b] / count;
      }
  }
  for (std::size_t b = 0; b < n; ++b) {
    if (b <= 2) {
      EXPECT_GT(diff[b], 0.0) << "band " << b;
    } else {
      EXPECT_LT(std::abs(diff[b]), 1e-6 * base_energy[b]) << "band " << b;
    }
  }
}

TEST(Generate, DefaultShiftTouchesOnlyItsBands) {
  const std::size_t n = 32;
  const auto masks = spectral::make_band_masks(32, 32, n);
  DomainShiftSpec spec = default_shift();
  spec.color_offset = {0, 0, 0};
  const TextureBank bank = make_texture_bank(spec, masks, 3);
  const auto perturbed = spec.perturbed_bands();
  std::vector<double> diff(n, 0.0), base_energy(n, 0.0);
  for (std::size_t i = 0; i < 100; ++i) {
    Rng rng(3, "sample", i), shift_rng(3, "shift", i);
    const ad::Tensor base = base_image(i % 4, 32, 32, rng);
    const ad::Tensor eb = spectral::band_energy(base, masks);
    const ad::Tensor es = spectral::band_energy(apply_shift(base, spec, masks, bank, shift_rng), masks);
    for (std::size_t k = 0; k < es.size(); ++k) {
      diff[k % n] += es[k] - eb[k];
      base_energy[k % n] += eb[k];
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    const bool hit = std::find(perturbed.begin(), perturbed.end(), b) != perturbed.end();
    if (hit) {
      EXPECT_GT(diff[b], 0.0) << "band " << b;
    } else {
      EXPECT_LT(std::abs(diff[b]), 1e-6 * base_energy[b]) << "band " << b;
    }
  }
}

TEST(Generate, ZeroShiftProbeIsAtChance) {
  GenerateConfig c;
  c.shift = default_shift().scaled(0.0);
  const auto d = generate(c);
  const double acc = metrics::domain_probe_accuracy(d.source, d.target);
  EXPECT_NEAR(acc, 0.5, 0.03);
}

TEST(Generate, DefaultShiftProbeSeparatesDomains) {
  const auto d = generate(GenerateConfig{});
  EXPECT_GT(metrics::domain_probe_accuracy(d.source, d.target), 0.90);
}

TEST(Generate, GoldenChecksumOfDefaultDataset) {
  const auto d = generate(GenerateConfig{});
  const auto src = bin::crc32(encode(d.source));
  const auto tgt = bin::crc32(encode(d.target));
  EXPECT_EQ(src, kGoldenSourceCrc) << std::hex << "source crc 0x" << src;
  EXPECT_EQ(tgt, kGoldenTargetCrc) << std::hex << "target crc 0x" << tgt;
}

TEST(Dataset, SaveLoadRoundTrip) {
  const auto d = generate(small_config(9));
  const auto path = temp_file("roundtrip.sudadata");
  for (const Dataset* ds : {&d.source, &d.target}) {
    save(*ds, path);
    const Dataset back = load(path);
    EXPECT_EQ(back.count, ds->count);
    EXPECT_EQ(back.height, ds->height);
    EXPECT_EQ(back.width, ds->width);
    EXPECT_EQ(back.seed, ds->seed);
    EXPECT_EQ(back.labels, ds->labels);
    EXPECT_EQ(back.images, ds->images);
    EXPECT_EQ(back.perturbed_bands, ds->perturbed_bands);
    EXPECT_TRUE(back == *ds);
  }
  const Dataset unlabeled = d.target.without_labels();
  save(unlabeled, path);
  EXPECT_FALSE(load(path).has_labels());
  std::filesystem::remove(path);
}

TEST(Dataset, HeaderLayoutIsLittleEndian) {
  const auto bytes = encode(generate(small_config(3)).target);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "SUDADATA");
  EXPECT_EQ(bytes[8], 1);  // version
  EXPECT_EQ(bytes[9], 0);
  EXPECT_EQ(bytes[10], 3);  // count
  EXPECT_EQ(bytes[14], 32);  // H
  EXPECT_EQ(bytes[16], 32);  // W
  EXPECT_EQ(bytes[18], 3);   // C
  EXPECT_EQ(bytes[20], 1);   // has_labels
  EXPECT_EQ(bytes[21], 42);  // seed
  EXPECT_EQ(bytes[29], 10);  // perturbed band count
  const std::size_t expected = 8 + 2 + 4 + 2 + 2 + 2 + 1 + 8 + 2 + 2 * 10 + 3 * 3 * 32 * 32 * 4 + 3 * 2;
  EXPECT_EQ(bytes.size(), expected);
}

TEST(Dataset, TruncationIsFormatErrorWithOffset) {
  const auto bytes = encode(generate(small_config(3)).source);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      decode(part);
      FAIL() << "expected FormatError at cut " << cut;
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), cut);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
  }
}

TEST(Dataset, BadMagicVersionAndTrailingBytes) {
  auto bytes = encode(generate(small_config(2)).source);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode(bad), FormatError);
  bad = bytes;
  bad[8] = 2;
  EXPECT_THROW(decode(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode(bad), FormatError);
  EXPECT_THROW(load(temp_file("does_not_exist")), Error);
}

}  // namespace

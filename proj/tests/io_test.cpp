#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "suda/binary_io.hpp"
#include "suda/checkpoint.hpp"
#include "suda/config.hpp"
#include "suda/image_io.hpp"

namespace {

using namespace suda;

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("suda_io_" + name);
}

// Bitwise reflected CRC-32, polynomial 0xEDB88320.
std::uint32_t crc_oracle(const std::vector<std::uint8_t>& bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::uint8_t b : bytes) {
    crc ^= b;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

TEST(BinaryIo, CrcMatchesBitwiseOracle) {
  const std::string check = "123456789";
  EXPECT_EQ(bin::crc32(std::vector<std::uint8_t>(check.begin(), check.end())), 0xCBF43926u);
  Rng rng(1, "bytes");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint8_t> bytes(rng.below(300));
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng.below(256));
    EXPECT_EQ(bin::crc32(bytes), crc_oracle(bytes));
  }
}

TEST(BinaryIo, LittleEndianRoundTrip) {
  bin::Writer w;
  w.put<std::uint16_t>(0x0102);
  w.put<std::uint32_t>(0xA0B0C0D0u);
  w.put<std::int64_t>(-2);
  w.put_f64(-1.5);
  w.put_f32(0.25f);
  const auto& b = w.bytes();
  EXPECT_EQ(b[0], 0x02);
  EXPECT_EQ(b[1], 0x01);
  EXPECT_EQ(b[2], 0xD0);
  EXPECT_EQ(b[5], 0xA0);
  bin::Reader r(b);
  EXPECT_EQ(r.get<std::uint16_t>("a"), 0x0102);
  EXPECT_EQ(r.get<std::uint32_t>("b"), 0xA0B0C0D0u);
  EXPECT_EQ(r.get<std::int64_t>("c"), -2);
  EXPECT_EQ(r.get_f64("d"), -1.5);
  EXPECT_EQ(r.get_f32("e"), 0.25f);
  EXPECT_EQ(r.remaining(), 0u);
  try {
    r.get<std::uint8_t>("tail");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), b.size());
    EXPECT_NE(std::string(e.what()).find("tail"), std::string::npos);
  }
}

TEST(BinaryIo, FileRoundTripAndMissingFile) {
  const auto path = temp_file("bytes.bin");
  const std::vector<std::uint8_t> bytes{0, 1, 2, 255, 10, 13};
  bin::write_file(path, bytes);
  EXPECT_EQ(bin::read_file(path), bytes);
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  std::filesystem::remove(path);
  EXPECT_THROW(bin::read_file(temp_file("does_not_exist.bin")), DataError);
}

ckpt::Checkpoint sample_checkpoint() {
  ckpt::Checkpoint c;
  c.iteration = 123;
  c.tensors.emplace_back("a.w", ad::Tensor({2, 3}, std::vector<double>{1, -2, 3.5, 0, 1e-300, -7}));
  c.tensors.emplace_back("b", ad::Tensor::scalar(0.1));
  c.tensors.emplace_back("empty", ad::Tensor({0, 4}));
  return c;
}

TEST(Checkpoint, EncodeDecodeRoundTrip) {
  const auto c = sample_checkpoint();
  const auto d = ckpt::decode(ckpt::encode(c));
  EXPECT_EQ(d.iteration, 123u);
  ASSERT_EQ(d.tensors.size(), c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    EXPECT_EQ(d.tensors[i].first, c.tensors[i].first);
    EXPECT_EQ(d.tensors[i].second, c.tensors[i].second);
  }
  EXPECT_TRUE(d.has("b"));
  EXPECT_THROW(d.get("missing"), FormatError);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = ckpt::encode(sample_checkpoint());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "SUDACKPT");
  EXPECT_EQ(bytes[8], 1);
  EXPECT_EQ(bytes[9], 0);
  EXPECT_EQ(bytes[10], 123);
  EXPECT_EQ(bytes[18], 3);  // tensor count
  const std::vector<std::uint8_t> body(bytes.begin(), bytes.end() - 4);
  const std::uint32_t crc = crc_oracle(body);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(bytes[bytes.size() - 4 + k], static_cast<std::uint8_t>(crc >> (8 * k)));
}

TEST(Checkpoint, AnyByteFlipIsDetected) {
  const auto bytes = ckpt::encode(sample_checkpoint());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    auto bad = bytes;
    bad[i] ^= 0x10;
    EXPECT_THROW(ckpt::decode(bad), FormatError) << "byte " << i;
  }
}

TEST(Checkpoint, CrcMismatchReportsOffset) {
  auto bytes = ckpt::encode(sample_checkpoint());
  bytes[30] ^= 1;
  try {
    ckpt::decode(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("CRC"), std::string::npos);
    EXPECT_EQ(e.offset(), bytes.size() - 4);
  }
}

TEST(Checkpoint, TruncationIsFormatError) {
  const auto bytes = ckpt::encode(sample_checkpoint());
  for (std::size_t n : {std::size_t{0}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(ckpt::decode(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + n)), FormatError) << n;
  }
}

// Rewrites the checksum so corruption past the CRC reaches the parser.
std::vector<std::uint8_t> reseal(std::vector<std::uint8_t> bytes) {
  const std::size_t body = bytes.size() - 4;
  const std::uint32_t crc = bin::crc32(bytes.data(), body);
  for (int k = 0; k < 4; ++k) bytes[body + k] = static_cast<std::uint8_t>(crc >> (8 * k));
  return bytes;
}

TEST(Checkpoint, StructuralErrorsBehindValidCrc) {
  auto bytes = ckpt::encode(sample_checkpoint());
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(ckpt::decode(reseal(magic)), FormatError);
  auto version = bytes;
  version[8] = 2;
  try {
    ckpt::decode(reseal(version));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 8u);
  }
  auto count = bytes;
  count[18] = 9;
  EXPECT_THROW(ckpt::decode(reseal(count)), FormatError);
  auto extra = bytes;
  extra.insert(extra.end() - 4, 0);
  EXPECT_THROW(ckpt::decode(reseal(extra)), FormatError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = temp_file("ckpt.sudackpt");
  ckpt::save(sample_checkpoint(), path);
  EXPECT_EQ(ckpt::load(path).iteration, 123u);
  std::filesystem::remove(path);
}

train::TrainConfig tiny_train_config() {
  train::TrainConfig c;
  c.image_size = 4;
  c.asa.bands = 2;
  c.asa.heads = 3;
  c.tier = train::Tier::TwoSt;
  c.seed = 5;
  return c;
}

TEST(Checkpoint, StateRoundTripRestoresArchitecture) {
  const auto cfg = tiny_train_config();
  auto s = train::init_state(cfg);
  s.iteration = 17;
  train::TrainConfig restored_cfg;  // defaults differ from cfg
  const auto r = ckpt::to_state(ckpt::decode(ckpt::encode(ckpt::from_state(s, cfg))), restored_cfg);
  EXPECT_EQ(restored_cfg.tier, train::Tier::TwoSt);
  EXPECT_EQ(restored_cfg.image_size, 4u);
  EXPECT_EQ(restored_cfg.asa.bands, 2u);
  EXPECT_EQ(restored_cfg.asa.heads, 3u);
  EXPECT_EQ(r.iteration, 17u);
  std::vector<ad::Tensor> a, b;
  s.visit([&](const std::string&, const ad::Tensor& t) { a.push_back(t); });
  r.visit([&](const std::string&, const ad::Tensor& t) { b.push_back(t); });
  EXPECT_EQ(a, b);
}

TEST(Checkpoint, StateRejectsMissingWrongShapeAndExtraTensors) {
  const auto cfg = tiny_train_config();
  const auto c = ckpt::from_state(train::init_state(cfg), cfg);
  train::TrainConfig out;

  auto missing = c;
  missing.tensors.pop_back();
  EXPECT_THROW(ckpt::to_state(missing, out), FormatError);

  auto reshaped = c;
  for (auto& [name, t] : reshaped.tensors)
    if (name == "g.w0") t = ad::Tensor({1, 1});
  EXPECT_THROW(ckpt::to_state(reshaped, out), FormatError);

  auto extra = c;
  extra.tensors.emplace_back("stray", ad::Tensor::scalar(1));
  EXPECT_THROW(ckpt::to_state(extra, out), FormatError);

  auto bad_tier = c;
  for (auto& [name, t] : bad_tier.tensors)
    if (name == "config.tier") t = ad::Tensor::scalar(7);
  EXPECT_THROW(ckpt::to_state(bad_tier, out), FormatError);
}

TEST(Config, DefaultsAndEcho) {
  const auto c = cfg::parse_string("");
  EXPECT_EQ(c.n_bands, 32u);
  EXPECT_EQ(c.heads, 8u);
  EXPECT_EQ(c.max_iter, 3000u);
  EXPECT_EQ(c.tier, "two_st_msl");
  const std::string echo = cfg::echo(c);
  EXPECT_NE(echo.find("lambda_c = 0.10000000000000001\n"), std::string::npos) << echo;
  EXPECT_NE(echo.find("tier = two_st_msl\n"), std::string::npos);
  std::size_t lines = 0;
  for (char ch : echo) lines += ch == '\n';
  EXPECT_EQ(lines, cfg::known_keys().size());
  // The echo parses back to the same configuration.
  EXPECT_EQ(cfg::echo(cfg::parse_string(echo)), echo);
}

TEST(Config, CommentsWhitespaceAndOverrides) {
  const auto c = cfg::parse_string(
      "# run\n"
      "   tier = single_st   # trailing\n"
      "\n"
      "lr_gen=0.05\n"
      "seed = 9\n");
  EXPECT_EQ(c.tier, "single_st");
  EXPECT_EQ(c.lr_gen, 0.05);
  EXPECT_EQ(c.seed, 9u);
  const auto t = cfg::to_train_config(c);
  EXPECT_EQ(t.tier, train::Tier::SingleSt);
  EXPECT_EQ(t.lr_gen, 0.05);
}

void expect_config_error(const std::string& text, const std::string& fragment) {
  try {
    cfg::parse_string(text);
    FAIL() << "expected ConfigError for: " << text;
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
  }
}

TEST(Config, ErrorsNameTheProblem) {
  expect_config_error("bogus = 1\n", "unknown config key 'bogus'");
  expect_config_error("seed = 1\nseed = 2\n", "duplicate key 'seed'");
  expect_config_error("seed = 1\nseed = 2\n", "config:2");
  expect_config_error("heads\n", "expected 'key = value'");
  expect_config_error("batch = -3\n", "non-negative");
  expect_config_error("lr_gen = fast\n", "cannot parse lr_gen");
  expect_config_error("lr_gen = 0.1x\n", "cannot parse lr_gen");
  expect_config_error("lr_gen = inf\n", "finite");
  expect_config_error("tier = three_st\n", "unknown tier");
  expect_config_error("attention_mode = fancy\n", "attention");
  expect_config_error("heads = 5\n", "heads (5) must divide");
  expect_config_error("batch = 0\n", "batch");
  expect_config_error("out_dir =\n", "must not be empty");
  expect_config_error("shift_amplitude = -1\n", "shift_amplitude");
}

TEST(Config, SetAndGetByKey) {
  cfg::RunConfig c;
  cfg::set(c, "n_bands", "16");
  EXPECT_EQ(cfg::get(c, "n_bands"), "16");
  EXPECT_THROW(cfg::set(c, "nope", "1"), ConfigError);
  EXPECT_THROW(cfg::get(c, "nope"), ConfigError);
  EXPECT_THROW(cfg::load(temp_file("missing.cfg")), ConfigError);
}

TEST(Config, GenerateConfigScalesShift) {
  auto c = cfg::parse_string("shift_amplitude = 0\nsource_count = 10\n");
  const auto g = cfg::to_generate_config(c);
  EXPECT_EQ(g.source_count, 10u);
  EXPECT_TRUE(g.shift.perturbed_bands().empty());
}

TEST(ImageIo, PpmAndPgmRoundTrip) {
  ad::Tensor img({3, 2, 2}, std::vector<double>{0, 1, 0.5, 0.2, 1, 0, 0, 0, 0.25, 0.25, 0.25, 2.0});
  const auto ppm = temp_file("img.ppm");
  io::write_ppm(ppm, img);
  const auto r = io::read_pnm(ppm);
  EXPECT_EQ(r.channels, 3u);
  EXPECT_EQ(r.width, 2u);
  ASSERT_EQ(r.pixels.size(), 12u);
  EXPECT_EQ(r.pixels[0], 0);    // pixel (0,0) red
  EXPECT_EQ(r.pixels[1], 255);  // pixel (0,0) green
  EXPECT_EQ(r.pixels[2], 64);   // pixel (0,0) blue
  EXPECT_EQ(r.pixels[11], 255);  // clamped
  std::filesystem::remove(ppm);

  const auto pgm = temp_file("img.pgm");
  const std::vector<double> v{0, 0.5, 1, -1, 0.1, 0.9};
  io::write_pgm(pgm, 2, 3, v);
  const auto g = io::read_pnm(pgm);
  EXPECT_EQ(g.channels, 1u);
  EXPECT_EQ(g.height, 2u);
  EXPECT_EQ(g.pixels, (std::vector<std::uint8_t>{0, 128, 255, 0, 26, 230}));
  std::filesystem::remove(pgm);
  EXPECT_THROW(io::write_ppm(pgm, ad::Tensor({1, 2, 2})), DimensionError);
}

}  // namespace

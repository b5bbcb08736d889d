#include <CLI11.hpp>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fcntl.h>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "suda/checkpoint.hpp"
#include "suda/config.hpp"
#include "suda/image_io.hpp"
#include "suda/metrics.hpp"
#include "suda/spectral.hpp"
#include "suda/synth_data.hpp"
#include "suda/trainer.hpp"

namespace fs = std::filesystem;
using namespace suda;
using ad::Tensor;

namespace {

constexpr int kExitError = 1;
constexpr int kExitNumeric = 3;

// Exclusive lock on an output directory for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      if (errno == EEXIST) throw Error("output directory " + dir.string() + " is locked by another run (" + path_.string() + ")");
      throw Error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

cfg::RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  cfg::RunConfig c = path.empty() ? cfg::RunConfig{} : cfg::load(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg::set(c, cfg::detail::trim(kv.substr(0, eq)), cfg::detail::trim(kv.substr(eq + 1)));
  }
  cfg::validate(c);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

struct DataPaths {
  fs::path source, target;
};

DataPaths data_paths(const std::string& dir, const cfg::RunConfig& c) {
  if (!dir.empty()) return {fs::path(dir) / "source.sudadata", fs::path(dir) / "target.sudadata"};
  return {c.source_data, c.target_data};
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const cfg::RunConfig& c, const fs::path& out) {
  DirLock lock(out);
  const auto gc = cfg::to_generate_config(c);
  const auto domains = data::generate(gc);
  const auto src_bytes = data::encode(domains.source);
  const auto tgt_bytes = data::encode(domains.target);
  bin::write_file(out / "source.sudadata", src_bytes);
  bin::write_file(out / "target.sudadata", tgt_bytes);
  std::ostringstream m;
  m << "seed = " << gc.seed << '\n'
    << "classes = " << gc.classes << '\n'
    << "image_size = " << gc.height << '\n'
    << "n_bands = " << gc.bands << '\n'
    << "source_count = " << gc.source_count << '\n'
    << "target_count = " << gc.target_count << '\n'
    << "shift_amplitude = " << c.shift_amplitude << '\n'
    << "perturbed_bands =";
  for (auto b : domains.target.perturbed_bands) m << ' ' << b;
  m << '\n' << domains.shift.describe();
  m << "source_crc32 = " << hex32(bin::crc32(src_bytes)) << '\n'
    << "target_crc32 = " << hex32(bin::crc32(tgt_bytes)) << '\n';
  write_text(out / "manifest.txt", m.str());
  std::cout << "wrote " << (out / "source.sudadata").string() << " (" << domains.source.count << " images, crc32 "
            << hex32(bin::crc32(src_bytes)) << ")\n"
            << "wrote " << (out / "target.sudadata").string() << " (" << domains.target.count << " images, crc32 "
            << hex32(bin::crc32(tgt_bytes)) << ")\n";
  return 0;
}

// Rows of an existing metrics.csv up to and including `iteration`.
std::vector<std::string> kept_rows(const fs::path& csv, std::uint64_t iteration) {
  std::vector<std::string> rows;
  std::ifstream in(csv);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  if (line != train::kMetricsHeader) throw DataError(csv.string() + " does not have the metrics header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (std::stoull(line.substr(0, comma)) <= iteration) rows.push_back(line);
  }
  return rows;
}

int cmd_train(const cfg::RunConfig& c, const fs::path& out, const std::string& data_dir, const std::string& resume,
              bool quiet) {
  DirLock lock(out);
  train::TrainConfig tc = cfg::to_train_config(c);
  const auto paths = data_paths(data_dir, c);
  const data::Dataset source = data::load(paths.source);
  const data::Dataset target = data::load(paths.target);
  write_text(out / "config.resolved", cfg::echo(c));

  train::TrainState state;
  std::vector<std::string> rows;
  if (!resume.empty()) {
    train::TrainConfig from_ckpt = tc;
    state = ckpt::load_state(resume, from_ckpt);
    if (from_ckpt.tier != tc.tier || from_ckpt.asa.bands != tc.asa.bands || from_ckpt.asa.heads != tc.asa.heads ||
        from_ckpt.asa.mode != tc.asa.mode || from_ckpt.classes != tc.classes || from_ckpt.image_size != tc.image_size) {
      throw ConfigError("checkpoint " + resume + " was written with a different architecture or tier");
    }
    rows = kept_rows(out / "metrics.csv", state.iteration);
    if (rows.size() != state.iteration) {
      throw DataError("metrics.csv in " + out.string() + " has " + std::to_string(rows.size()) +
                      " rows up to the checkpoint iteration " + std::to_string(state.iteration));
    }
  } else {
    state = train::init_state(tc);
  }

  const fs::path csv_path = out / "metrics.csv";
  const fs::path tmp_path = out / "metrics.csv.tmp";
  std::ofstream csv(tmp_path, std::ios::trunc);
  if (!csv) throw DataError("cannot write " + tmp_path.string());
  csv << train::kMetricsHeader << '\n';
  for (const auto& r : rows) csv << r << '\n';
  csv.flush();

  train::RunHooks hooks;
  hooks.on_iteration = [&](const train::TrainState& s, const train::RunRecord& rec) {
    csv << train::csv_row(rec) << '\n';
    if (rec.eval) {
      csv.flush();
      if (!quiet) {
        std::fprintf(stderr, "iter %llu  L_sup %.4f  src_acc %.4f  tgt_acc_st %.4f  tgt_acc_raw %.4f\n",
                     static_cast<unsigned long long>(rec.iteration), rec.losses.sup, rec.eval->src_acc,
                     rec.eval->tgt_acc_st, rec.eval->tgt_acc_raw);
      }
    }
    if (s.iteration % c.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "ckpt_%08llu.sudackpt", static_cast<unsigned long long>(s.iteration));
      ckpt::save_state(s, tc, out / name);
    }
  };
  const train::EvalSets sets{&source, &target, c.eval_samples};
  std::optional<train::EvalSets> eval;
  if (target.has_labels()) eval = sets;
  try {
    auto result = train::train_run(source, target, tc, std::move(state), eval, hooks);
    csv.close();
    fs::rename(tmp_path, csv_path);
    ckpt::save_state(result.state, tc, out / "final.sudackpt");
  } catch (...) {
    csv.close();
    fs::rename(tmp_path, csv_path);
    throw;
  }
  std::cout << "wrote " << csv_path.string() << " and " << (out / "final.sudackpt").string() << '\n';
  return 0;
}

train::TrainConfig config_for_checkpoint(const std::string& checkpoint, train::TrainState& state,
                                         std::size_t samples) {
  train::TrainConfig tc;
  state = ckpt::load_state(checkpoint, tc);
  tc.eval_samples = samples;
  return tc;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, std::size_t samples,
             const std::string& csv_out, const std::string& embeddings) {
  train::TrainState state;
  const train::TrainConfig tc = config_for_checkpoint(checkpoint, state, samples);
  const auto paths = data_paths(data_dir, cfg::RunConfig{});
  const data::Dataset source = data::load(paths.source);
  const data::Dataset target = data::load(paths.target);
  const auto masks = spectral::make_band_masks(tc.image_size, tc.image_size, tc.asa.bands);
  const auto detail = train::evaluate_detail(state, {&source, &target, samples}, tc, masks);
  const auto& r = detail.record;
  const std::vector<std::pair<const char*, double>> fields = {
      {"src_acc", r.src_acc},       {"tgt_acc_st", r.tgt_acc_st}, {"tgt_acc_raw", r.tgt_acc_raw},
      {"mmd_raw", r.mmd_raw},       {"mmd_st", r.mmd_st},         {"cdid_raw", r.cdid_raw},
      {"cdid_st", r.cdid_st},       {"cdid_st2", r.cdid_st2},     {"cdid_joint", r.cdid_joint},
      {"idid_s", r.idid_s},         {"idid_t", r.idid_t}};
  std::string header = "iter", row = std::to_string(state.iteration);
  std::cout << "iter " << state.iteration << '\n' << "tier " << train::to_string(tc.tier) << '\n';
  for (const auto& [k, v] : fields) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::cout << k << ' ' << buf << '\n';
    header += std::string(",") + k;
    row += std::string(",") + buf;
  }
  if (!csv_out.empty()) write_text(csv_out, header + "\n" + row + "\n");
  if (!embeddings.empty()) {
    metrics::export_embeddings(embeddings, {{"source_raw", &detail.src_raw},
                                            {"target_raw", &detail.tgt_raw},
                                            {"source_st1", &detail.src_st1},
                                            {"target_st1", &detail.tgt_st1}});
  }
  return 0;
}

int cmd_inspect(const std::string& checkpoint, const std::string& data_dir, const fs::path& out, std::size_t samples,
                std::size_t sample_id) {
  DirLock lock(out);
  train::TrainState state;
  const train::TrainConfig tc = config_for_checkpoint(checkpoint, state, samples);
  const auto paths = data_paths(data_dir, cfg::RunConfig{});
  const data::Dataset target = data::load(paths.target);
  if (sample_id >= target.count) throw DataError("sample id " + std::to_string(sample_id) + " outside the target set");
  const std::size_t n = std::min(samples, target.count);
  const auto masks = spectral::make_band_masks(tc.image_size, tc.image_size, tc.asa.bands);

  std::vector<Tensor> gains;
  for (std::size_t start = 0; start < n; start += 100) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + 100); ++i) idx.push_back(i);
    std::vector<spectral::Spectrum> spectra;
    for (std::size_t b = 0; b < idx.size(); ++b) spectra.push_back(spectral::fft2(target.image(idx[b])));
    gains.push_back(st::gate_to_gains(st::gate_from_descriptors(st::pool_spectra(spectra, masks), state.st1, tc.asa), tc.asa));
  }
  const Tensor all = ad::concat(gains, 0);
  {
    std::ofstream g(out / "gates.csv");
    if (!g) throw DataError("cannot write gates.csv");
    g << "sample_id,channel,band,gate_weight\n";
    char buf[32];
    const std::size_t c_count = all.extent(1), n_bands = all.extent(2);
    for (std::size_t b = 0; b < all.extent(0); ++b)
      for (std::size_t c = 0; c < c_count; ++c)
        for (std::size_t k = 0; k < n_bands; ++k) {
          std::snprintf(buf, sizeof buf, "%.17g", all[(b * c_count + c) * n_bands + k]);
          g << b << ',' << c << ',' << k << ',' << buf << '\n';
        }
  }
  const auto report = metrics::gate_band_report(all, target.perturbed_bands);
  metrics::write_gate_band_report(report, out / "gate_band_report.csv");

  const Tensor image = target.image(sample_id);
  io::write_ppm(out / "before.ppm", image);
  io::write_ppm(out / "after.ppm", st::st_apply(image, state.st1, tc.asa, masks).image);
  io::write_ppm(out / "view2.ppm", st::st_apply(image, state.st2, tc.asa, masks).image);
  spectral::dump_band_log_magnitude(image, masks, out / "bands");
  std::cout << "variant-band mean gate " << report.variant_mean.value_or(std::nan("")) << ", invariant-band mean gate "
            << report.invariant_mean.value_or(std::nan("")) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral domain adaptation experiments on a synthetic two-domain benchmark"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, resume, checkpoint, csv_out, embeddings;
  std::vector<std::string> overrides;
  std::optional<double> shift_amplitude;
  std::optional<std::uint64_t> seed;
  std::size_t samples = 500, sample_id = 0;
  bool quiet = false;

  auto* gen = app.add_subcommand("gen-data", "generate source and target dataset files");
  gen->add_option("--config", config_path, "run config file");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--shift-amplitude", shift_amplitude, "scale of the target shift (0 = no shift)");
  gen->add_option("--seed", seed, "generation seed");
  gen->add_option("--set", overrides, "override a config key (key=value)");

  auto* tr = app.add_subcommand("train", "train and write metrics.csv plus checkpoints");
  tr->add_option("--config", config_path, "run config file");
  tr->add_option("--out", out_dir, "output directory (defaults to out_dir from the config)");
  tr->add_option("--data", data_dir, "directory holding source.sudadata and target.sudadata");
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_option("--set", overrides, "override a config key (key=value)");
  tr->add_flag("--quiet", quiet, "no progress lines");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "directory holding source.sudadata and target.sudadata")->required();
  ev->add_option("--samples", samples, "images per domain");
  ev->add_option("--csv", csv_out, "also write the record as CSV");
  ev->add_option("--embeddings", embeddings, "write penultimate features as CSV");

  auto* in = app.add_subcommand("inspect-st", "dump gates, band images and transformed images");
  in->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  in->add_option("--data", data_dir, "directory holding target.sudadata")->required();
  in->add_option("--out", out_dir, "output directory")->required();
  in->add_option("--samples", samples, "target images summarized in the gate files");
  in->add_option("--sample-id", sample_id, "target image used for the picture dumps");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      cfg::RunConfig c = load_config(config_path, overrides);
      if (shift_amplitude) c.shift_amplitude = *shift_amplitude;
      if (seed) c.seed = *seed;
      cfg::validate(c);
      return cmd_gen_data(c, out_dir);
    }
    if (tr->parsed()) {
      const cfg::RunConfig c = load_config(config_path, overrides);
      return cmd_train(c, out_dir.empty() ? fs::path(c.out_dir) : fs::path(out_dir), data_dir, resume, quiet);
    }
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, samples, csv_out, embeddings);
    if (in->parsed()) return cmd_inspect(checkpoint, data_dir, out_dir, samples, sample_id);
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}

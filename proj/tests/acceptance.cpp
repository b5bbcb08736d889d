// End-to-end acceptance run: prints one PASS/FAIL line per criterion and
// writes the same report to the path given as the first argument.
// Exits 0 once every criterion has a verdict; an exception exits 1.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "suda/checkpoint.hpp"
#include "suda/metrics.hpp"
#include "suda/objectives.hpp"
#include "suda/spectral.hpp"
#include "suda/spectrum_transformer.hpp"
#include "suda/synth_data.hpp"
#include "suda/trainer.hpp"

namespace {

using namespace suda;
using ad::Shape;
using ad::Tensor;
using suda::testing::GradCheckResult;
using suda::testing::gradcheck;
using suda::testing::random_tensor;
using Clock = std::chrono::steady_clock;

constexpr int kGradSeeds = 20;
constexpr double kGradTol = 1e-4;
constexpr int kSpectralSeeds = 50;
constexpr std::uint64_t kTrainSeeds[] = {1, 2, 3};
// Iterations per acceptance training run; the config default is 3000.
constexpr std::size_t kTrainIterations = 1000;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Verdict {
  int id;
  std::string title;
  bool pass;
  std::string detail;
};

class Report {
 public:
  void add(Verdict v) {
    const std::string line =
        std::string(v.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(v.id) + " " + v.title + ": " + v.detail;
    std::cout << line << std::endl;
    lines_.push_back(line);
    passed_ += v.pass;
  }
  void write(const std::string& path) const {
    if (path.empty()) return;
    std::ofstream out(path);
    for (const auto& l : lines_) out << l << '\n';
    out << passed_ << "/" << lines_.size() << " criteria passed\n";
  }
  int passed() const { return passed_; }
  std::size_t total() const { return lines_.size(); }

 private:
  std::vector<std::string> lines_;
  int passed_ = 0;
};

// ---------------------------------------------------------------------------
// Criterion 1: gradient suite

struct GradTracker {
  double worst = 0;
  std::string where;
  std::size_t checks = 0, entries = 0, refined = 0;
  void add(const std::string& name, int seed, const GradCheckResult& r) {
    ++checks;
    entries += r.checked;
    refined += r.refined;
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = name + " seed " + std::to_string(seed) + " (" + r.worst + ")";
    }
  }
};

// Values in [lo, hi] kept at least `gap` away from zero, so rectifier kinks
// stay outside the finite-difference stencil.
Tensor away_from_zero(Shape shape, Rng& rng, double gap = 0.05) {
  Tensor t = random_tensor(std::move(shape), rng, -2, 2);
  for (auto& v : t.values()) v = v < 0 ? v - gap : v + gap;
  return t;
}

void check_primitives(GradTracker& g, int seed) {
  Rng rng(static_cast<std::uint64_t>(seed), "acceptance/primitives");
  auto dotted = [&](const std::string& name, Shape out, std::function<Tensor(const std::vector<Tensor>&)> f,
                    std::vector<Tensor> inputs) {
    const Tensor w = random_tensor(std::move(out), rng);
    g.add(name, seed, gradcheck([&](const std::vector<Tensor>& x) { return ad::dot(f(x), w); }, std::move(inputs)));
  };
  using V = std::vector<Tensor>;
  dotted("matmul", {3, 5}, [](const V& x) { return ad::matmul(x[0], x[1]); },
         {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)});
  dotted("transpose", {4, 3}, [](const V& x) { return ad::transpose(x[0]); }, {random_tensor({3, 4}, rng)});
  dotted("add/sub/mul/div", {6}, [](const V& x) { return ad::add(ad::mul(x[0], x[1]), ad::sub(ad::div(x[0], x[1]), x[1])); },
         {random_tensor({6}, rng), random_tensor({6}, rng, 0.5, 2.0)});
  dotted("scalar broadcast", {6}, [](const V& x) { return ad::mul(x[0], x[1]); },
         {Tensor::scalar(rng.uniform(-1, 1)), random_tensor({6}, rng)});
  dotted("scale/add_scalar/neg", {6}, [](const V& x) { return ad::neg(ad::add_scalar(ad::scale(x[0], -2.5), 0.3)); },
         {random_tensor({6}, rng)});
  dotted("sigmoid", {6}, [](const V& x) { return ad::sigmoid(x[0]); }, {random_tensor({6}, rng, -3, 3)});
  dotted("log_sigmoid", {6}, [](const V& x) { return ad::log_sigmoid(x[0]); }, {random_tensor({6}, rng, -3, 3)});
  dotted("log", {6}, [](const V& x) { return ad::log(x[0]); }, {random_tensor({6}, rng, 0.2, 2)});
  dotted("exp", {6}, [](const V& x) { return ad::exp(x[0]); }, {random_tensor({6}, rng)});
  dotted("square", {6}, [](const V& x) { return ad::square(x[0]); }, {random_tensor({6}, rng)});
  dotted("sqrt", {6}, [](const V& x) { return ad::sqrt(x[0]); }, {random_tensor({6}, rng, 0.2, 2)});
  dotted("relu", {6}, [](const V& x) { return ad::relu(x[0]); }, {away_from_zero({6}, rng)});
  dotted("softmax", {3, 4}, [](const V& x) { return ad::softmax(x[0], 1); }, {random_tensor({3, 4}, rng, -3, 3)});
  dotted("log_softmax", {3, 4}, [](const V& x) { return ad::log_softmax(x[0], 0); }, {random_tensor({3, 4}, rng, -3, 3)});
  dotted("sum", {2, 4}, [](const V& x) { return ad::sum(x[0], {1}); }, {random_tensor({2, 3, 4}, rng)});
  dotted("mean", {3}, [](const V& x) { return ad::mean(x[0], {0, 2}); }, {random_tensor({2, 3, 4}, rng)});
  dotted("max", {2, 3}, [](const V& x) { return ad::max(x[0], {2}); }, {random_tensor({2, 3, 4}, rng)});
  dotted("reshape", {6, 4}, [](const V& x) { return ad::reshape(x[0], {6, 4}); }, {random_tensor({2, 3, 4}, rng)});
  dotted("concat", {2, 7}, [](const V& x) { return ad::concat({x[0], x[1]}, 1); },
         {random_tensor({2, 3}, rng), random_tensor({2, 4}, rng)});
  dotted("slice", {2, 2, 3}, [](const V& x) { return ad::slice(x[0], 1, 3, 5); }, {random_tensor({2, 7, 3}, rng)});
  dotted("swap_last_axes", {2, 3, 7}, [](const V& x) { return ad::swap_last_axes(x[0]); }, {random_tensor({2, 7, 3}, rng)});
  dotted("expand", {2, 4, 3}, [](const V& x) { return ad::expand(x[0], 1, 4); }, {random_tensor({2, 1, 3}, rng)});
  dotted("add_row_bias", {4, 3}, [](const V& x) { return ad::add_row_bias(x[0], x[1]); },
         {random_tensor({4, 3}, rng), random_tensor({3}, rng)});

  // Spectral operators and the transformer on a small grid.
  const auto masks = spectral::make_band_masks(8, 8, 4);
  dotted("decompose/recompose", {2, 8, 8},
         [&](const V& x) { return spectral::recompose(spectral::decompose(x[0], masks), x[1], &x[2]); },
         {random_tensor({2, 8, 8}, rng, 0, 1), random_tensor({2, 4}, rng), random_tensor({8, 8}, rng, 0.5, 1.5)});
  auto spectra = std::make_shared<std::vector<spectral::Spectrum>>();
  for (int b = 0; b < 2; ++b) spectra->push_back(spectral::fft2(random_tensor({3, 8, 8}, rng, 0, 1)));
  dotted("filter_bands", {2, 3, 8, 8}, [&](const V& x) { return spectral::filter_bands(spectra, masks, x[0]); },
         {random_tensor({2, 3, 4}, rng, 0, 1)});

  for (auto mode : {st::AttentionMode::Faithful, st::AttentionMode::Token}) {
    st::AsaConfig cfg;
    cfg.bands = 4;
    cfg.heads = 3;
    cfg.mode = mode;
    Rng prng(static_cast<std::uint64_t>(seed), "acceptance/st");
    st::StParams p = st::make_random_params(cfg, prng);
    for (auto& v : p.gate_w.values()) v = prng.uniform(-0.5, 0.5);
    for (auto& v : p.gate_b.values()) v = prng.uniform(-0.5, 0.5);
    const Tensor img = random_tensor({3, 8, 8}, rng, 0, 1);
    std::vector<Tensor> inputs;
    p.visit([&](const std::string&, const Tensor& t) { inputs.push_back(t); });
    inputs.push_back(img);
    dotted("spectrum transformer " + st::to_string(mode), {3, 8, 8},
           [&](const V& x) {
             st::StParams q = p;
             std::size_t k = 0;
             q.visit([&](const std::string&, Tensor& t) { t = x[k++]; });
             return st::st_apply(x[k], q, cfg, masks).image;
           },
           inputs);
  }

  // Loss terms.
  const std::vector<std::size_t> labels{0, 2, 1};
  g.add("L_sup", seed, gradcheck([&](const V& x) { return obj::supervised_loss(ad::softmax(x[0], 1), labels); },
                                 {random_tensor({3, 3}, rng)}));
  g.add("L_adv", seed, gradcheck([](const V& x) { return obj::adversarial_loss(ad::sigmoid(x[0]), ad::sigmoid(x[1])); },
                                 {random_tensor({4}, rng), random_tensor({3}, rng)}));
  g.add("L_dis", seed, gradcheck([](const V& x) { return obj::discrepancy_loss(x[0], x[1]); },
                                 {random_tensor({6}, rng), random_tensor({6}, rng)}));
  g.add("L_sim", seed, gradcheck([](const V& x) { return obj::similarity_loss(ad::softmax(x[0], 1), ad::softmax(x[1], 1)); },
                                 {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}));
}

// The full weighted objective at the default architecture (N = 32, H = 8,
// 32x32 images) on a 4-image batch, for ST1, ST2 and G, plus the
// discriminator's side of L_adv for C_d.
void check_full_objective(GradTracker& g, int seed, const data::Domains& d) {
  train::TrainConfig cfg;
  cfg.tier = train::Tier::TwoStMsl;
  cfg.seed = static_cast<std::uint64_t>(seed);
  train::TrainState s = train::init_state(cfg);
  Rng rng(cfg.seed, "acceptance/gates");
  for (auto* p : {&s.st1, &s.st2}) {
    for (auto& v : p->gate_w.values()) v = rng.uniform(-0.1, 0.1);
    for (auto& v : p->gate_b.values()) v = rng.uniform(-0.5, 0.5);
  }
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < 4; ++i) idx.push_back(rng.below(d.source.count));
  const train::Batch batch{d.source.batch(idx), d.source.batch_labels(idx), d.target.without_labels().batch(idx)};
  const auto masks = spectral::make_band_masks(32, 32, 32);
  const train::StepContext ctx{cfg, masks, train::detail::spectra_of(batch.source),
                               train::detail::spectra_of(batch.target)};

  auto tensors = [](const auto& p, std::vector<Tensor>& out) {
    p.visit([&](const std::string&, const Tensor& t) { out.push_back(t); });
  };
  auto assign = [](auto p, const std::vector<Tensor>& v, std::size_t& k) {
    p.visit([&](const std::string&, Tensor& t) { t = v[k++]; });
    return p;
  };
  std::vector<Tensor> gen;
  tensors(s.st1, gen);
  tensors(s.st2, gen);
  tensors(s.g, gen);
  g.add("full objective (ST1, ST2, G)", seed,
        gradcheck(
            [&](const std::vector<Tensor>& v) {
              std::size_t k = 0;
              const auto st1 = assign(s.st1, v, k);
              const auto st2 = assign(s.st2, v, k);
              const auto gg = assign(s.g, v, k);
              return train::generator_objective(ctx, batch, st1, st2, gg, s.cd).objective;
            },
            gen, 1e-5, 3, static_cast<std::uint64_t>(seed)));

  const train::Views views = train::make_views(ctx, s.st1, s.st2);
  std::vector<Tensor> disc;
  tensors(s.cd, disc);
  g.add("discriminator objective (C_d)", seed,
        gradcheck(
            [&](const std::vector<Tensor>& v) {
              std::size_t k = 0;
              return train::discriminator_objective(views, assign(s.cd, v, k));
            },
            disc, 1e-5, 10, static_cast<std::uint64_t>(seed)));
}

Verdict criterion_gradients(const data::Domains& d) {
  const auto t0 = Clock::now();
  GradTracker g;
  for (int seed = 1; seed <= kGradSeeds; ++seed) {
    check_primitives(g, seed);
    check_full_objective(g, seed, d);
  }
  const double secs = seconds_since(t0);
  const bool pass = g.worst < kGradTol && secs < 120.0;
  return {1, "gradient suite", pass,
          std::to_string(g.checks) + " checks (" + std::to_string(g.entries) + " entries, " + std::to_string(g.refined) +
              " re-stepped past a rectifier kink) over " + std::to_string(kGradSeeds) + " seeds, max rel err " +
              fmt("%.3g", g.worst) + " (tol 1e-4) at " + g.where + ", runtime " + fmt("%.1f", secs) + " s (limit 120 s)"};
}

// ---------------------------------------------------------------------------
// Criterion 2: spectral identities

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Verdict criterion_spectral() {
  double fft_err = 0, recon_err = 0, ident_err = 0;
  bool partition = true;
  const auto masks = spectral::make_band_masks(32, 32, 32);
  st::AsaConfig cfg;
  for (int seed = 1; seed <= kSpectralSeeds; ++seed) {
    Rng rng(static_cast<std::uint64_t>(seed), "acceptance/spectral");
    const Tensor x = random_tensor({3, 32, 32}, rng, 0, 1);
    fft_err = std::max(fft_err, max_abs_diff(spectral::ifft2(spectral::fft2(x)), x));

    const Tensor stack = spectral::decompose(x, masks);  // C x N x H x W
    const Tensor summed = ad::sum(stack, {1});
    recon_err = std::max(recon_err, max_abs_diff(summed, x));

    st::StParams p = st::make_random_params(cfg, rng);
    for (auto& v : p.gate_w.values()) v = rng.uniform(-1, 1);
    st::AsaOptions opts;
    opts.forced_gate = Tensor::ones({3, 32});
    ident_err = std::max(ident_err, max_abs_diff(st::asa_forward(stack, p, cfg, opts).image, x));

    // Partition on a random grid.
    const std::size_t h = 1 + rng.below(48), w = 1 + rng.below(48);
    const std::size_t n = 1 + rng.below(std::min<std::size_t>(32, std::max(h, w) / 2 + 1));
    const auto m = spectral::make_band_masks(h, w, n);
    std::vector<int> hits(h * w, 0);
    std::size_t counted = 0;
    for (std::size_t b = 0; b < n; ++b) {
      const Tensor mask = m.mask(b);
      for (std::size_t i = 0; i < h * w; ++i) {
        if (mask[i] != 0.0 && mask[i] != 1.0) partition = false;
        hits[i] += mask[i] == 1.0;
      }
      counted += m.bin_count(b);
    }
    for (int k : hits) partition = partition && k == 1;
    partition = partition && counted == h * w;
  }
  const bool pass = fft_err < 1e-10 && partition && recon_err < 1e-8 && ident_err < 1e-8;
  return {2, "spectral identities", pass,
          std::to_string(kSpectralSeeds) + " seeds: FFT round trip " + fmt("%.2e", fft_err) + " (tol 1e-10), masks " +
              (partition ? "partition" : "do NOT partition") + " every grid, sum of components " +
              fmt("%.2e", recon_err) + " (tol 1e-8), unit-gate transformer " + fmt("%.2e", ident_err) + " (tol 1e-8)"};
}

// ---------------------------------------------------------------------------
// Criteria 3 and 4

Verdict criterion_parameter_count() {
  st::AsaConfig cfg;
  const auto p = st::make_zero_params(cfg);
  const std::size_t count = p.attention_parameter_count();
  return {3, "attention parameter count", count == 36864,
          "N = " + std::to_string(cfg.bands) + ", H = " + std::to_string(cfg.heads) + ": P_kvq + P_H = " +
              std::to_string(count) + " (expected 36864)"};
}

Verdict criterion_losses() {
  const double k = 4;
  const Tensor uniform({3, 4}, 0.25);
  const std::vector<std::size_t> labels{0, 1, 3};
  const double ce = obj::supervised_loss(uniform, labels).item() - std::log(k);

  Rng rng(1, "acceptance/losses");
  const Tensor theta = random_tensor({50}, rng);
  const double dis_same = obj::discrepancy_loss(theta, theta).item() - 1.0;
  const double dis_neg = obj::discrepancy_loss(theta, ad::neg(theta)).item() + 1.0;

  const Tensor p = ad::softmax(random_tensor({5, 4}, rng), 1);
  const double sim_same = obj::similarity_loss(p, p).item();
  const Tensor e0({1, 2}, std::vector<double>{1, 0}), e1({1, 2}, std::vector<double>{0, 1});
  const double sim_orth = obj::similarity_loss(e0, e1).item() - std::numbers::sqrt2;

  const double adv = obj::adversarial_loss(Tensor({3}, 0.5), Tensor({5}, 0.5)).item() - 2 * std::log(0.5);

  double worst = 0;
  for (double e : {ce, dis_same, dis_neg, sim_same, sim_orth, adv}) worst = std::max(worst, std::abs(e));
  return {4, "loss exactness", worst < 1e-9,
          "max deviation " + fmt("%.2e", worst) + " (tol 1e-9) over CE uniform = ln K, L_dis = +1/-1, L_sim = 0/sqrt2, "
          "L_adv(0.5) = 2 ln 0.5"};
}

// ---------------------------------------------------------------------------
// Training criteria

struct RunOutcome {
  train::EvalRecord eval;
  double variant_gate = 0, invariant_gate = 0;
  double seconds = 0;
};

RunOutcome train_and_evaluate(const data::Domains& d, train::Tier tier, std::uint64_t seed, double dis_weight = 1.0) {
  train::TrainConfig cfg;
  cfg.tier = tier;
  cfg.seed = seed;
  cfg.max_iter = kTrainIterations;
  cfg.eval_every = kTrainIterations;
  cfg.weights.dis_weight = dis_weight;
  const auto t0 = Clock::now();
  const auto result = train::train_run(d.source, d.target.without_labels(), cfg);
  const auto masks = spectral::make_band_masks(cfg.image_size, cfg.image_size, cfg.asa.bands);
  const auto det = train::evaluate_detail(result.state, {&d.source, &d.target, cfg.eval_samples}, cfg, masks);
  RunOutcome out;
  out.seconds = seconds_since(t0);
  out.eval = det.record;
  const auto report = metrics::gate_band_report(det.tgt_gains, d.target.perturbed_bands);
  out.variant_gate = report.variant_mean.value_or(std::nan(""));
  out.invariant_gate = report.invariant_mean.value_or(std::nan(""));
  std::fprintf(stderr, "  %-10s seed %llu%s: tgt_acc %.3f (raw %.3f) in %.0f s\n", train::to_string(tier).c_str(),
               static_cast<unsigned long long>(seed), dis_weight == 0 ? " (no L_dis)" : "",
               train::primary_accuracy(out.eval, tier), out.eval.tgt_acc_raw, out.seconds);
  return out;
}

struct LadderResults {
  // [tier][seed]
  std::vector<std::vector<RunOutcome>> runs;
  std::vector<RunOutcome> no_dis;
  double ladder_seconds = 0;
};

constexpr train::Tier kTiers[] = {train::Tier::Baseline, train::Tier::SingleSt, train::Tier::TwoSt, train::Tier::TwoStMsl};

LadderResults run_ladder(const data::Domains& d) {
  LadderResults r;
  r.runs.resize(4);
  const auto t0 = Clock::now();
  for (std::uint64_t seed : kTrainSeeds)
    for (std::size_t t = 0; t < 4; ++t) r.runs[t].push_back(train_and_evaluate(d, kTiers[t], seed));
  r.ladder_seconds = seconds_since(t0);
  for (std::uint64_t seed : kTrainSeeds) r.no_dis.push_back(train_and_evaluate(d, train::Tier::TwoStMsl, seed, 0.0));
  return r;
}

Verdict criterion_ladder(const LadderResults& r) {
  double mean[4] = {0, 0, 0, 0};
  for (std::size_t t = 0; t < 4; ++t) {
    for (const auto& o : r.runs[t]) mean[t] += train::primary_accuracy(o.eval, kTiers[t]);
    mean[t] /= static_cast<double>(r.runs[t].size());
  }
  const bool ordered = mean[0] < mean[1] && mean[1] < mean[2] && mean[2] < mean[3];
  const double gain = 100.0 * (mean[3] - mean[0]);
  const double minutes = r.ladder_seconds / 60.0;
  const bool pass = ordered && gain >= 10.0 && minutes < 40.0;
  std::string detail = "mean target accuracy over 3 seeds: baseline " + fmt("%.4f", mean[0]) + ", single_st " +
                       fmt("%.4f", mean[1]) + ", two_st " + fmt("%.4f", mean[2]) + ", two_st_msl " + fmt("%.4f", mean[3]) +
                       "; strict order " + (ordered ? "holds" : "violated") + ", two_st_msl - baseline = " +
                       fmt("%.1f", gain) + " points (need >= 10), " + std::to_string(kTrainIterations) +
                       " iterations per run, ladder runtime " + fmt("%.1f", minutes) + " min (limit 40)";
  return {5, "ablation ladder", pass, detail};
}

Verdict criterion_mmd(const LadderResults& r) {
  bool pass = true;
  std::string detail = "two_st_msl, MMD(ST1 features) vs MMD(raw features):";
  for (std::size_t s = 0; s < r.runs[3].size(); ++s) {
    const auto& e = r.runs[3][s].eval;
    pass = pass && e.mmd_st < e.mmd_raw;
    detail += " seed " + std::to_string(kTrainSeeds[s]) + " " + fmt("%.4f", e.mmd_st) + " < " + fmt("%.4f", e.mmd_raw) + ";";
  }
  return {6, "MMD reduction", pass, detail};
}

Verdict criterion_cdid(const LadderResults& r) {
  bool pass = true;
  std::string detail = "two_st_msl with G frozen:";
  for (std::size_t s = 0; s < r.runs[3].size(); ++s) {
    const auto& e = r.runs[3][s].eval;
    const double bound = std::min(e.cdid_st, e.cdid_st2) * 1.05;
    const bool ok = e.cdid_st < e.cdid_raw && e.cdid_joint <= bound;
    pass = pass && ok;
    detail += " seed " + std::to_string(kTrainSeeds[s]) + " CDID after " + fmt("%.3f", e.cdid_st) + " vs before " +
              fmt("%.3f", e.cdid_raw) + ", joint " + fmt("%.3f", e.cdid_joint) + " vs 1.05 x min single " +
              fmt("%.3f", bound) + (ok ? "" : " [violated]") + ";";
  }
  return {7, "cross-domain distance", pass, detail};
}

Verdict criterion_idid(const LadderResults& r) {
  bool pass = true;
  std::string detail = "IDID(ST1, ST2) with L_dis vs without (source / target):";
  for (std::size_t s = 0; s < r.runs[3].size(); ++s) {
    const auto& with = r.runs[3][s].eval;
    const auto& without = r.no_dis[s].eval;
    const bool ok = with.idid_s > without.idid_s && with.idid_t > without.idid_t;
    pass = pass && ok;
    detail += " seed " + std::to_string(kTrainSeeds[s]) + " " + fmt("%.4g", with.idid_s) + " vs " +
              fmt("%.4g", without.idid_s) + " / " + fmt("%.4g", with.idid_t) + " vs " + fmt("%.4g", without.idid_t) +
              (ok ? "" : " [violated]") + ";";
  }
  return {8, "intra-domain view distance", pass, detail};
}

Verdict criterion_gates(const LadderResults& r) {
  bool pass = true;
  std::string detail = "two_st_msl ST1 mean gate on target images, variant vs invariant bands:";
  for (std::size_t s = 0; s < r.runs[3].size(); ++s) {
    const auto& o = r.runs[3][s];
    const bool ok = o.variant_gate < o.invariant_gate;
    pass = pass && ok;
    detail += " seed " + std::to_string(kTrainSeeds[s]) + " " + fmt("%.4f", o.variant_gate) + " vs " +
              fmt("%.4f", o.invariant_gate) + (ok ? "" : " [violated]") + ";";
  }
  return {9, "gate suppression of variant bands", pass, detail};
}

// ---------------------------------------------------------------------------
// Criterion 10: reproducibility

struct Trajectory {
  std::string csv;
  std::vector<std::uint8_t> checkpoint;
};

Trajectory run_trajectory(const data::Domains& d, const train::TrainConfig& cfg, std::optional<train::TrainState> from,
                          std::vector<std::uint8_t>* mid_checkpoint, std::uint64_t mid) {
  const train::EvalSets eval{&d.source, &d.target, 200};
  train::RunHooks hooks;
  Trajectory t;
  hooks.on_iteration = [&](const train::TrainState& s, const train::RunRecord& rec) {
    t.csv += train::csv_row(rec) + "\n";
    if (mid_checkpoint && s.iteration == mid) *mid_checkpoint = ckpt::encode(ckpt::from_state(s, cfg));
  };
  const auto target = d.target.without_labels();
  const auto result = from ? train::train_run(d.source, target, cfg, *from, eval, hooks)
                           : train::train_run(d.source, target, cfg, eval, hooks);
  t.checkpoint = ckpt::encode(ckpt::from_state(result.state, cfg));
  return t;
}

Verdict criterion_reproducibility(const data::Domains& d) {
  train::TrainConfig cfg;
  cfg.tier = train::Tier::TwoStMsl;
  cfg.seed = 11;
  cfg.max_iter = 20;
  cfg.eval_every = 5;
  std::vector<std::uint8_t> mid;
  const Trajectory a = run_trajectory(d, cfg, std::nullopt, &mid, 10);
  const Trajectory b = run_trajectory(d, cfg, std::nullopt, nullptr, 0);
  const bool identical = a.csv == b.csv && a.checkpoint == b.checkpoint;

  train::TrainConfig resumed_cfg = cfg;
  const train::TrainState restored = ckpt::to_state(ckpt::decode(mid), resumed_cfg);
  const Trajectory c = run_trajectory(d, resumed_cfg, restored, nullptr, 0);
  // Rows 11..20 of the uninterrupted run.
  std::string tail;
  {
    std::istringstream in(a.csv);
    std::string line;
    for (int i = 1; std::getline(in, line); ++i)
      if (i > 10) tail += line + "\n";
  }
  const bool resumed = c.csv == tail && c.checkpoint == a.checkpoint;
  return {10, "reproducibility", identical && resumed,
          std::string("two_st_msl, 20 iterations: repeat run metrics rows and checkpoint bytes ") +
              (identical ? "identical" : "DIFFER") + "; resume from iteration 10 " +
              (resumed ? "reproduces rows 11-20 and final checkpoint bit-exactly" : "DIVERGES")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string report_path = argc > 1 ? argv[1] : "";
  try {
    const auto t0 = Clock::now();
    std::fprintf(stderr, "generating the default benchmark\n");
    const data::Domains d = data::generate(data::GenerateConfig{});
    Report report;
    report.add(criterion_gradients(d));
    report.add(criterion_spectral());
    report.add(criterion_parameter_count());
    report.add(criterion_losses());
    std::fprintf(stderr, "training the ablation ladder\n");
    const LadderResults ladder = run_ladder(d);
    report.add(criterion_ladder(ladder));
    report.add(criterion_mmd(ladder));
    report.add(criterion_cdid(ladder));
    report.add(criterion_idid(ladder));
    report.add(criterion_gates(ladder));
    report.add(criterion_reproducibility(d));
    std::cout << report.passed() << "/" << report.total() << " criteria passed in " << fmt("%.1f", seconds_since(t0) / 60)
              << " min" << std::endl;
    report.write(report_path);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << '\n';
    return 1;
  }
}

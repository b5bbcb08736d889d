#pragma once

// Alternating adversarial training of two spectrum transformers, the task
// classifier G and the domain discriminator C_d, with four ablation tiers.

#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "suda/autodiff.hpp"
#include "suda/errors.hpp"
#include "suda/metrics.hpp"
#include "suda/models.hpp"
#include "suda/objectives.hpp"
#include "suda/rng.hpp"
#include "suda/spectral.hpp"
#include "suda/spectrum_transformer.hpp"
#include "suda/synth_data.hpp"

namespace suda::train {

using ad::Shape;
using ad::Tensor;

enum class Tier { Baseline, SingleSt, TwoSt, TwoStMsl };

inline std::string to_string(Tier t) {
  switch (t) {
    case Tier::Baseline: return "baseline";
    case Tier::SingleSt: return "single_st";
    case Tier::TwoSt: return "two_st";
    case Tier::TwoStMsl: return "two_st_msl";
  }
  return "?";
}

inline Tier parse_tier(const std::string& s) {
  if (s == "baseline") return Tier::Baseline;
  if (s == "single_st") return Tier::SingleSt;
  if (s == "two_st") return Tier::TwoSt;
  if (s == "two_st_msl") return Tier::TwoStMsl;
  throw ConfigError("unknown tier '" + s + "' (expected baseline, single_st, two_st or two_st_msl)");
}

inline bool uses_st(Tier t) { return t != Tier::Baseline; }
inline bool uses_second_st(Tier t) { return t == Tier::TwoSt || t == Tier::TwoStMsl; }
inline bool uses_msl(Tier t) { return t == Tier::TwoStMsl; }

struct TrainConfig {
  std::size_t max_iter = 3000;
  std::size_t batch = 32;
  double lr_gen = 0.01;
  double lr_disc = 0.01;
  double momentum = 0.9;
  obj::LossWeights weights;
  std::uint64_t seed = 0;
  Tier tier = Tier::TwoStMsl;
  std::size_t eval_every = 200;
  std::size_t disc_steps = 1;  // discriminator updates per generator update
  std::size_t classes = 4;
  std::size_t image_size = 32;
  st::AsaConfig asa;
  std::size_t eval_samples = 500;

  void validate() const {
    if (batch == 0) throw ConfigError("batch must be positive");
    if (eval_every == 0) throw ConfigError("eval_every must be positive");
    if (classes < 2) throw ConfigError("classes must be at least 2");
    if (image_size == 0) throw ConfigError("image_size must be positive");
    for (double v : {lr_gen, lr_disc, momentum})
      if (!std::isfinite(v) || v < 0) throw ConfigError("learning rates and momentum must be finite and >= 0");
    weights.validate();
    asa.validate();
  }
};

struct TrainState {
  st::StParams st1, st2;
  models::Mlp g, cd;
  // Momentum slots, same layout as the parameters.
  st::StParams st1_v, st2_v;
  models::Mlp g_v, cd_v;
  std::uint64_t iteration = 0;

  // Every tensor with a stable name; checkpoint order.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& s, F&& f) {
    auto pre = [&f](const std::string& prefix) {
      return [&f, prefix](const std::string& name, auto& t) { f(prefix + name, t); };
    };
    s.st1.visit(pre("st1."));
    s.st2.visit(pre("st2."));
    s.g.visit(pre("g."));
    s.cd.visit(pre("cd."));
    s.st1_v.visit(pre("momentum.st1."));
    s.st2_v.visit(pre("momentum.st2."));
    s.g_v.visit(pre("momentum.g."));
    s.cd_v.visit(pre("momentum.cd."));
  }
};

inline std::size_t input_width(const TrainConfig& cfg) { return 3 * cfg.image_size * cfg.image_size; }

// Independent named streams per network, so every tier starts G from the same
// weights and the two transformers differ from the first step.
inline TrainState init_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  Rng r1(cfg.seed, "init/st1"), r2(cfg.seed, "init/st2"), rg(cfg.seed, "init/g"), rc(cfg.seed, "init/cd");
  s.st1 = st::make_random_params(cfg.asa, r1);
  s.st2 = st::make_random_params(cfg.asa, r2);
  s.g = models::make_mlp(models::classifier_widths(input_width(cfg), cfg.classes), rg);
  s.cd = models::make_mlp(models::discriminator_widths(input_width(cfg)), rc);
  s.st1_v = st::make_zero_params(cfg.asa);
  s.st2_v = st::make_zero_params(cfg.asa);
  s.g_v = models::make_zero_mlp(models::classifier_widths(input_width(cfg), cfg.classes));
  s.cd_v = models::make_zero_mlp(models::discriminator_widths(input_width(cfg)));
  return s;
}

namespace detail {

template <class P>
std::vector<Tensor*> tensors_of(P& p) {
  std::vector<Tensor*> out;
  p.visit([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

template <class P>
std::vector<const Tensor*> tensors_of(const P& p) {
  std::vector<const Tensor*> out;
  p.visit([&](const std::string&, const Tensor& t) { out.push_back(&t); });
  return out;
}

// Applies one optimizer step to `params` using the gradients of their watched copies.
template <class P>
void apply(P& params, P& velocity, const P& watched, const ad::Gradients& grads, const ad::Sgd& sgd) {
  auto p = tensors_of(params);
  auto v = tensors_of(velocity);
  auto w = tensors_of(watched);
  for (std::size_t i = 0; i < p.size(); ++i) sgd.step(*p[i], grads.of(*w[i]), *v[i]);
}

template <class P>
void require_finite_params(const P& params, const char* net, std::uint64_t iteration) {
  params.visit([&](const std::string& name, const Tensor& t) {
    if (!t.all_finite()) {
      throw NumericError(std::string("non-finite parameter ") + net + "." + name + " at iteration " +
                         std::to_string(iteration));
    }
  });
}

inline void require_finite_loss(const char* term, double v, std::uint64_t iteration) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + term + " at iteration " + std::to_string(iteration));
}

using SpectraPtr = std::shared_ptr<const std::vector<spectral::Spectrum>>;

inline SpectraPtr spectra_of(const Tensor& images) {
  const std::size_t batch = images.extent(0), per = images.size() / batch;
  const Shape one{images.extent(1), images.extent(2), images.extent(3)};
  auto out = std::make_shared<std::vector<spectral::Spectrum>>();
  out->reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto first = images.values().begin() + static_cast<std::ptrdiff_t>(b * per);
    out->push_back(spectral::fft2(Tensor(one, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(per)))));
  }
  return out;
}

}  // namespace detail

// One training batch: labeled source images and unlabeled target images.
struct Batch {
  Tensor source;  // B x 3 x H x W
  std::vector<std::size_t> labels;
  Tensor target;  // B' x 3 x H x W
};

// Everything the generator objective is a function of, besides parameters.
struct StepContext {
  const TrainConfig& cfg;
  const spectral::BandMaskSet& masks;
  detail::SpectraPtr src_spectra;
  detail::SpectraPtr tgt_spectra;
};

struct GeneratorTerms {
  Tensor objective;  // what ST1, ST2 and G minimize
  obj::LossParts parts;
  double confusion = 0;
};

// Views fed to G and C_d. For ST tiers the order is [ST1(xs); ST2(xs)] and
// [ST1(xt); ST2(xt)], the second entries only with two transformers.
struct Views {
  Tensor source;
  Tensor target;
};

inline Views make_views(const StepContext& ctx, const st::StParams& st1, const st::StParams& st2) {
  const auto& cfg = ctx.cfg;
  Views v;
  const Tensor s1 = st::st_apply_batch(ctx.src_spectra, ctx.masks, st1, cfg.asa).images;
  const Tensor t1 = st::st_apply_batch(ctx.tgt_spectra, ctx.masks, st1, cfg.asa).images;
  if (uses_second_st(cfg.tier)) {
    const Tensor s2 = st::st_apply_batch(ctx.src_spectra, ctx.masks, st2, cfg.asa).images;
    const Tensor t2 = st::st_apply_batch(ctx.tgt_spectra, ctx.masks, st2, cfg.asa).images;
    v.source = ad::concat({s1, s2}, 0);
    v.target = ad::concat({t1, t2}, 0);
  } else {
    v.source = s1;
    v.target = t1;
  }
  return v;
}

// Generator-side objective: L_sup (averaged over source views)
// + lambda_c * confusion + lambda_s * (w_dis * L_dis + w_sim * L_sim),
// with C_d held fixed. Parameters may be watched or plain.
inline GeneratorTerms generator_objective(const StepContext& ctx, const Batch& batch, const st::StParams& st1,
                                          const st::StParams& st2, const models::Mlp& g, const models::Mlp& cd) {
  const auto& cfg = ctx.cfg;
  const std::size_t bs = batch.labels.size();
  GeneratorTerms out;
  if (!uses_st(cfg.tier)) {
    const Tensor sup = obj::supervised_loss_from_logits(models::classify(batch.source, g).logits, batch.labels);
    out.parts.sup = sup.item();
    out.objective = sup;
    return out;
  }
  const Views v = make_views(ctx, st1, st2);
  const std::size_t views = uses_second_st(cfg.tier) ? 2 : 1;
  const std::size_t bt = batch.target.extent(0);

  std::vector<std::size_t> labels;
  for (std::size_t k = 0; k < views; ++k) labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  // One pass of G over all source views (and target views when MSL is on).
  const Tensor g_in = uses_msl(cfg.tier) ? ad::concat({v.source, v.target}, 0) : v.source;
  const Tensor logits = models::classify(g_in, g).logits;
  const Tensor sup = obj::supervised_loss_from_logits(ad::slice(logits, 0, 0, views * bs), labels);

  const Tensor d_logits = models::discriminate(ad::concat({v.source, v.target}, 0), cd).logits;
  const Tensor d_src = ad::slice(d_logits, 0, 0, views * bs);
  const Tensor d_tgt = ad::slice(d_logits, 0, views * bs, views * (bs + bt));
  const Tensor confusion = obj::confusion_loss_from_logits(d_src, d_tgt);
  out.parts.sup = sup.item();
  out.parts.adv = obj::adversarial_loss_from_logits(d_src, d_tgt).item();
  out.confusion = confusion.item();
  Tensor total = ad::add(sup, ad::scale(confusion, cfg.weights.lambda_c));

  if (uses_msl(cfg.tier)) {
    const Tensor dis = obj::discrepancy_loss(st1.flatten_taped(), st2.flatten_taped());
    const Tensor tl = ad::slice(logits, 0, views * bs, views * bs + 2 * bt);
    const Tensor p1 = ad::softmax(ad::slice(tl, 0, 0, bt), 1);
    const Tensor p2 = ad::softmax(ad::slice(tl, 0, bt, 2 * bt), 1);
    const Tensor sim = obj::similarity_loss(p1, p2);
    out.parts.dis = dis.item();
    out.parts.sim = sim.item();
    const Tensor self =
        ad::add(ad::scale(dis, cfg.weights.dis_weight), ad::scale(sim, cfg.weights.sim_weight));
    total = ad::add(total, ad::scale(self, cfg.weights.lambda_s));
  }
  out.objective = total;
  return out;
}

// Negative L_adv, i.e. the discriminator's binary cross-entropy, on fixed views.
inline Tensor discriminator_objective(const Views& v, const models::Mlp& cd) {
  const std::size_t ns = v.source.extent(0);
  const Tensor logits = models::discriminate(ad::concat({v.source, v.target}, 0), cd).logits;
  return ad::neg(obj::adversarial_loss_from_logits(ad::slice(logits, 0, 0, ns),
                                                   ad::slice(logits, 0, ns, logits.extent(0))));
}

inline obj::LossBreakdown train_step(TrainState& state, const Batch& batch, const TrainConfig& cfg,
                                     const spectral::BandMaskSet& masks) {
  if (batch.labels.empty() || batch.target.rank() != 4 || batch.target.extent(0) == 0) {
    throw DataError("train_step: empty batch");
  }
  if (batch.source.rank() != 4 || batch.source.extent(0) != batch.labels.size()) {
    throw DimensionError("train_step: source batch " + ad::shape_string(batch.source.shape()) + " with " +
                         std::to_string(batch.labels.size()) + " labels");
  }
  const Shape img{3, cfg.image_size, cfg.image_size};
  for (const Tensor* t : {&batch.source, &batch.target}) {
    if (Shape(t->shape().begin() + 1, t->shape().end()) != img) {
      throw DimensionError("train_step: images " + ad::shape_string(t->shape()) + " do not match image_size " +
                           std::to_string(cfg.image_size));
    }
  }
  const std::uint64_t it = state.iteration + 1;
  StepContext ctx{cfg, masks, nullptr, nullptr};
  if (uses_st(cfg.tier)) {
    ctx.src_spectra = detail::spectra_of(batch.source);
    ctx.tgt_spectra = detail::spectra_of(batch.target);
  }

  // (a) discriminator phase on detached transformer outputs.
  if (uses_st(cfg.tier)) {
    const Views v = make_views(ctx, state.st1, state.st2);
    const ad::Sgd sgd{cfg.lr_disc, cfg.momentum};
    for (std::size_t k = 0; k < cfg.disc_steps; ++k) {
      ad::Tape tape;
      const models::Mlp cd = state.cd.watched(tape);
      const Tensor loss = discriminator_objective(v, cd);
      detail::require_finite_loss("L_adv", loss.item(), it);
      detail::apply(state.cd, state.cd_v, cd, tape.backward(loss), sgd);
    }
    detail::require_finite_params(state.cd, "cd", it);
  }

  // (b) generator phase; C_d is a constant here.
  ad::Tape tape;
  const st::StParams st1 = uses_st(cfg.tier) ? state.st1.watched(tape) : state.st1;
  const st::StParams st2 = uses_second_st(cfg.tier) ? state.st2.watched(tape) : state.st2;
  const models::Mlp g = state.g.watched(tape);
  const GeneratorTerms terms = generator_objective(ctx, batch, st1, st2, g, state.cd);
  detail::require_finite_loss("L_sup", terms.parts.sup, it);
  detail::require_finite_loss("L_adv", terms.parts.adv, it);
  detail::require_finite_loss("L_dis", terms.parts.dis, it);
  detail::require_finite_loss("L_sim", terms.parts.sim, it);
  const auto grads = tape.backward(terms.objective);
  const ad::Sgd sgd{cfg.lr_gen, cfg.momentum};
  detail::apply(state.g, state.g_v, g, grads, sgd);
  if (uses_st(cfg.tier)) detail::apply(state.st1, state.st1_v, st1, grads, sgd);
  if (uses_second_st(cfg.tier)) detail::apply(state.st2, state.st2_v, st2, grads, sgd);
  detail::require_finite_params(state.g, "g", it);
  detail::require_finite_params(state.st1, "st1", it);
  detail::require_finite_params(state.st2, "st2", it);

  state.iteration = it;
  return obj::total_objective(terms.parts, cfg.weights);
}

// Batch k of an endless stream of seeded permutations; depends only on
// (seed, label, n, iteration), so resuming needs no sampler state.
class Sampler {
 public:
  Sampler(std::uint64_t seed, std::string label, std::size_t n) : seed_(seed), label_(std::move(label)), n_(n) {
    if (n_ == 0) throw DataError("sampler over an empty dataset");
  }

  std::vector<std::size_t> batch(std::uint64_t iteration, std::size_t size) {
    std::vector<std::size_t> out;
    out.reserve(size);
    std::uint64_t pos = iteration * size;
    while (out.size() < size) {
      const std::uint64_t epoch = pos / n_;
      const auto& perm = permutation(epoch);
      out.push_back(perm[pos % n_]);
      ++pos;
    }
    return out;
  }

 private:
  const std::vector<std::size_t>& permutation(std::uint64_t epoch) {
    if (epoch != cached_epoch_ || perm_.empty()) {
      perm_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
      Rng rng(seed_, label_, epoch);
      rng.shuffle(perm_);
      cached_epoch_ = epoch;
    }
    return perm_;
  }

  std::uint64_t seed_;
  std::string label_;
  std::size_t n_;
  std::uint64_t cached_epoch_ = 0;
  std::vector<std::size_t> perm_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRecord {
  double src_acc = 0;
  double tgt_acc_st = 0;
  double tgt_acc_raw = 0;
  double mmd_raw = 0;
  double mmd_st = 0;
  double cdid_raw = 0;
  double cdid_st = 0;   // ST1 views
  double cdid_st2 = 0;  // ST2 views
  double cdid_joint = 0;
  double idid_s = 0;
  double idid_t = 0;

  friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

// Target accuracy through the tier's inference path.
inline double primary_accuracy(const EvalRecord& r, Tier tier) { return uses_st(tier) ? r.tgt_acc_st : r.tgt_acc_raw; }

struct EvalSets {
  const data::Dataset* source = nullptr;
  const data::Dataset* target = nullptr;  // must carry labels
  std::size_t samples = 500;
};

struct EvalDetail {
  EvalRecord record;
  metrics::FeatureCloud src_raw, tgt_raw, src_st1, tgt_st1, src_st2, tgt_st2;
  Tensor src_gains, tgt_gains;  // ST1 gates, B x C x N
};

namespace detail {

struct Embedded {
  std::vector<std::size_t> preds;
  metrics::FeatureCloud features;
};

inline Embedded embed(const Tensor& images, const models::Mlp& g) {
  const auto c = models::classify(images, g);
  return {metrics::argmax_rows(c.logits), metrics::to_cloud(c.features)};
}

inline void append(Embedded& acc, Embedded part) {
  acc.preds.insert(acc.preds.end(), part.preds.begin(), part.preds.end());
  metrics::FeatureCloud joined(acc.features.rows() + part.features.rows(), part.features.cols());
  if (acc.features.rows()) joined << acc.features, part.features;
  else joined = part.features;
  acc.features = std::move(joined);
}

struct DomainEval {
  Embedded raw, st1, st2;
  std::vector<Tensor> gains;
};

inline DomainEval eval_domain(const data::Dataset& d, std::size_t count, const TrainState& s, const TrainConfig& cfg,
                              const spectral::BandMaskSet& masks) {
  DomainEval out;
  constexpr std::size_t chunk = 100;
  for (std::size_t start = 0; start < count; start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(count, start + chunk); ++i) idx.push_back(i);
    const Tensor images = d.batch(idx);
    const auto spectra = spectra_of(images);
    const auto r1 = st::st_apply_batch(spectra, masks, s.st1, cfg.asa);
    const auto r2 = st::st_apply_batch(spectra, masks, s.st2, cfg.asa);
    append(out.raw, embed(images, s.g));
    append(out.st1, embed(r1.images, s.g));
    append(out.st2, embed(r2.images, s.g));
    out.gains.push_back(r1.gains);
  }
  return out;
}

}  // namespace detail

// Metrics on the first `samples` images of each set. G is frozen for the call,
// so every distance uses the same embedding. No parameter is modified.
inline EvalDetail evaluate_detail(const TrainState& state, const EvalSets& sets, const TrainConfig& cfg,
                                  const spectral::BandMaskSet& masks) {
  if (!sets.source || !sets.target) throw DataError("evaluate: missing evaluation set");
  if (!sets.source->has_labels() || !sets.target->has_labels()) throw DataError("evaluate: evaluation sets need labels");
  const std::size_t ns = std::min(sets.samples, sets.source->count);
  const std::size_t nt = std::min(sets.samples, sets.target->count);
  const TrainState frozen = state;
  const auto src = detail::eval_domain(*sets.source, ns, frozen, cfg, masks);
  const auto tgt = detail::eval_domain(*sets.target, nt, frozen, cfg, masks);

  auto labels_of = [](const data::Dataset& d, std::size_t n) {
    return std::vector<std::size_t>(d.labels.begin(), d.labels.begin() + static_cast<std::ptrdiff_t>(n));
  };
  const auto ys = labels_of(*sets.source, ns), yt = labels_of(*sets.target, nt);

  EvalDetail out;
  auto& r = out.record;
  r.src_acc = metrics::accuracy(uses_st(cfg.tier) ? src.st1.preds : src.raw.preds, ys);
  r.tgt_acc_st = metrics::accuracy(tgt.st1.preds, yt);
  r.tgt_acc_raw = metrics::accuracy(tgt.raw.preds, yt);
  r.mmd_raw = metrics::mmd(src.raw.features, tgt.raw.features);
  r.mmd_st = metrics::mmd(src.st1.features, tgt.st1.features);
  r.cdid_raw = metrics::frechet_distance(src.raw.features, tgt.raw.features);
  r.cdid_st = metrics::frechet_distance(src.st1.features, tgt.st1.features);
  r.cdid_st2 = metrics::frechet_distance(src.st2.features, tgt.st2.features);
  r.cdid_joint = metrics::frechet_distance(metrics::stack(src.st1.features, src.st2.features),
                                           metrics::stack(tgt.st1.features, tgt.st2.features));
  r.idid_s = metrics::frechet_distance(src.st1.features, src.st2.features);
  r.idid_t = metrics::frechet_distance(tgt.st1.features, tgt.st2.features);
  out.src_raw = src.raw.features;
  out.tgt_raw = tgt.raw.features;
  out.src_st1 = src.st1.features;
  out.tgt_st1 = tgt.st1.features;
  out.src_st2 = src.st2.features;
  out.tgt_st2 = tgt.st2.features;
  out.src_gains = ad::concat(src.gains, 0);
  out.tgt_gains = ad::concat(tgt.gains, 0);
  return out;
}

inline EvalRecord evaluate(const TrainState& state, const EvalSets& sets, const TrainConfig& cfg,
                           const spectral::BandMaskSet& masks) {
  return evaluate_detail(state, sets, cfg, masks).record;
}

// ---------------------------------------------------------------------------
// Run loop

struct RunRecord {
  std::uint64_t iteration = 0;
  obj::LossBreakdown losses;
  std::optional<EvalRecord> eval;

  friend bool operator==(const RunRecord& a, const RunRecord& b) {
    return a.iteration == b.iteration && a.losses.sup == b.losses.sup && a.losses.adv == b.losses.adv &&
           a.losses.dis == b.losses.dis && a.losses.sim == b.losses.sim && a.eval == b.eval;
  }
};

inline constexpr const char* kMetricsHeader =
    "iter,L_sup,L_adv,L_dis,L_sim,src_acc,tgt_acc_st,tgt_acc_raw,mmd_raw,mmd_st,cdid_raw,cdid_st,idid_s,idid_t";

// Round-trip precision; metric columns are empty on rows without evaluation.
inline std::string csv_row(const RunRecord& r) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string s = std::to_string(r.iteration);
  for (double v : {r.losses.sup, r.losses.adv, r.losses.dis, r.losses.sim}) s += "," + num(v);
  if (r.eval) {
    const auto& e = *r.eval;
    for (double v : {e.src_acc, e.tgt_acc_st, e.tgt_acc_raw, e.mmd_raw, e.mmd_st, e.cdid_raw, e.cdid_st, e.idid_s, e.idid_t})
      s += "," + num(v);
  } else {
    s += ",,,,,,,,,";
  }
  return s;
}

struct RunHooks {
  // Called after every iteration with the updated state and its record.
  std::function<void(const TrainState&, const RunRecord&)> on_iteration;
};

struct RunResult {
  TrainState state;
  std::vector<RunRecord> records;
};

// Trains from `state` (fresh or resumed) up to cfg.max_iter. The target set is
// only ever read for images; evaluation, when given, is the one place target
// labels are used.
inline RunResult train_run(const data::Dataset& source, const data::Dataset& target, const TrainConfig& cfg,
                           TrainState state, const std::optional<EvalSets>& eval = std::nullopt,
                           const RunHooks& hooks = {}) {
  cfg.validate();
  if (!source.has_labels()) throw DataError("source dataset has no labels");
  if (source.height != cfg.image_size || source.width != cfg.image_size || target.height != cfg.image_size ||
      target.width != cfg.image_size) {
    throw DataError("dataset image size does not match image_size " + std::to_string(cfg.image_size));
  }
  for (auto l : source.labels)
    if (l >= cfg.classes) throw DataError("source label " + std::to_string(l) + " outside [0, classes)");
  const auto masks = spectral::make_band_masks(cfg.image_size, cfg.image_size, cfg.asa.bands);
  const data::Dataset unlabeled = target.without_labels();
  Sampler src_sampler(cfg.seed, "batch/source", source.count);
  Sampler tgt_sampler(cfg.seed, "batch/target", unlabeled.count);

  RunResult out;
  while (state.iteration < cfg.max_iter) {
    const std::uint64_t k = state.iteration;
    const auto si = src_sampler.batch(k, cfg.batch);
    const auto ti = tgt_sampler.batch(k, cfg.batch);
    const Batch b{source.batch(si), source.batch_labels(si), unlabeled.batch(ti)};
    RunRecord rec;
    rec.losses = train_step(state, b, cfg, masks);
    rec.iteration = state.iteration;
    if (eval && (state.iteration % cfg.eval_every == 0 || state.iteration == cfg.max_iter)) {
      rec.eval = evaluate(state, *eval, cfg, masks);
    }
    if (hooks.on_iteration) hooks.on_iteration(state, rec);
    out.records.push_back(std::move(rec));
  }
  out.state = std::move(state);
  return out;
}

inline RunResult train_run(const data::Dataset& source, const data::Dataset& target, const TrainConfig& cfg,
                           const std::optional<EvalSets>& eval = std::nullopt, const RunHooks& hooks = {}) {
  return train_run(source, target, cfg, init_state(cfg), eval, hooks);
}

}  // namespace suda::train

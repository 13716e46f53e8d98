#ifndef SDTTS_TRAINER_HPP
#define SDTTS_TRAINER_HPP

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "sdtts/distill.hpp"
#include "sdtts/model.hpp"

namespace sdtts {
namespace nn {

struct LossReport {
  int64_t step = 0;
  double rec = 0, kl = 0, adv_g = 0, adv_d = 0;
  double pred_dur = 0, pred_pitch = 0, pred_energy = 0, cyc = 0;
  double total = 0, lr = 0;
  int mixed = 0;
  double wall_ms = 0;

  std::string to_line() const {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "step=%lld rec=%.9g kl=%.9g adv_g=%.9g adv_d=%.9g pred_dur=%.9g pred_pitch=%.9g "
                  "pred_energy=%.9g cyc=%.9g total=%.9g lr=%.9g mixed=%d wall_ms=%.3f",
                  static_cast<long long>(step), rec, kl, adv_g, adv_d, pred_dur, pred_pitch,
                  pred_energy, cyc, total, lr, mixed, wall_ms);
    return buf;
  }

  static LossReport parse_line(const std::string& line) {
    LossReport r;
    std::istringstream is(line);
    std::string tok;
    bool saw_step = false;
    while (is >> tok) {
      size_t eq = tok.find('=');
      if (eq == std::string::npos) throw std::runtime_error("loss report: bad token '" + tok + "'");
      std::string key = tok.substr(0, eq);
      std::string val = tok.substr(eq + 1);
      if (key == "step") {
        r.step = std::stoll(val);
        saw_step = true;
      } else if (key == "rec") r.rec = std::stod(val);
      else if (key == "kl") r.kl = std::stod(val);
      else if (key == "adv_g") r.adv_g = std::stod(val);
      else if (key == "adv_d") r.adv_d = std::stod(val);
      else if (key == "pred_dur") r.pred_dur = std::stod(val);
      else if (key == "pred_pitch") r.pred_pitch = std::stod(val);
      else if (key == "pred_energy") r.pred_energy = std::stod(val);
      else if (key == "cyc") r.cyc = std::stod(val);
      else if (key == "total") r.total = std::stod(val);
      else if (key == "lr") r.lr = std::stod(val);
      else if (key == "mixed") r.mixed = std::stoi(val);
      else if (key == "wall_ms") r.wall_ms = std::stod(val);
      else throw std::runtime_error("loss report: unknown key '" + key + "'");
    }
    if (!saw_step) throw std::runtime_error("loss report: line has no step field");
    return r;
  }

  // Wall time is the only field expected to differ between identical runs.
  bool same_losses(const LossReport& o) const {
    return step == o.step && rec == o.rec && kl == o.kl && adv_g == o.adv_g && adv_d == o.adv_d &&
           pred_dur == o.pred_dur && pred_pitch == o.pred_pitch && pred_energy == o.pred_energy &&
           cyc == o.cyc && total == o.total && lr == o.lr && mixed == o.mixed;
  }
};

// Single-threaded trainer covering both stages: without a PairSet it trains
// the teacher on ground-truth mels; with one it trains a student whose
// content-branch inputs are sigma-mixed between ground truth and the
// teacher's synthetic parallels. Draw order per step is fixed (batch
// indices, prompt choices, mixing picks, posterior noise) so runs with equal
// seeds produce bitwise-equal loss reports.
template <typename T>
class Trainer {
 public:
  Trainer(TtsModel<T>& model, const Corpus& corpus, const PairSet* pairs = nullptr)
      : model_(model),
        corpus_(corpus),
        pairs_(pairs),
        rng_(model.cfg.train_seed),
        opt_g_({model.cfg.lr, 0.9, 0.98, 1e-9, 0.01}),
        opt_d_({model.cfg.lr, 0.9, 0.98, 1e-9, 0.01}) {
    const RunConfig& cfg = model.cfg;
    if (cfg.cyc_weight > 0.0 && cfg.batch_size < 2)
      throw std::runtime_error("trainer: cycle loss needs batch_size >= 2");
    if (pairs_) {
      for (const Utterance& u : corpus_.utts)
        if (!pairs_->by_content.count(u.id))
          throw std::runtime_error("trainer: pair set is missing utterance '" + u.id + "'");
    }
  }

  int64_t step_count() const { return step_; }
  Rng& rng() { return rng_; }

  // What the last step actually fed the model, for tests: which utterances,
  // which prompts, which items took synthetic content, and checksums of the
  // exact content/target tensors used.
  struct BatchDebug {
    std::vector<int> items, prompts;
    std::vector<char> used_pair;
    std::vector<uint64_t> content_checksums, target_checksums;
  };
  const BatchDebug& last_batch() const { return debug_; }

  std::function<void(const LossReport&)> on_report;

  LossReport step() {
    auto t0 = std::chrono::steady_clock::now();
    const RunConfig& cfg = model_.cfg;
    int B = cfg.batch_size;
    int N = static_cast<int>(corpus_.utts.size());
    ++step_;

    // 1) batch indices (with replacement)
    std::vector<int> items;
    for (int b = 0; b < B; ++b) items.push_back(static_cast<int>(rng_.below(N)));

    // 2) prompts: another utterance by the same speaker, self if alone
    std::vector<int> prompts;
    for (int b = 0; b < B; ++b) {
      const auto& pool = corpus_.by_speaker.at(corpus_.utts[static_cast<size_t>(items[static_cast<size_t>(b)])].speaker);
      prompts.push_back(pick_other(pool, items[static_cast<size_t>(b)]));
    }

    // 3) sigma mixing (students only): exactly floor(sigma*B) content mels
    //    come from the synthetic parallel of the same utterance
    std::vector<char> use_pair(static_cast<size_t>(B), 0);
    int mixed = 0;
    if (pairs_) mixed = mark_mixed(use_pair);

    // 4) posterior noise, one tensor per item
    std::vector<Tensor<T>> eps;
    for (int b = 0; b < B; ++b) {
      const Utterance& u = corpus_.utts[static_cast<size_t>(items[static_cast<size_t>(b)])];
      Tensor<T> e({static_cast<int>(u.phonemes.size()), cfg.d_latent});
      for (auto& v : e.data) v = static_cast<T>(rng_.normal());
      eps.push_back(std::move(e));
    }

    debug_ = BatchDebug{};
    debug_.items = items;
    debug_.prompts = prompts;
    debug_.used_pair = use_pair;

    LossReport rep;
    rep.step = step_;
    rep.mixed = mixed;
    rep.lr = lr_schedule(cfg.lr, step_, cfg.warmup_steps);

    // ---- generator pass ----
    Graph<T> g;
    std::vector<typename Graph<T>::Var> recs, kls, advs, durs, pitches, energies;
    std::vector<typename Graph<T>::Var> e_hat_rows, e_ref_rows;
    std::vector<Tensor<T>> fake_mels;
    for (int b = 0; b < B; ++b) {
      const Utterance& u = corpus_.utts[static_cast<size_t>(items[static_cast<size_t>(b)])];
      const Utterance& p = corpus_.utts[static_cast<size_t>(prompts[static_cast<size_t>(b)])];
      Tensor<T> target = u.mel.frames.template cast<T>();
      Tensor<T> content_mel = use_pair[static_cast<size_t>(b)]
                                  ? pairs_->pairs[static_cast<size_t>(pairs_->by_content.at(u.id))]
                                        .synth.frames.template cast<T>()
                                  : target;
      debug_.content_checksums.push_back(
          fnv1a64(content_mel.data.data(), content_mel.data.size() * sizeof(T)));
      debug_.target_checksums.push_back(
          fnv1a64(target.data.data(), target.data.size() * sizeof(T)));
      auto fwd = model_.forward_train(g, u.phonemes, u.durations, u.pitch, u.energy, content_mel,
                                      p.mel.frames.template cast<T>(), eps[static_cast<size_t>(b)]);

      auto target_var = g.input(target, false);
      recs.push_back(l_rec(g, fwd.mel_hat, target_var));
      kls.push_back(l_kl(g, fwd.mu_flow, fwd.logvar));
      durs.push_back(l_mse(g, fwd.var.log_dur, g.constant(log_durations(u.durations))));
      pitches.push_back(l_mse(g, fwd.var.pitch, g.constant(column(u.pitch))));
      energies.push_back(l_mse(g, fwd.var.energy, g.constant(column(u.energy))));

      // Adversarial term: frozen discriminator scores the generated mel.
      g.set_param_freeze(true);
      auto scores = model_.disc.score(g, model_.disc_params, fwd.mel_hat);
      g.set_param_freeze(false);
      advs.push_back(lsgan_g(g, scores));

      if (cfg.cyc_weight > 0.0) {
        e_hat_rows.push_back(model_.adapter.timbre_embed(g, model_.params, fwd.mel_hat));
        e_ref_rows.push_back(model_.adapter.timbre_embed(g, model_.params, target_var));
      }
      fake_mels.push_back(g.value(fwd.mel_hat));
    }

    auto rec = average(g, recs);
    auto kl = average(g, kls);
    auto adv_g = average(g, advs);
    auto pred_dur = average(g, durs);
    auto pred_pitch = average(g, pitches);
    auto pred_energy = average(g, energies);

    auto total = g.mul_scalar(rec, cfg.rec_weight);
    total = g.add(total, g.mul_scalar(kl, cfg.kl_weight));
    total = g.add(total, g.mul_scalar(adv_g, cfg.adv_weight));
    auto pred_sum = g.add(pred_dur, g.add(pred_pitch, pred_energy));
    total = g.add(total, g.mul_scalar(pred_sum, cfg.pred_weight));
    typename Graph<T>::Var cyc;
    if (cfg.cyc_weight > 0.0) {
      cyc = l_cyc(g, g.concat_rows(e_hat_rows), g.concat_rows(e_ref_rows),
                  cfg.cyc_include_positive != 0);
      total = g.add(total, g.mul_scalar(cyc, cfg.cyc_weight));
    }

    rep.rec = value_of(g, rec);
    rep.kl = value_of(g, kl);
    rep.adv_g = value_of(g, adv_g);
    rep.pred_dur = value_of(g, pred_dur);
    rep.pred_pitch = value_of(g, pred_pitch);
    rep.pred_energy = value_of(g, pred_energy);
    rep.cyc = cfg.cyc_weight > 0.0 ? value_of(g, cyc) : 0.0;

    model_.params.zero_grads();
    g.backward(total);
    clip_grads(model_.params, cfg.grad_clip);
    opt_g_.step(model_.params, rep.lr);

    // ---- discriminator pass (one per generator step) ----
    Graph<T> gd;
    std::vector<typename Graph<T>::Var> d_losses;
    for (int b = 0; b < B; ++b) {
      const Utterance& u = corpus_.utts[static_cast<size_t>(items[static_cast<size_t>(b)])];
      auto real = gd.constant(u.mel.frames.template cast<T>());
      auto fake = gd.constant(fake_mels[static_cast<size_t>(b)]);
      d_losses.push_back(lsgan_d(gd, model_.disc.score(gd, model_.disc_params, real),
                                 model_.disc.score(gd, model_.disc_params, fake)));
    }
    auto d_loss = average(gd, d_losses);
    rep.adv_d = value_of(gd, d_loss);
    model_.disc_params.zero_grads();
    gd.backward(d_loss);
    clip_grads(model_.disc_params, cfg.grad_clip);
    opt_d_.step(model_.disc_params, rep.lr);

    rep.total = cfg.rec_weight * rep.rec + cfg.kl_weight * rep.kl + cfg.adv_weight * rep.adv_g +
                cfg.adv_weight * rep.adv_d +
                cfg.pred_weight * (rep.pred_dur + rep.pred_pitch + rep.pred_energy) +
                cfg.cyc_weight * rep.cyc;
    if (!std::isfinite(rep.total))
      throw std::runtime_error("training diverged at step " + std::to_string(step_) + ": " +
                               rep.to_line());

    auto t1 = std::chrono::steady_clock::now();
    rep.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (on_report) on_report(rep);
    return rep;
  }

  std::vector<LossReport> run(int steps) {
    std::vector<LossReport> out;
    for (int i = 0; i < steps; ++i) out.push_back(step());
    return out;
  }

 private:
  int pick_other(const std::vector<int>& pool, int self) {
    if (pool.size() <= 1) return self;  // fallback: prompt with the utterance itself
    int k = static_cast<int>(rng_.below(static_cast<int64_t>(pool.size()) - 1));
    for (int idx : pool) {
      if (idx == self) continue;
      if (k == 0) return idx;
      --k;
    }
    return self;  // unreachable
  }

  int mark_mixed(std::vector<char>& use_pair) {
    int B = static_cast<int>(use_pair.size());
    int K = static_cast<int>(std::floor(model_.cfg.sigma * B));
    if (K <= 0) return 0;  // no draw consumed when nothing is replaced
    auto picks = rng_.choose_without_replacement(B, K);
    for (int p : picks) use_pair[static_cast<size_t>(p)] = 1;
    return K;
  }

  static typename Graph<T>::Var average(Graph<T>& g, const std::vector<typename Graph<T>::Var>& parts) {
    auto sum = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) sum = g.add(sum, parts[i]);
    return g.mul_scalar(sum, 1.0 / static_cast<double>(parts.size()));
  }

  static double value_of(Graph<T>& g, typename Graph<T>::Var v) {
    return static_cast<double>(g.value(v).data[0]);
  }

  static Tensor<T> log_durations(const std::vector<int>& durations) {
    Tensor<T> t({static_cast<int>(durations.size()), 1});
    for (size_t i = 0; i < durations.size(); ++i)
      t.data[i] = static_cast<T>(std::log(static_cast<double>(durations[i])));
    return t;
  }

  static Tensor<T> column(const std::vector<float>& v) {
    Tensor<T> t({static_cast<int>(v.size()), 1});
    for (size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<T>(v[i]);
    return t;
  }

  static void clip_grads(ParamStore<T>& ps, double clip) {
    if (clip <= 0.0) return;
    double norm2 = 0.0;
    for (auto& [name, e] : ps.entries()) {
      if (!e.trainable) continue;
      for (T v : e.grad.data) norm2 += static_cast<double>(v) * static_cast<double>(v);
    }
    double norm = std::sqrt(norm2);
    if (norm <= clip) return;
    double scale = clip / norm;
    for (auto& [name, e] : ps.entries()) {
      if (!e.trainable) continue;
      for (T& v : e.grad.data) v = static_cast<T>(static_cast<double>(v) * scale);
    }
  }

  TtsModel<T>& model_;
  const Corpus& corpus_;
  const PairSet* pairs_;
  Rng rng_;
  AdamW<T> opt_g_, opt_d_;
  int64_t step_ = 0;
  BatchDebug debug_;
};

}  // namespace nn
}  // namespace sdtts

#endif

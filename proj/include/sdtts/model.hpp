#ifndef SDTTS_MODEL_HPP
#define SDTTS_MODEL_HPP

#include <cmath>
#include <string>
#include <vector>

#include "sdtts/content_encoder.hpp"
#include "sdtts/data.hpp"
#include "sdtts/objectives.hpp"
#include "sdtts/speaker_adapter.hpp"

namespace sdtts {
namespace nn {

// Everything the trainer needs from one teacher-forced utterance pass.
template <typename T>
struct UttForward {
  typename Graph<T>::Var e_ling;
  typename Graph<T>::Var mu;       // posterior mean (latent space)
  typename Graph<T>::Var logvar;   // posterior log variance
  typename Graph<T>::Var mu_flow;  // posterior mean pushed through the flow
  typename Graph<T>::Var e_con;    // fused content embedding
  typename Graph<T>::Var e_spk;    // global speaker embedding (1, d_spk)
  typename Graph<T>::Var mel_hat;  // (T, mel_bins)
  VariancePrediction<T> var;
};

template <typename T>
struct SynthResult {
  Mel mel;
  std::vector<int> durations;
  std::vector<float> pitch;
  std::vector<float> energy;
};

template <typename T>
struct SynthOptions {
  std::vector<int> forced_durations;  // empty -> use predicted durations
  double noise_scale = -1.0;          // negative -> RunConfig value; 0 -> prior mean
  Rng* rng = nullptr;                 // required when noise_scale != 0
  int max_duration_frames = 64;       // safety cap per phoneme
};

template <typename T>
class TtsModel {
 public:
  explicit TtsModel(const RunConfig& cfg_)
      : cfg(cfg_),
        params(cfg_.model_seed),
        disc_params(mix_seed(cfg_.model_seed, 0xD15Cull)),
        content(params, cfg_),
        adapter(params, cfg_),
        disc(disc_params, cfg_) {}

  // Teacher-forced pass. content_mel feeds the posterior (the distillation
  // trainer substitutes synthetic parallels here); prompt_mel feeds the
  // speaker branch; eps is reparameterization noise (L, d_latent).
  UttForward<T> forward_train(Graph<T>& g, const std::vector<int>& phonemes,
                              const std::vector<int>& durations, const std::vector<float>& pitch_gt,
                              const std::vector<float>& energy_gt, const Tensor<T>& content_mel,
                              const Tensor<T>& prompt_mel, const Tensor<T>& eps) {
    UttForward<T> out;
    out.e_ling = content.encode_text(g, params, phonemes);
    auto post = content.posterior(g, params, g.input(content_mel, false), durations);
    out.mu = post.mu;
    out.logvar = post.logvar;
    out.mu_flow = content.flow.forward(g, params, post.mu, out.e_ling);
    typename Graph<T>::Var z;
    if (cfg.fuse_direct_emel) {
      out.e_con = content.fuse_direct(g, params, out.e_ling, g.input(content_mel, false), durations);
    } else {
      z = content.sample(g, post, g.constant(eps));
      out.e_con = content.fuse(g, params, out.e_ling, z);
    }

    auto pmel = g.input(prompt_mel, false);
    auto e_sty = adapter.style_encode(g, params, pmel);
    auto e_timb = adapter.timbre_embed(g, params, pmel);
    out.e_spk = adapter.speaker_embed(g, params, e_timb);

    // Variance predictors see a detached content embedding: their losses
    // shape the speaker branch without steering the content encoder.
    out.var = adapter.predict_variances(g, params, g.detach(out.e_con), e_sty, out.e_spk);

    auto pitch_col = g.constant(column<T>(pitch_gt));
    auto energy_col = g.constant(column<T>(energy_gt));
    auto frames = adapter.length_regulate(g, params, out.e_con, pitch_col, energy_col, durations);
    out.mel_hat = adapter.decode(g, params, frames, out.e_spk);
    return out;
  }

  SynthResult<T> synthesize(const std::vector<int>& phonemes, const Mel& prompt,
                            const SynthOptions<T>& opt = {}) {
    double noise = opt.noise_scale < 0.0 ? cfg.noise_scale : opt.noise_scale;
    if (noise != 0.0 && opt.rng == nullptr)
      throw std::invalid_argument("synthesize: sampling noise requires an rng");
    int L = static_cast<int>(phonemes.size());
    if (L < 1) throw std::invalid_argument("synthesize: empty phoneme sequence");
    if (!opt.forced_durations.empty() && static_cast<int>(opt.forced_durations.size()) != L)
      throw std::invalid_argument("synthesize: forced durations must match phoneme count");

    Graph<T> g;
    g.set_param_freeze(true);
    auto e_ling = content.encode_text(g, params, phonemes);

    Tensor<T> eps({L, cfg.d_latent});
    if (noise != 0.0)
      for (auto& v : eps.data) v = static_cast<T>(opt.rng->normal() * noise);
    auto z = content.flow.inverse(g, params, g.constant(eps), e_ling);
    auto e_con = content.fuse(g, params, e_ling, z);

    auto pmel = g.constant(prompt.frames.template cast<T>());
    auto e_sty = adapter.style_encode(g, params, pmel);
    auto e_spk = adapter.speaker_embed(g, params, adapter.timbre_embed(g, params, pmel));
    auto var = adapter.predict_variances(g, params, g.detach(e_con), e_sty, e_spk);

    SynthResult<T> out;
    const auto& ld = g.value(var.log_dur);
    if (opt.forced_durations.empty()) {
      for (int i = 0; i < L; ++i) {
        int d = static_cast<int>(std::lround(std::exp(static_cast<double>(ld(i, 0)))));
        out.durations.push_back(std::min(std::max(d, 1), opt.max_duration_frames));
      }
    } else {
      out.durations = opt.forced_durations;
    }
    for (int i = 0; i < L; ++i) {
      out.pitch.push_back(static_cast<float>(g.value(var.pitch)(i, 0)));
      out.energy.push_back(static_cast<float>(g.value(var.energy)(i, 0)));
    }

    auto frames = adapter.length_regulate(g, params, e_con, var.pitch, var.energy, out.durations);
    auto mel_hat = adapter.decode(g, params, frames, e_spk);

    out.mel.hop = cfg.hop;
    out.mel.sample_rate = cfg.sample_rate;
    out.mel.frames = g.value(mel_hat).template cast<float>();
    return out;
  }

  int64_t generator_param_count() const { return params.param_count(); }
  int64_t discriminator_param_count() const { return disc_params.param_count(); }

  RunConfig cfg;
  ParamStore<T> params;
  ParamStore<T> disc_params;
  ContentEncoder<T> content;
  SpeakerAdapter<T> adapter;
  Discriminator<T> disc;

 private:
  template <typename U>
  static Tensor<U> column(const std::vector<float>& v) {
    Tensor<U> t({static_cast<int>(v.size()), 1});
    for (size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<U>(v[i]);
    return t;
  }
};

}  // namespace nn
}  // namespace sdtts

#endif

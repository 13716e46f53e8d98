#ifndef SDTTS_SPEAKER_ADAPTER_HPP
#define SDTTS_SPEAKER_ADAPTER_HPP

#include <string>
#include <vector>

#include "sdtts/config.hpp"
#include "sdtts/layers.hpp"

namespace sdtts {
namespace nn {

template <typename T>
struct VariancePrediction {
  typename Graph<T>::Var log_dur;  // (L, 1), log frame counts
  typename Graph<T>::Var pitch;    // (L, 1)
  typename Graph<T>::Var energy;   // (L, 1)
};

// Speaker branch: a time-preserving sequence style encoder, a frozen timbre
// stub with a trainable projection, a cross-attention variance adapter whose
// queries are detached content embeddings, and an AdaIN mel decoder.
template <typename T>
struct SpeakerAdapter {
  RunConfig cfg;
  std::vector<Conv2dLayer<T>> style_convs;
  Linear<T> style_proj;
  Linear<T> timbre_proj;
  MultiHeadAttention<T> var_attn;
  Linear<T> dur_fc1, dur_fc2, pitch_fc1, pitch_fc2, energy_fc1, energy_fc2;
  Linear<T> pitch_emb, energy_emb;
  Conv1dLayer<T> dec_in, dec_out;
  std::vector<Conv1dLayer<T>> dec_convs;            // two per block
  std::vector<Linear<T>> adain_gamma, adain_beta;   // one pair per AdaIN site
  int style_feat_dim = 0;
  int var_in_dim = 0;

  SpeakerAdapter() = default;
  SpeakerAdapter(ParamStore<T>& ps, const RunConfig& cfg_) : cfg(cfg_) {
    // Style encoder downsamples time (stride 2 per layer, so r = 2^layers)
    // and keeps the frequency axis; no temporal averaging happens anywhere,
    // sinusoidal positions mark frame order.
    int ch_in = 1;
    for (int i = 0; i < cfg.style_layers; ++i) {
      style_convs.emplace_back(ps, "spk.sty.conv" + std::to_string(i), ch_in, cfg.style_channels, 3, 3,
                               2, 1, 1, 1, PadMode::kZero);
      ch_in = cfg.style_channels;
    }
    style_feat_dim = ch_in * cfg.mel_bins;
    style_proj = Linear<T>(ps, "spk.sty.proj", style_feat_dim, cfg.d_spk);

    // Frozen timbre stub: a fixed projection of per-bin mel statistics. The
    // entry is registered non-trainable, so it enters graphs as a constant;
    // only the projection below it learns.
    {
      Tensor<T> w({2 * cfg.mel_bins, cfg.timbre_dim});
      Rng rng(cfg.timbre_stub_seed);
      double scale = 1.0 / std::sqrt(static_cast<double>(2 * cfg.mel_bins));
      for (auto& v : w.data) v = static_cast<T>(rng.normal() * scale);
      ps.add("spk.timbre.stub.w", std::move(w), /*trainable=*/false);
    }
    timbre_proj = Linear<T>(ps, "spk.timbre.proj", cfg.timbre_dim, cfg.d_spk);

    var_attn = MultiHeadAttention<T>(ps, "spk.var.attn", cfg.d_model, cfg.d_spk, cfg.d_model,
                                     cfg.var_heads);
    var_in_dim = cfg.d_model + cfg.d_model + cfg.d_spk;  // [query; context; global speaker]
    dur_fc1 = Linear<T>(ps, "spk.var.dur.fc1", var_in_dim, cfg.var_hidden);
    dur_fc2 = Linear<T>(ps, "spk.var.dur.fc2", cfg.var_hidden, 1);
    pitch_fc1 = Linear<T>(ps, "spk.var.pitch.fc1", var_in_dim, cfg.var_hidden);
    pitch_fc2 = Linear<T>(ps, "spk.var.pitch.fc2", cfg.var_hidden, 1);
    energy_fc1 = Linear<T>(ps, "spk.var.energy.fc1", var_in_dim, cfg.var_hidden);
    energy_fc2 = Linear<T>(ps, "spk.var.energy.fc2", cfg.var_hidden, 1);

    pitch_emb = Linear<T>(ps, "spk.pitch_emb", 1, cfg.d_model);
    energy_emb = Linear<T>(ps, "spk.energy_emb", 1, cfg.d_model);

    int k = cfg.dec_kernel, p = (k - 1) / 2;
    dec_in = Conv1dLayer<T>(ps, "spk.dec.in", cfg.d_model, cfg.dec_channels, k, 1, p, PadMode::kReplicate);
    for (int b = 0; b < cfg.dec_blocks; ++b) {
      dec_convs.emplace_back(ps, "spk.dec.b" + std::to_string(b) + ".c0", cfg.dec_channels,
                             cfg.dec_channels, k, 1, p, PadMode::kReplicate);
      dec_convs.emplace_back(ps, "spk.dec.b" + std::to_string(b) + ".c1", cfg.dec_channels,
                             cfg.dec_channels, k, 1, p, PadMode::kReplicate);
      for (int a = 0; a < 2; ++a) {
        std::string site = "spk.dec.b" + std::to_string(b) + ".ada" + std::to_string(a);
        adain_gamma.emplace_back(ps, site + ".g", cfg.d_spk, cfg.dec_channels);
        adain_beta.emplace_back(ps, site + ".b", cfg.d_spk, cfg.dec_channels);
      }
    }
    dec_out = Conv1dLayer<T>(ps, "spk.dec.out", cfg.dec_channels, cfg.mel_bins, k, 1, p, PadMode::kReplicate);
  }

  // (T, F) prompt mel -> (ceil(T / 2^style_layers), d_spk) style sequence.
  typename Graph<T>::Var style_encode(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var mel) const {
    const auto& mv = g.value(mel);
    if (mv.rank() != 2 || mv.cols() != cfg.mel_bins)
      throw std::invalid_argument("style encoder: mel must be (T, " + std::to_string(cfg.mel_bins) + ")");
    auto x = g.reshape(mel, {1, mv.rows(), mv.cols()});
    for (const auto& c : style_convs) x = g.leaky_relu(c.apply(g, ps, x), 0.1);
    auto seq = style_proj.apply(g, ps, g.frames_from_chw(x));
    auto pe = g.constant(sinusoidal_pe<T>(g.value(seq).rows(), cfg.d_spk));
    return g.add(seq, pe);
  }

  // Frozen stub: concat(col mean, col std) through the fixed projection.
  // Differentiable with respect to the input mel, so cycle-style objectives
  // can push gradients into the generator, but carries no trainable weights.
  typename Graph<T>::Var timbre_embed(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var mel) const {
    auto stats = g.concat_cols(g.col_mean(mel), g.col_std(mel, 1e-8));
    return g.matmul(stats, pvar(g, ps, "spk.timbre.stub.w"));
  }

  // (1, timbre_dim) -> (1, d_spk)
  typename Graph<T>::Var speaker_embed(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var e_timb) const {
    return timbre_proj.apply(g, ps, e_timb);
  }

  // Queries must already be detached by the caller (the adapter asserts
  // nothing about it; TtsModel passes detach(e_con)).
  VariancePrediction<T> predict_variances(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var queries,
                                          typename Graph<T>::Var e_sty, typename Graph<T>::Var e_spk) const {
    auto ctx = var_attn.apply(g, ps, queries, e_sty);
    int L = g.value(queries).rows();
    auto spk_rows = g.repeat_rows(e_spk, std::vector<int>(1, L));  // broadcast (1,d_spk) -> (L,d_spk)
    auto inp = g.concat_cols(g.concat_cols(queries, ctx), spk_rows);
    auto head = [&](const Linear<T>& fc1, const Linear<T>& fc2) {
      return fc2.apply(g, ps, g.leaky_relu(fc1.apply(g, ps, inp), 0.1));
    };
    return {head(dur_fc1, dur_fc2), head(pitch_fc1, pitch_fc2), head(energy_fc1, energy_fc2)};
  }

  // Add pitch/energy embeddings at phoneme rate, then expand each phoneme row
  // to its duration in frames.
  typename Graph<T>::Var length_regulate(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var e_con,
                                         typename Graph<T>::Var pitch, typename Graph<T>::Var energy,
                                         const std::vector<int>& durations) const {
    auto x = g.add(e_con, g.add(pitch_emb.apply(g, ps, pitch), energy_emb.apply(g, ps, energy)));
    return g.repeat_rows(x, durations);
  }

  // AdaIN: normalize each channel over time, then scale/shift with
  // speaker-conditioned gamma/beta. Post-AdaIN channel statistics are exactly
  // mean beta, std |gamma| (up to the instance-norm epsilon).
  typename Graph<T>::Var adain(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var x,
                               typename Graph<T>::Var e_spk, size_t site) const {
    auto norm = g.instance_norm_rows(x, 1e-8);
    // gamma = 1 + proj(e_spk) so the map starts near identity scale.
    auto gamma = g.transpose(g.add_scalar(adain_gamma[site].apply(g, ps, e_spk), 1.0));
    auto beta = g.transpose(adain_beta[site].apply(g, ps, e_spk));
    return g.add_colvec(g.mul_colvec(norm, gamma), beta);
  }

  // (T, d_model) frame sequence + (1, d_spk) speaker -> (T, mel_bins).
  // When taps is non-null, every post-AdaIN activation is appended (test
  // hook for the statistics contract).
  typename Graph<T>::Var decode(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var frames,
                                typename Graph<T>::Var e_spk,
                                std::vector<typename Graph<T>::Var>* taps = nullptr) const {
    auto x = dec_in.apply(g, ps, g.transpose(frames));  // (C, T)
    size_t site = 0;
    for (int b = 0; b < cfg.dec_blocks; ++b) {
      auto h = dec_convs[static_cast<size_t>(2 * b)].apply(g, ps, x);
      h = this->adain(g, ps, h, e_spk, site++);
      if (taps) taps->push_back(h);
      h = g.leaky_relu(h, 0.1);
      h = dec_convs[static_cast<size_t>(2 * b + 1)].apply(g, ps, h);
      h = this->adain(g, ps, h, e_spk, site++);
      if (taps) taps->push_back(h);
      x = g.add(x, h);
    }
    return g.transpose(dec_out.apply(g, ps, x));
  }
};

}  // namespace nn
}  // namespace sdtts

#endif

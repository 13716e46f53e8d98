#ifndef SDTTS_CONTENT_ENCODER_HPP
#define SDTTS_CONTENT_ENCODER_HPP

#include <string>
#include <vector>

#include "sdtts/config.hpp"
#include "sdtts/layers.hpp"

namespace sdtts {
namespace nn {

// Conditioned volume-preserving normalizing flow built from additive
// coupling steps. Each step shifts one half of the latent by a function of
// the other half and a phoneme-level condition; the Jacobian is unit
// triangular, so log|det J| == 0 identically and the inverse is exact.
// Alternating which half is shifted replaces an explicit permutation.
template <typename T>
struct VpFlow {
  std::string name;
  int d_latent = 0, hidden = 0, steps = 0, cond_dim = 0;
  Linear<T> cond_proj;
  std::vector<Linear<T>> in_layers, out_layers;

  VpFlow() = default;
  VpFlow(ParamStore<T>& ps, std::string name_, int d_latent_, int hidden_, int steps_, int cond_dim_)
      : name(std::move(name_)), d_latent(d_latent_), hidden(hidden_), steps(steps_), cond_dim(cond_dim_) {
    if (d_latent % 2 != 0) throw std::invalid_argument("flow: latent dim must be even");
    cond_proj = Linear<T>(ps, name + ".cond", cond_dim, hidden);
    int half = d_latent / 2;
    for (int s = 0; s < steps; ++s) {
      in_layers.emplace_back(ps, name + ".s" + std::to_string(s) + ".in", half + hidden, hidden);
      out_layers.emplace_back(ps, name + ".s" + std::to_string(s) + ".out", hidden, half);
      // Zero-init the shift head so the flow starts as the identity map.
      ps.get(name + ".s" + std::to_string(s) + ".out.w").value.fill(T(0));
    }
  }

  typename Graph<T>::Var shift(Graph<T>& g, ParamStore<T>& ps, int step, typename Graph<T>::Var half,
                               typename Graph<T>::Var cond_h) const {
    auto inp = g.concat_cols(half, cond_h);
    auto h = g.leaky_relu(in_layers[static_cast<size_t>(step)].apply(g, ps, inp), 0.1);
    return out_layers[static_cast<size_t>(step)].apply(g, ps, h);
  }

  // z and cond are (L, d_latent) and (L, cond_dim).
  typename Graph<T>::Var forward(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var z,
                                 typename Graph<T>::Var cond) const {
    check(g, z, cond);
    auto ch = cond_proj.apply(g, ps, cond);
    int half = d_latent / 2;
    auto a = g.slice_cols(z, 0, half);
    auto b = g.slice_cols(z, half, d_latent);
    for (int s = 0; s < steps; ++s) {
      if (s % 2 == 0)
        b = g.add(b, shift(g, ps, s, a, ch));
      else
        a = g.add(a, shift(g, ps, s, b, ch));
    }
    return g.concat_cols(a, b);
  }

  typename Graph<T>::Var inverse(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var z,
                                 typename Graph<T>::Var cond) const {
    check(g, z, cond);
    auto ch = cond_proj.apply(g, ps, cond);
    int half = d_latent / 2;
    auto a = g.slice_cols(z, 0, half);
    auto b = g.slice_cols(z, half, d_latent);
    for (int s = steps - 1; s >= 0; --s) {
      if (s % 2 == 0)
        b = g.sub(b, shift(g, ps, s, a, ch));
      else
        a = g.sub(a, shift(g, ps, s, b, ch));
    }
    return g.concat_cols(a, b);
  }

  void check(Graph<T>& g, typename Graph<T>::Var z, typename Graph<T>::Var cond) const {
    if (g.value(z).rank() != 2 || g.value(z).cols() != d_latent)
      throw std::invalid_argument("flow: latent must be (L, " + std::to_string(d_latent) + ")");
    if (g.value(cond).rank() != 2 || g.value(cond).cols() != cond_dim ||
        g.value(cond).rows() != g.value(z).rows())
      throw std::invalid_argument("flow: condition shape mismatch");
  }
};

template <typename T>
struct LatentPosterior {
  typename Graph<T>::Var mu;
  typename Graph<T>::Var logvar;
};

// Content branch: a phoneme-sequence linguistic encoder, a frame-level mel
// encoder pooled to phoneme rate through the duration partition, a clamped
// Gaussian posterior over the content latent, the conditioned flow, and the
// fusion that joins the linguistic embedding with the latent.
template <typename T>
struct ContentEncoder {
  RunConfig cfg;
  std::vector<FftBlock<T>> blocks;
  LayerNorm<T> final_ln;
  std::vector<Conv2dLayer<T>> mel_down, mel_res;
  Linear<T> mel_mu, mel_logvar, mel_direct;
  Linear<T> zproj;
  VpFlow<T> flow;
  int mel_feat_dim = 0;

  ContentEncoder() = default;
  ContentEncoder(ParamStore<T>& ps, const RunConfig& cfg_) : cfg(cfg_) {
    ps.add_normal("con.embed", {cfg.corpus_vocab, cfg.d_model}, 0.3);
    for (int i = 0; i < cfg.n_blocks; ++i)
      blocks.emplace_back(ps, "con.blk" + std::to_string(i), cfg.d_model, cfg.n_heads,
                          cfg.ffn_mult * cfg.d_model, cfg.rel_window);
    final_ln = LayerNorm<T>(ps, "con.ln", cfg.d_model);

    // Mel encoder: per stage, a frequency-downsampling conv followed by a
    // same-shape residual conv. Time padding replicates edge frames so a
    // time-constant input stays exactly time-constant.
    int kt = cfg.mel_enc_kernel_t;
    int f = cfg.mel_bins;
    int ch_in = 1;
    for (int i = 0; i < cfg.mel_enc_layers; ++i) {
      mel_down.emplace_back(ps, "con.mel.down" + std::to_string(i), ch_in, cfg.mel_enc_channels, kt, 3,
                            1, 2, (kt - 1) / 2, 1, PadMode::kReplicate);
      mel_res.emplace_back(ps, "con.mel.res" + std::to_string(i), cfg.mel_enc_channels,
                           cfg.mel_enc_channels, kt, 3, 1, 1, (kt - 1) / 2, 1, PadMode::kReplicate);
      ch_in = cfg.mel_enc_channels;
      f = (f + 2 - 3) / 2 + 1;  // k=3, p=1, s=2 along frequency
    }
    mel_feat_dim = ch_in * f;
    mel_mu = Linear<T>(ps, "con.mel.mu", mel_feat_dim, cfg.d_latent);
    mel_logvar = Linear<T>(ps, "con.mel.logvar", mel_feat_dim, cfg.d_latent);
    mel_direct = Linear<T>(ps, "con.mel.direct", mel_feat_dim, cfg.d_model);
    zproj = Linear<T>(ps, "con.zproj", cfg.d_latent, cfg.d_model);
    flow = VpFlow<T>(ps, "con.flow", cfg.d_latent, cfg.flow_hidden, cfg.flow_steps, cfg.d_model);
  }

  // (L,) phoneme ids -> (L, d_model)
  typename Graph<T>::Var encode_text(Graph<T>& g, ParamStore<T>& ps, const std::vector<int>& phonemes) const {
    auto x = g.embedding_rows(pvar(g, ps, "con.embed"), phonemes);
    for (const auto& b : blocks) x = b.apply(g, ps, x);
    return final_ln.apply(g, ps, x);
  }

  // (T, F) mel -> (T, mel_feat_dim) frame features
  typename Graph<T>::Var mel_frame_features(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var mel) const {
    const auto& mv = g.value(mel);
    if (mv.rank() != 2 || mv.cols() != cfg.mel_bins)
      throw std::invalid_argument("content encoder: mel must be (T, " + std::to_string(cfg.mel_bins) + ")");
    auto x = g.reshape(mel, {1, mv.rows(), mv.cols()});
    for (size_t i = 0; i < mel_down.size(); ++i) {
      x = g.leaky_relu(mel_down[i].apply(g, ps, x), 0.1);
      x = g.leaky_relu(g.add(x, mel_res[i].apply(g, ps, x)), 0.1);
    }
    return g.frames_from_chw(x);
  }

  // Phoneme-level posterior from the target mel and its duration partition.
  LatentPosterior<T> posterior(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var mel,
                               const std::vector<int>& durations) const {
    auto frames = mel_frame_features(g, ps, mel);
    auto pooled = g.segment_mean_rows(frames, durations);
    auto mu = mel_mu.apply(g, ps, pooled);
    auto logvar = g.clamp_(mel_logvar.apply(g, ps, pooled), cfg.logvar_min, cfg.logvar_max);
    return {mu, logvar};
  }

  // Reparameterized sample; eps is caller-provided unit noise (L, d_latent).
  typename Graph<T>::Var sample(Graph<T>& g, const LatentPosterior<T>& post,
                                typename Graph<T>::Var eps) const {
    auto std_ = g.exp_(g.mul_scalar(post.logvar, 0.5));
    return g.add(post.mu, g.mul(std_, eps));
  }

  // e_con = e_ling + Proj(z)
  typename Graph<T>::Var fuse(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var e_ling,
                              typename Graph<T>::Var z) const {
    return g.add(e_ling, zproj.apply(g, ps, z));
  }

  // Optional untested variant: skip the latent bottleneck and add pooled mel
  // features directly. Kept behind fuse_direct_emel.
  typename Graph<T>::Var fuse_direct(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var e_ling,
                                     typename Graph<T>::Var mel, const std::vector<int>& durations) const {
    auto pooled = g.segment_mean_rows(mel_frame_features(g, ps, mel), durations);
    return g.add(e_ling, mel_direct.apply(g, ps, pooled));
  }
};

}  // namespace nn
}  // namespace sdtts

#endif

#ifndef SDTTS_OBJECTIVES_HPP
#define SDTTS_OBJECTIVES_HPP

#include <string>
#include <vector>

#include "sdtts/config.hpp"
#include "sdtts/layers.hpp"

namespace sdtts {
namespace nn {

// Mean absolute error over all mel cells.
template <typename T>
typename Graph<T>::Var l_rec(Graph<T>& g, typename Graph<T>::Var mel_hat, typename Graph<T>::Var mel_ref) {
  return g.mean_all(g.abs_(g.sub(mel_hat, mel_ref)));
}

// Closed-form KL of N(mu, exp(logvar)) against the unit Gaussian, averaged
// over all latent cells: 0.5 * (exp(lv) + mu^2 - 1 - lv).
template <typename T>
typename Graph<T>::Var l_kl(Graph<T>& g, typename Graph<T>::Var mu, typename Graph<T>::Var logvar) {
  auto term = g.sub(g.add_scalar(g.add(g.exp_(logvar), g.mul(mu, mu)), -1.0), logvar);
  return g.mul_scalar(g.mean_all(term), 0.5);
}

// Least-squares GAN terms. Scores may be any shape (patch grids included).
template <typename T>
typename Graph<T>::Var lsgan_d(Graph<T>& g, typename Graph<T>::Var real_scores,
                               typename Graph<T>::Var fake_scores) {
  auto r = g.mean_all(g.mul(g.add_scalar(real_scores, -1.0), g.add_scalar(real_scores, -1.0)));
  auto f = g.mean_all(g.mul(fake_scores, fake_scores));
  return g.add(r, f);
}

template <typename T>
typename Graph<T>::Var lsgan_g(Graph<T>& g, typename Graph<T>::Var fake_scores) {
  return g.mean_all(g.mul(g.add_scalar(fake_scores, -1.0), g.add_scalar(fake_scores, -1.0)));
}

// Mean squared error, used per predicted attribute.
template <typename T>
typename Graph<T>::Var l_mse(Graph<T>& g, typename Graph<T>::Var pred, typename Graph<T>::Var target) {
  auto d = g.sub(pred, target);
  return g.mean_all(g.mul(d, d));
}

// Cycle consistency over speaker embeddings:
//   -(1/B) * sum_i log( exp(cos(e_hat_i, e_i)) / sum_{j != i} exp(cos(e_hat_i, e_j)) )
// The denominator runs over the other batch items only, so the loss can go
// negative and needs B >= 2. Rows are L2-normalized here; zero-norm
// embeddings throw.
template <typename T>
typename Graph<T>::Var l_cyc(Graph<T>& g, typename Graph<T>::Var e_hat, typename Graph<T>::Var e_ref,
                             bool include_positive = false) {
  auto cos = g.matmul(g.normalize_rows(e_hat), g.transpose(g.normalize_rows(e_ref)));
  return g.cyclic_nce(cos, include_positive);
}

// PatchGAN discriminator over mel spectrograms: strided 2D convs along time
// with leaky ReLU, no normalization, ending in a 1-channel score grid.
template <typename T>
struct Discriminator {
  RunConfig cfg;
  std::vector<Conv2dLayer<T>> convs;
  Conv2dLayer<T> head;

  Discriminator() = default;
  Discriminator(ParamStore<T>& ps, const RunConfig& cfg_) : cfg(cfg_) {
    int ch_in = 1;
    int ch = cfg.disc_channels;
    for (int i = 0; i < cfg.disc_layers; ++i) {
      convs.emplace_back(ps, "disc.conv" + std::to_string(i), ch_in, ch, 4, 3, 2, 1, 1, 1,
                         PadMode::kZero);
      ch_in = ch;
      if (ch < 4 * cfg.disc_channels) ch *= 2;
    }
    head = Conv2dLayer<T>(ps, "disc.head", ch_in, 1, 3, 3, 1, 1, 1, 1, PadMode::kZero);
  }

  // (T, F) mel -> (1, T', F) score grid. Throws if T is shorter than the
  // receptive field of the strided stack.
  typename Graph<T>::Var score(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var mel) const {
    const auto& mv = g.value(mel);
    if (mv.rank() != 2 || mv.cols() != cfg.mel_bins)
      throw std::invalid_argument("discriminator: mel must be (T, " + std::to_string(cfg.mel_bins) + ")");
    auto x = g.reshape(mel, {1, mv.rows(), mv.cols()});
    for (const auto& c : convs) x = g.leaky_relu(c.apply(g, ps, x), 0.2);
    return head.apply(g, ps, x);
  }
};

}  // namespace nn
}  // namespace sdtts

#endif

#ifndef SDTTS_LAYERS_HPP
#define SDTTS_LAYERS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "sdtts/graph.hpp"
#include "sdtts/params.hpp"

namespace sdtts {
namespace nn {

// Fetch a parameter as a graph leaf. Frozen entries enter as constants so no
// gradient is ever formed for them.
template <typename T>
typename Graph<T>::Var pvar(Graph<T>& g, ParamStore<T>& ps, const std::string& name) {
  auto& e = ps.get(name);
  if (!e.trainable) return g.constant(e.value);
  return g.param(e.value, e.grad);
}

// pe[t, 2i] = sin(t / 10000^(2i/D)), pe[t, 2i+1] = cos(same).
template <typename T>
Tensor<T> sinusoidal_pe(int length, int dim) {
  Tensor<T> pe({length, dim});
  for (int t = 0; t < length; ++t)
    for (int i = 0; i < dim; i += 2) {
      double angle = static_cast<double>(t) / std::pow(10000.0, static_cast<double>(i) / dim);
      pe(t, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < dim) pe(t, i + 1) = static_cast<T>(std::cos(angle));
    }
  return pe;
}

template <typename T>
struct Linear {
  std::string name;
  int in = 0, out = 0;
  bool bias = true;

  Linear() = default;
  Linear(ParamStore<T>& ps, std::string name_, int in_, int out_, bool bias_ = true)
      : name(std::move(name_)), in(in_), out(out_), bias(bias_) {
    ps.add_glorot(name + ".w", {in, out}, in, out);
    if (bias) ps.add_const(name + ".b", {1, out}, 0.0);
  }

  typename Graph<T>::Var apply(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var x) const {
    auto y = g.matmul(x, pvar(g, ps, name + ".w"));
    if (bias) y = g.add_rowvec(y, pvar(g, ps, name + ".b"));
    return y;
  }
};

template <typename T>
struct LayerNorm {
  std::string name;
  double eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, std::string name_, int dim) : name(std::move(name_)) {
    ps.add_const(name + ".g", {1, dim}, 1.0);
    ps.add_const(name + ".b", {1, dim}, 0.0);
  }

  typename Graph<T>::Var apply(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var x) const {
    return g.layer_norm_rows(x, pvar(g, ps, name + ".g"), pvar(g, ps, name + ".b"), eps);
  }
};

// Multi-head scaled dot-product attention. When rel_window >= 0 each head
// adds a learned relative-offset bias (offsets clipped to +-rel_window) to
// its score matrix before the softmax.
template <typename T>
struct MultiHeadAttention {
  std::string name;
  int dim = 0, heads = 0, rel_window = -1;
  Linear<T> wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& ps, std::string name_, int dim_, int heads_, int rel_window_ = -1)
      : MultiHeadAttention(ps, std::move(name_), dim_, dim_, dim_, heads_, rel_window_) {}

  // Cross-attention form: queries arrive in q_dim, keys/values in kv_dim,
  // output in dim.
  MultiHeadAttention(ParamStore<T>& ps, std::string name_, int q_dim, int kv_dim, int dim_, int heads_,
                     int rel_window_ = -1)
      : name(std::move(name_)), dim(dim_), heads(heads_), rel_window(rel_window_) {
    if (dim % heads != 0)
      throw std::invalid_argument("attention: dim " + std::to_string(dim) + " not divisible by " +
                                  std::to_string(heads) + " heads");
    wq = Linear<T>(ps, name + ".wq", q_dim, dim, false);
    wk = Linear<T>(ps, name + ".wk", kv_dim, dim, false);
    wv = Linear<T>(ps, name + ".wv", kv_dim, dim, false);
    wo = Linear<T>(ps, name + ".wo", dim, dim, true);
    if (rel_window >= 0)
      for (int h = 0; h < heads; ++h)
        ps.add_normal(name + ".relbias.h" + std::to_string(h), {1, 2 * rel_window + 1}, 0.02);
  }

  typename Graph<T>::Var apply(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var queries,
                               typename Graph<T>::Var keys_values) const {
    int lq = g.value(queries).rows();
    int lk = g.value(keys_values).rows();
    if (rel_window >= 0 && lq != lk)
      throw std::invalid_argument("attention: relative bias requires matching sequence lengths");
    auto q = wq.apply(g, ps, queries);
    auto k = wk.apply(g, ps, keys_values);
    auto v = wv.apply(g, ps, keys_values);
    int dh = dim / heads;
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<typename Graph<T>::Var> head_outs;
    for (int h = 0; h < heads; ++h) {
      auto qh = g.slice_cols(q, h * dh, (h + 1) * dh);
      auto kh = g.slice_cols(k, h * dh, (h + 1) * dh);
      auto vh = g.slice_cols(v, h * dh, (h + 1) * dh);
      auto scores = g.mul_scalar(g.matmul(qh, g.transpose(kh)), scale);
      if (rel_window >= 0) {
        auto bias = g.rel_pos_bias(pvar(g, ps, name + ".relbias.h" + std::to_string(h)), lq, rel_window);
        scores = g.add(scores, bias);
      }
      auto probs = g.softmax_rows(scores);
      head_outs.push_back(g.matmul(probs, vh));
    }
    auto merged = head_outs[0];
    for (size_t h = 1; h < head_outs.size(); ++h) merged = g.concat_cols(merged, head_outs[static_cast<size_t>(h)]);
    return wo.apply(g, ps, merged);
  }
};

// Pre-norm transformer block: x + MHA(LN(x)), then y + FFN(LN(y)).
template <typename T>
struct FftBlock {
  std::string name;
  MultiHeadAttention<T> attn;
  LayerNorm<T> ln1, ln2;
  Linear<T> ff1, ff2;

  FftBlock() = default;
  FftBlock(ParamStore<T>& ps, std::string name_, int dim, int heads, int ffn_dim, int rel_window)
      : name(std::move(name_)) {
    attn = MultiHeadAttention<T>(ps, name + ".attn", dim, heads, rel_window);
    ln1 = LayerNorm<T>(ps, name + ".ln1", dim);
    ln2 = LayerNorm<T>(ps, name + ".ln2", dim);
    ff1 = Linear<T>(ps, name + ".ff1", dim, ffn_dim);
    ff2 = Linear<T>(ps, name + ".ff2", ffn_dim, dim);
  }

  typename Graph<T>::Var apply(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var x) const {
    auto n1 = ln1.apply(g, ps, x);
    auto y = g.add(x, attn.apply(g, ps, n1, n1));
    auto n2 = ln2.apply(g, ps, y);
    return g.add(y, ff2.apply(g, ps, g.relu(ff1.apply(g, ps, n2))));
  }
};

template <typename T>
struct Conv2dLayer {
  std::string name;
  int sh = 1, sw = 1, ph = 0, pw = 0;
  PadMode pad_mode_h = PadMode::kZero;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<T>& ps, std::string name_, int ci, int co, int kh, int kw, int sh_, int sw_,
              int ph_, int pw_, PadMode pad_mode_h_)
      : name(std::move(name_)), sh(sh_), sw(sw_), ph(ph_), pw(pw_), pad_mode_h(pad_mode_h_) {
    ps.add_glorot(name + ".w", {co, ci, kh, kw}, ci * kh * kw, co * kh * kw);
    ps.add_const(name + ".b", {co}, 0.0);
  }

  typename Graph<T>::Var apply(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var x) const {
    return g.conv2d(x, pvar(g, ps, name + ".w"), pvar(g, ps, name + ".b"), sh, sw, ph, pw, pad_mode_h);
  }
};

template <typename T>
struct Conv1dLayer {
  std::string name;
  int stride = 1, pad = 0;
  PadMode pad_mode = PadMode::kZero;

  Conv1dLayer() = default;
  Conv1dLayer(ParamStore<T>& ps, std::string name_, int ci, int co, int k, int stride_, int pad_,
              PadMode pad_mode_)
      : name(std::move(name_)), stride(stride_), pad(pad_), pad_mode(pad_mode_) {
    ps.add_glorot(name + ".w", {co, ci, k}, ci * k, co * k);
    ps.add_const(name + ".b", {co}, 0.0);
  }

  typename Graph<T>::Var apply(Graph<T>& g, ParamStore<T>& ps, typename Graph<T>::Var x) const {
    return g.conv1d(x, pvar(g, ps, name + ".w"), pvar(g, ps, name + ".b"), stride, pad, pad_mode);
  }
};

}  // namespace nn
}  // namespace sdtts

#endif

#ifndef SDTTS_GRAPH_HPP
#define SDTTS_GRAPH_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdtts/tensor.hpp"

namespace sdtts {
namespace nn {

enum class PadMode { kZero, kReplicate };

// Reverse-mode autodiff over a linear tape. One Graph instance per forward
// pass; nodes are created in topological order, so backward() is a single
// reverse sweep. Nodes own their value tensors; gradients are allocated
// lazily. Parameter leaves carry a pointer to an external gradient sink that
// backward() accumulates into.
template <typename T>
class Graph {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool needs_grad = false;
    Tensor<T>* grad_sink = nullptr;
    std::function<void(Graph&, int)> backward;
  };

  const Tensor<T>& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  const Tensor<T>& grad(Var v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (!n.has_grad)
      throw std::runtime_error("graph: gradient was not computed for this node");
    return n.grad;
  }
  bool has_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].has_grad; }
  const std::vector<int>& shape(Var v) const { return value(v).shape; }
  size_t node_count() const { return nodes_.size(); }

  // ---- leaves ----

  Var constant(Tensor<T> v) { return push(std::move(v), false); }

  Var input(Tensor<T> v, bool needs_grad) { return push(std::move(v), needs_grad); }

  Var param(const Tensor<T>& value, Tensor<T>& grad_sink) {
    if (!value.same_shape(grad_sink))
      throw std::invalid_argument("graph: parameter gradient sink shape mismatch");
    if (freeze_params_) return push(value, false);
    Var v = push(value, true);
    nodes_[static_cast<size_t>(v.id)].grad_sink = &grad_sink;
    return v;
  }

  // While set, param() produces constant leaves: used to score a frozen
  // discriminator inside the generator graph and to run inference cheaply.
  void set_param_freeze(bool v) { freeze_params_ = v; }

  Var detach(Var x) { return push(value(x), false); }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor<T> out = value(a);
    const Tensor<T>& vb = value(b);
    for (int64_t i = 0; i < out.size(); ++i) out.data[static_cast<size_t>(i)] += vb.data[static_cast<size_t>(i)];
    return make(std::move(out), {a, b}, [](Graph& g, int id) {
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], go);
      g.accumulate(g.parents_[static_cast<size_t>(id)][1], go);
    });
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor<T> out = value(a);
    const Tensor<T>& vb = value(b);
    for (int64_t i = 0; i < out.size(); ++i) out.data[static_cast<size_t>(i)] -= vb.data[static_cast<size_t>(i)];
    return make(std::move(out), {a, b}, [](Graph& g, int id) {
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], go);
      Tensor<T> neg = go;
      for (auto& v : neg.data) v = -v;
      g.accumulate(g.parents_[static_cast<size_t>(id)][1], neg);
    });
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    Tensor<T> out = va;
    for (int64_t i = 0; i < out.size(); ++i) out.data[static_cast<size_t>(i)] *= vb.data[static_cast<size_t>(i)];
    return make(std::move(out), {a, b}, [](Graph& g, int id) {
      Var pa = g.parents_[static_cast<size_t>(id)][0];
      Var pb = g.parents_[static_cast<size_t>(id)][1];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> ga = g.value(pb);
      Tensor<T> gb = g.value(pa);
      for (int64_t i = 0; i < go.size(); ++i) {
        ga.data[static_cast<size_t>(i)] *= go.data[static_cast<size_t>(i)];
        gb.data[static_cast<size_t>(i)] *= go.data[static_cast<size_t>(i)];
      }
      g.accumulate(pa, ga);
      g.accumulate(pb, gb);
    });
  }

  Var add_scalar(Var a, double s) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v += static_cast<T>(s);
    return make(std::move(out), {a}, [](Graph& g, int id) {
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], g.nodes_[static_cast<size_t>(id)].grad);
    });
  }

  Var mul_scalar(Var a, double s) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v *= static_cast<T>(s);
    return make(std::move(out), {a}, [s](Graph& g, int id) {
      Tensor<T> gi = g.nodes_[static_cast<size_t>(id)].grad;
      for (auto& v : gi.data) v *= static_cast<T>(s);
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], gi);
    });
  }

  // out[r,c] = X[r,c] + v[0,c]
  Var add_rowvec(Var x, Var v) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vv = value(v);
    if (vx.rank() != 2 || vv.rank() != 2 || vv.rows() != 1 || vv.cols() != vx.cols())
      throw std::invalid_argument("add_rowvec: shape mismatch " + shape_str(vx.shape) + " vs " + shape_str(vv.shape));
    Tensor<T> out = vx;
    for (int r = 0; r < vx.rows(); ++r)
      for (int c = 0; c < vx.cols(); ++c) out(r, c) += vv(0, c);
    return make(std::move(out), {x, v}, [](Graph& g, int id) {
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], go);
      Tensor<T> gv({1, go.cols()});
      for (int r = 0; r < go.rows(); ++r)
        for (int c = 0; c < go.cols(); ++c) gv(0, c) += go(r, c);
      g.accumulate(g.parents_[static_cast<size_t>(id)][1], gv);
    });
  }

  // out[r,c] = X[r,c] * v[r,0]  (per-row scale; used as per-channel scale on (C,T) maps)
  Var mul_colvec(Var x, Var v) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vv = value(v);
    if (vx.rank() != 2 || vv.rank() != 2 || vv.cols() != 1 || vv.rows() != vx.rows())
      throw std::invalid_argument("mul_colvec: shape mismatch " + shape_str(vx.shape) + " vs " + shape_str(vv.shape));
    Tensor<T> out = vx;
    for (int r = 0; r < vx.rows(); ++r)
      for (int c = 0; c < vx.cols(); ++c) out(r, c) *= vv(r, 0);
    return make(std::move(out), {x, v}, [](Graph& g, int id) {
      Var px = g.parents_[static_cast<size_t>(id)][0];
      Var pv = g.parents_[static_cast<size_t>(id)][1];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      const Tensor<T>& vx = g.value(px);
      const Tensor<T>& vv = g.value(pv);
      Tensor<T> gx = go;
      Tensor<T> gv({go.rows(), 1});
      for (int r = 0; r < go.rows(); ++r)
        for (int c = 0; c < go.cols(); ++c) {
          gx(r, c) *= vv(r, 0);
          gv(r, 0) += go(r, c) * vx(r, c);
        }
      g.accumulate(px, gx);
      g.accumulate(pv, gv);
    });
  }

  Var add_colvec(Var x, Var v) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vv = value(v);
    if (vx.rank() != 2 || vv.rank() != 2 || vv.cols() != 1 || vv.rows() != vx.rows())
      throw std::invalid_argument("add_colvec: shape mismatch " + shape_str(vx.shape) + " vs " + shape_str(vv.shape));
    Tensor<T> out = vx;
    for (int r = 0; r < vx.rows(); ++r)
      for (int c = 0; c < vx.cols(); ++c) out(r, c) += vv(r, 0);
    return make(std::move(out), {x, v}, [](Graph& g, int id) {
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], go);
      Tensor<T> gv({go.rows(), 1});
      for (int r = 0; r < go.rows(); ++r)
        for (int c = 0; c < go.cols(); ++c) gv(r, 0) += go(r, c);
      g.accumulate(g.parents_[static_cast<size_t>(id)][1], gv);
    });
  }

  // ---- nonlinearities ----

  Var relu(Var a) {
    return unary(a, [](T x) { return x > T(0) ? x : T(0); },
                 [](T x, T) { return x > T(0) ? T(1) : T(0); });
  }

  Var leaky_relu(Var a, double slope) {
    T s = static_cast<T>(slope);
    return unary(a, [s](T x) { return x > T(0) ? x : s * x; },
                 [s](T x, T) { return x > T(0) ? T(1) : s; });
  }

  Var tanh_(Var a) {
    return unary(a, [](T x) { return std::tanh(x); },
                 [](T, T y) { return T(1) - y * y; });
  }

  Var sigmoid_(Var a) {
    return unary(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
                 [](T, T y) { return y * (T(1) - y); });
  }

  Var exp_(Var a) {
    return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
  }

  Var log_(Var a) {
    return unary(a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
  }

  Var abs_(Var a) {
    return unary(a, [](T x) { return std::fabs(x); },
                 [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
  }

  // Hard clamp; gradient passes only strictly inside the range.
  Var clamp_(Var a, double lo, double hi) {
    T l = static_cast<T>(lo), h = static_cast<T>(hi);
    return unary(a, [l, h](T x) { return std::min(std::max(x, l), h); },
                 [l, h](T x, T) { return (x > l && x < h) ? T(1) : T(0); });
  }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.cols() != vb.rows())
      throw std::invalid_argument("matmul: shape mismatch " + shape_str(va.shape) + " x " + shape_str(vb.shape));
    Tensor<T> out({va.rows(), vb.cols()});
    matmul_into(out, va, vb, false, false);
    return make(std::move(out), {a, b}, [](Graph& g, int id) {
      Var pa = g.parents_[static_cast<size_t>(id)][0];
      Var pb = g.parents_[static_cast<size_t>(id)][1];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      const Tensor<T>& va = g.value(pa);
      const Tensor<T>& vb = g.value(pb);
      if (g.wants_grad(pa)) {
        Tensor<T> ga({va.rows(), va.cols()});
        matmul_into(ga, go, vb, false, true);  // dA = dY * B^T
        g.accumulate(pa, ga);
      }
      if (g.wants_grad(pb)) {
        Tensor<T> gb({vb.rows(), vb.cols()});
        matmul_into(gb, va, go, true, false);  // dB = A^T * dY
        g.accumulate(pb, gb);
      }
    });
  }

  Var transpose(Var a) {
    const Tensor<T>& va = value(a);
    if (va.rank() != 2) throw std::invalid_argument("transpose: expected rank 2");
    Tensor<T> out({va.cols(), va.rows()});
    for (int r = 0; r < va.rows(); ++r)
      for (int c = 0; c < va.cols(); ++c) out(c, r) = va(r, c);
    return make(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi({go.cols(), go.rows()});
      for (int r = 0; r < go.rows(); ++r)
        for (int c = 0; c < go.cols(); ++c) gi(c, r) = go(r, c);
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], gi);
    });
  }

  Var reshape(Var a, std::vector<int> new_shape) {
    const Tensor<T>& va = value(a);
    if (Tensor<T>::count(new_shape) != va.size())
      throw std::invalid_argument("reshape: element count mismatch");
    Tensor<T> out(new_shape, va.data);
    return make(std::move(out), {a}, [](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      Tensor<T> gi(g.value(p).shape, g.nodes_[static_cast<size_t>(id)].grad.data);
      g.accumulate(p, gi);
    });
  }

  Var slice_cols(Var a, int c0, int c1) {
    const Tensor<T>& va = value(a);
    if (va.rank() != 2 || c0 < 0 || c1 > va.cols() || c0 >= c1)
      throw std::invalid_argument("slice_cols: bad range");
    Tensor<T> out({va.rows(), c1 - c0});
    for (int r = 0; r < va.rows(); ++r)
      for (int c = c0; c < c1; ++c) out(r, c - c0) = va(r, c);
    return make(std::move(out), {a}, [c0](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi(g.value(p).shape);
      for (int r = 0; r < go.rows(); ++r)
        for (int c = 0; c < go.cols(); ++c) gi(r, c + c0) = go(r, c);
      g.accumulate(p, gi);
    });
  }

  Var concat_cols(Var a, Var b) {
    const Tensor<T>& va = value(a);
    const Tensor<T>& vb = value(b);
    if (va.rank() != 2 || vb.rank() != 2 || va.rows() != vb.rows())
      throw std::invalid_argument("concat_cols: row mismatch");
    Tensor<T> out({va.rows(), va.cols() + vb.cols()});
    for (int r = 0; r < va.rows(); ++r) {
      for (int c = 0; c < va.cols(); ++c) out(r, c) = va(r, c);
      for (int c = 0; c < vb.cols(); ++c) out(r, va.cols() + c) = vb(r, c);
    }
    int ca = va.cols();
    return make(std::move(out), {a, b}, [ca](Graph& g, int id) {
      Var pa = g.parents_[static_cast<size_t>(id)][0];
      Var pb = g.parents_[static_cast<size_t>(id)][1];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> ga(g.value(pa).shape), gb(g.value(pb).shape);
      for (int r = 0; r < go.rows(); ++r) {
        for (int c = 0; c < ca; ++c) ga(r, c) = go(r, c);
        for (int c = ca; c < go.cols(); ++c) gb(r, c - ca) = go(r, c);
      }
      g.accumulate(pa, ga);
      g.accumulate(pb, gb);
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    int cols = value(parts[0]).cols();
    int rows = 0;
    for (Var p : parts) {
      const Tensor<T>& v = value(p);
      if (v.rank() != 2 || v.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
      rows += v.rows();
    }
    Tensor<T> out({rows, cols});
    int r0 = 0;
    for (Var p : parts) {
      const Tensor<T>& v = value(p);
      for (int r = 0; r < v.rows(); ++r)
        for (int c = 0; c < cols; ++c) out(r0 + r, c) = v(r, c);
      r0 += v.rows();
    }
    return make(std::move(out), parts, [](Graph& g, int id) {
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      int r0 = 0;
      for (Var p : g.parents_[static_cast<size_t>(id)]) {
        const Tensor<T>& v = g.value(p);
        Tensor<T> gp(v.shape);
        for (int r = 0; r < v.rows(); ++r)
          for (int c = 0; c < go.cols(); ++c) gp(r, c) = go(r0 + r, c);
        g.accumulate(p, gp);
        r0 += v.rows();
      }
    });
  }

  // ---- softmax / normalization ----

  Var softmax_rows(Var a) {
    const Tensor<T>& va = value(a);
    if (va.rank() != 2) throw std::invalid_argument("softmax_rows: expected rank 2");
    Tensor<T> out = va;
    for (int r = 0; r < va.rows(); ++r) {
      T mx = out(r, 0);
      for (int c = 1; c < va.cols(); ++c) mx = std::max(mx, out(r, c));
      T sum = 0;
      for (int c = 0; c < va.cols(); ++c) {
        out(r, c) = std::exp(out(r, c) - mx);
        sum += out(r, c);
      }
      for (int c = 0; c < va.cols(); ++c) out(r, c) /= sum;
    }
    return make(std::move(out), {a}, [](Graph& g, int id) {
      const Tensor<T>& y = g.nodes_[static_cast<size_t>(id)].value;
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi(y.shape);
      for (int r = 0; r < y.rows(); ++r) {
        T dot = 0;
        for (int c = 0; c < y.cols(); ++c) dot += go(r, c) * y(r, c);
        for (int c = 0; c < y.cols(); ++c) gi(r, c) = y(r, c) * (go(r, c) - dot);
      }
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], gi);
    });
  }

  Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vg = value(gain);
    const Tensor<T>& vb = value(bias);
    if (vx.rank() != 2 || vg.rows() != 1 || vg.cols() != vx.cols() || vb.rows() != 1 || vb.cols() != vx.cols())
      throw std::invalid_argument("layer_norm_rows: shape mismatch");
    int R = vx.rows(), C = vx.cols();
    Tensor<T> out({R, C});
    Tensor<T> xhat({R, C});
    std::vector<T> inv_std(static_cast<size_t>(R));
    for (int r = 0; r < R; ++r) {
      T mean = 0;
      for (int c = 0; c < C; ++c) mean += vx(r, c);
      mean /= static_cast<T>(C);
      T var = 0;
      for (int c = 0; c < C; ++c) {
        T d = vx(r, c) - mean;
        var += d * d;
      }
      var /= static_cast<T>(C);
      T is = T(1) / std::sqrt(var + static_cast<T>(eps));
      inv_std[static_cast<size_t>(r)] = is;
      for (int c = 0; c < C; ++c) {
        xhat(r, c) = (vx(r, c) - mean) * is;
        out(r, c) = xhat(r, c) * vg(0, c) + vb(0, c);
      }
    }
    auto xh = std::make_shared<Tensor<T>>(std::move(xhat));
    auto istd = std::make_shared<std::vector<T>>(std::move(inv_std));
    return make(std::move(out), {x, gain, bias}, [xh, istd](Graph& g, int id) {
      Var px = g.parents_[static_cast<size_t>(id)][0];
      Var pg = g.parents_[static_cast<size_t>(id)][1];
      Var pb = g.parents_[static_cast<size_t>(id)][2];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      const Tensor<T>& vg = g.value(pg);
      int R = go.rows(), C = go.cols();
      Tensor<T> ggain({1, C}), gbias({1, C}), gx({R, C});
      for (int r = 0; r < R; ++r) {
        T sum_d = 0, sum_dx = 0;
        for (int c = 0; c < C; ++c) {
          T d = go(r, c) * vg(0, c);
          sum_d += d;
          sum_dx += d * (*xh)(r, c);
          ggain(0, c) += go(r, c) * (*xh)(r, c);
          gbias(0, c) += go(r, c);
        }
        T is = (*istd)[static_cast<size_t>(r)];
        for (int c = 0; c < C; ++c) {
          T d = go(r, c) * vg(0, c);
          gx(r, c) = is * (d - sum_d / static_cast<T>(C) - (*xh)(r, c) * sum_dx / static_cast<T>(C));
        }
      }
      g.accumulate(px, gx);
      g.accumulate(pg, ggain);
      g.accumulate(pb, gbias);
    });
  }

  // Rows scaled to unit L2 norm. Throws if any row norm is (near) zero,
  // since the cosine similarity downstream is undefined there.
  Var normalize_rows(Var x) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2) throw std::invalid_argument("normalize_rows: expected rank 2");
    int R = vx.rows(), C = vx.cols();
    Tensor<T> out({R, C});
    std::vector<T> norms(static_cast<size_t>(R));
    for (int r = 0; r < R; ++r) {
      T s = 0;
      for (int c = 0; c < C; ++c) s += vx(r, c) * vx(r, c);
      T n = std::sqrt(s);
      if (!(n > static_cast<T>(1e-12)))
        throw std::invalid_argument("normalize_rows: zero-norm embedding at row " + std::to_string(r));
      norms[static_cast<size_t>(r)] = n;
      for (int c = 0; c < C; ++c) out(r, c) = vx(r, c) / n;
    }
    auto nrm = std::make_shared<std::vector<T>>(std::move(norms));
    return make(std::move(out), {x}, [nrm](Graph& g, int id) {
      const Tensor<T>& y = g.nodes_[static_cast<size_t>(id)].value;
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi(y.shape);
      for (int r = 0; r < y.rows(); ++r) {
        T dot = 0;
        for (int c = 0; c < y.cols(); ++c) dot += go(r, c) * y(r, c);
        T n = (*nrm)[static_cast<size_t>(r)];
        for (int c = 0; c < y.cols(); ++c) gi(r, c) = (go(r, c) - y(r, c) * dot) / n;
      }
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], gi);
    });
  }

  // Per-row (channel) normalization over columns (time), no affine part.
  Var instance_norm_rows(Var x, double eps) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2) throw std::invalid_argument("instance_norm_rows: expected rank 2");
    int C = vx.rows(), L = vx.cols();
    Tensor<T> out({C, L});
    std::vector<T> inv_std(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
      T mean = 0;
      for (int t = 0; t < L; ++t) mean += vx(c, t);
      mean /= static_cast<T>(L);
      T var = 0;
      for (int t = 0; t < L; ++t) {
        T d = vx(c, t) - mean;
        var += d * d;
      }
      var /= static_cast<T>(L);
      T is = T(1) / std::sqrt(var + static_cast<T>(eps));
      inv_std[static_cast<size_t>(c)] = is;
      for (int t = 0; t < L; ++t) out(c, t) = (vx(c, t) - mean) * is;
    }
    auto istd = std::make_shared<std::vector<T>>(std::move(inv_std));
    return make(std::move(out), {x}, [istd](Graph& g, int id) {
      const Tensor<T>& y = g.nodes_[static_cast<size_t>(id)].value;
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      int C = y.rows(), L = y.cols();
      Tensor<T> gi(y.shape);
      for (int c = 0; c < C; ++c) {
        T sum_d = 0, sum_dy = 0;
        for (int t = 0; t < L; ++t) {
          sum_d += go(c, t);
          sum_dy += go(c, t) * y(c, t);
        }
        T is = (*istd)[static_cast<size_t>(c)];
        for (int t = 0; t < L; ++t)
          gi(c, t) = is * (go(c, t) - sum_d / static_cast<T>(L) - y(c, t) * sum_dy / static_cast<T>(L));
      }
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], gi);
    });
  }

  // ---- lookup / segment ops ----

  Var embedding_rows(Var table, const std::vector<int>& ids) {
    const Tensor<T>& vt = value(table);
    if (vt.rank() != 2) throw std::invalid_argument("embedding_rows: table must be rank 2");
    for (size_t i = 0; i < ids.size(); ++i)
      if (ids[i] < 0 || ids[i] >= vt.rows())
        throw std::invalid_argument("embedding_rows: id " + std::to_string(ids[i]) + " at position " +
                                    std::to_string(i) + " outside vocabulary of size " + std::to_string(vt.rows()));
    Tensor<T> out({static_cast<int>(ids.size()), vt.cols()});
    for (size_t i = 0; i < ids.size(); ++i)
      for (int c = 0; c < vt.cols(); ++c) out(static_cast<int>(i), c) = vt(ids[i], c);
    return make(std::move(out), {table}, [ids](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gt(g.value(p).shape);
      for (size_t i = 0; i < ids.size(); ++i)
        for (int c = 0; c < go.cols(); ++c) gt(ids[i], c) += go(static_cast<int>(i), c);
      g.accumulate(p, gt);
    });
  }

  // B[i,j] = v[0, clip(j - i + window, 0, 2*window)]
  Var rel_pos_bias(Var v, int len, int window) {
    const Tensor<T>& vv = value(v);
    if (vv.rank() != 2 || vv.rows() != 1 || vv.cols() != 2 * window + 1)
      throw std::invalid_argument("rel_pos_bias: bias vector must be (1, 2*window+1)");
    Tensor<T> out({len, len});
    for (int i = 0; i < len; ++i)
      for (int j = 0; j < len; ++j) {
        int off = std::clamp(j - i + window, 0, 2 * window);
        out(i, j) = vv(0, off);
      }
    return make(std::move(out), {v}, [len, window](Graph& g, int id) {
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gv({1, 2 * window + 1});
      for (int i = 0; i < len; ++i)
        for (int j = 0; j < len; ++j) {
          int off = std::clamp(j - i + window, 0, 2 * window);
          gv(0, off) += go(i, j);
        }
      g.accumulate(g.parents_[static_cast<size_t>(id)][0], gv);
    });
  }

  // Mean over each duration segment of rows: (T, D) -> (L, D).
  Var segment_mean_rows(Var x, const std::vector<int>& durations) {
    const Tensor<T>& vx = value(x);
    int total = 0;
    for (int d : durations) {
      if (d < 1) throw std::invalid_argument("segment_mean_rows: duration must be >= 1");
      total += d;
    }
    if (vx.rank() != 2 || total != vx.rows())
      throw std::invalid_argument("segment_mean_rows: durations sum to " + std::to_string(total) +
                                  " but input has " + std::to_string(vx.rows()) + " rows");
    Tensor<T> out({static_cast<int>(durations.size()), vx.cols()});
    int t = 0;
    for (size_t i = 0; i < durations.size(); ++i) {
      for (int k = 0; k < durations[i]; ++k, ++t)
        for (int c = 0; c < vx.cols(); ++c) out(static_cast<int>(i), c) += vx(t, c);
      for (int c = 0; c < vx.cols(); ++c) out(static_cast<int>(i), c) /= static_cast<T>(durations[i]);
    }
    return make(std::move(out), {x}, [durations](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi(g.value(p).shape);
      int t = 0;
      for (size_t i = 0; i < durations.size(); ++i)
        for (int k = 0; k < durations[i]; ++k, ++t)
          for (int c = 0; c < go.cols(); ++c)
            gi(t, c) = go(static_cast<int>(i), c) / static_cast<T>(durations[i]);
      g.accumulate(p, gi);
    });
  }

  // Row i repeated durations[i] times: (L, D) -> (sum durations, D).
  Var repeat_rows(Var x, const std::vector<int>& durations) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2 || static_cast<int>(durations.size()) != vx.rows())
      throw std::invalid_argument("repeat_rows: need one duration per row");
    int total = 0;
    for (int d : durations) {
      if (d < 1) throw std::invalid_argument("repeat_rows: duration must be >= 1");
      total += d;
    }
    Tensor<T> out({total, vx.cols()});
    int t = 0;
    for (int i = 0; i < vx.rows(); ++i)
      for (int k = 0; k < durations[static_cast<size_t>(i)]; ++k, ++t)
        for (int c = 0; c < vx.cols(); ++c) out(t, c) = vx(i, c);
    return make(std::move(out), {x}, [durations](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi(g.value(p).shape);
      int t = 0;
      for (int i = 0; i < gi.rows(); ++i)
        for (int k = 0; k < durations[static_cast<size_t>(i)]; ++k, ++t)
          for (int c = 0; c < go.cols(); ++c) gi(i, c) += go(t, c);
      g.accumulate(p, gi);
    });
  }

  // ---- reductions / statistics ----

  Var mean_all(Var x) {
    const Tensor<T>& vx = value(x);
    T sum = 0;
    for (T v : vx.data) sum += v;
    T n = static_cast<T>(vx.size());
    Tensor<T> out({1, 1});
    out.data[0] = sum / n;
    return make(std::move(out), {x}, [n](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      T go = g.nodes_[static_cast<size_t>(id)].grad.data[0];
      Tensor<T> gi(g.value(p).shape);
      gi.fill(go / n);
      g.accumulate(p, gi);
    });
  }

  Var sum_all(Var x) {
    const Tensor<T>& vx = value(x);
    T sum = 0;
    for (T v : vx.data) sum += v;
    Tensor<T> out({1, 1});
    out.data[0] = sum;
    return make(std::move(out), {x}, [](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      Tensor<T> gi(g.value(p).shape);
      gi.fill(g.nodes_[static_cast<size_t>(id)].grad.data[0]);
      g.accumulate(p, gi);
    });
  }

  // Column means of a (T, F) matrix -> (1, F).
  Var col_mean(Var x) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2) throw std::invalid_argument("col_mean: expected rank 2");
    int R = vx.rows(), C = vx.cols();
    Tensor<T> out({1, C});
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) out(0, c) += vx(r, c);
    for (int c = 0; c < C; ++c) out(0, c) /= static_cast<T>(R);
    return make(std::move(out), {x}, [R](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi(g.value(p).shape);
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < go.cols(); ++c) gi(r, c) = go(0, c) / static_cast<T>(R);
      g.accumulate(p, gi);
    });
  }

  // Population standard deviation per column -> (1, F).
  Var col_std(Var x, double eps) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 2) throw std::invalid_argument("col_std: expected rank 2");
    int R = vx.rows(), C = vx.cols();
    Tensor<T> mean({1, C});
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) mean(0, c) += vx(r, c);
    for (int c = 0; c < C; ++c) mean(0, c) /= static_cast<T>(R);
    Tensor<T> out({1, C});
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) {
        T d = vx(r, c) - mean(0, c);
        out(0, c) += d * d;
      }
    for (int c = 0; c < C; ++c) out(0, c) = std::sqrt(out(0, c) / static_cast<T>(R) + static_cast<T>(eps));
    auto mu = std::make_shared<Tensor<T>>(std::move(mean));
    return make(std::move(out), {x}, [mu, R](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& y = g.nodes_[static_cast<size_t>(id)].value;
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      const Tensor<T>& vx = g.value(p);
      Tensor<T> gi(vx.shape);
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < go.cols(); ++c)
          gi(r, c) = go(0, c) * (vx(r, c) - (*mu)(0, c)) / (static_cast<T>(R) * y(0, c));
      g.accumulate(p, gi);
    });
  }

  // ---- convolutions ----

  // x: (Ci, H, W), w: (Co, Ci, kh, kw), b: (Co). Stride (sh, sw), padding
  // (ph, pw). The H axis (time) honors pad_mode_h; the W axis always
  // zero-pads.
  Var conv2d(Var x, Var w, Var b, int sh, int sw, int ph, int pw, PadMode pad_mode_h) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(b);
    if (vx.rank() != 3 || vw.rank() != 4 || vb.rank() != 1)
      throw std::invalid_argument("conv2d: expected (C,H,W) input, (Co,Ci,kh,kw) weight, (Co) bias");
    int Ci = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
    int Co = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    if (vw.dim(1) != Ci || vb.dim(0) != Co)
      throw std::invalid_argument("conv2d: channel mismatch");
    int Ho = (H + 2 * ph - kh) / sh + 1;
    int Wo = (W + 2 * pw - kw) / sw + 1;
    if (H + 2 * ph < kh || W + 2 * pw < kw || Ho < 1 || Wo < 1)
      throw std::invalid_argument("conv2d: input smaller than receptive field (input " + shape_str(vx.shape) + ")");
    Tensor<T> out({Co, Ho, Wo});
    for (int co = 0; co < Co; ++co)
      for (int ho = 0; ho < Ho; ++ho)
        for (int wo = 0; wo < Wo; ++wo) {
          T acc = vb.data[static_cast<size_t>(co)];
          for (int ci = 0; ci < Ci; ++ci)
            for (int u = 0; u < kh; ++u) {
              int h = ho * sh - ph + u;
              bool h_ok = true;
              if (h < 0 || h >= H) {
                if (pad_mode_h == PadMode::kReplicate)
                  h = std::clamp(h, 0, H - 1);
                else
                  h_ok = false;
              }
              if (!h_ok) continue;
              for (int v = 0; v < kw; ++v) {
                int ww = wo * sw - pw + v;
                if (ww < 0 || ww >= W) continue;
                acc += vx.at3(ci, h, ww) * vw.at4(co, ci, u, v);
              }
            }
          out.at3(co, ho, wo) = acc;
        }
    return make(std::move(out), {x, w, b},
                [sh, sw, ph, pw, pad_mode_h](Graph& g, int id) {
                  Var px = g.parents_[static_cast<size_t>(id)][0];
                  Var pw_ = g.parents_[static_cast<size_t>(id)][1];
                  Var pb = g.parents_[static_cast<size_t>(id)][2];
                  const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
                  const Tensor<T>& vx = g.value(px);
                  const Tensor<T>& vw = g.value(pw_);
                  int Ci = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
                  int Co = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
                  int Ho = go.dim(1), Wo = go.dim(2);
                  Tensor<T> gx(vx.shape), gw(vw.shape), gb({Co});
                  for (int co = 0; co < Co; ++co)
                    for (int ho = 0; ho < Ho; ++ho)
                      for (int wo = 0; wo < Wo; ++wo) {
                        T go_v = go.at3(co, ho, wo);
                        gb.data[static_cast<size_t>(co)] += go_v;
                        for (int ci = 0; ci < Ci; ++ci)
                          for (int u = 0; u < kh; ++u) {
                            int h = ho * sh - ph + u;
                            if (h < 0 || h >= H) {
                              if (pad_mode_h == PadMode::kReplicate)
                                h = std::clamp(h, 0, H - 1);
                              else
                                continue;
                            }
                            for (int v = 0; v < kw; ++v) {
                              int ww = wo * sw - pw + v;
                              if (ww < 0 || ww >= W) continue;
                              gx.at3(ci, h, ww) += go_v * vw.at4(co, ci, u, v);
                              gw.at4(co, ci, u, v) += go_v * vx.at3(ci, h, ww);
                            }
                          }
                      }
                  g.accumulate(px, gx);
                  g.accumulate(pw_, gw);
                  g.accumulate(pb, gb);
                });
  }

  // x: (Ci, L), w: (Co, Ci, k), b: (Co).
  Var conv1d(Var x, Var w, Var b, int stride, int pad, PadMode pad_mode) {
    const Tensor<T>& vx = value(x);
    const Tensor<T>& vw = value(w);
    const Tensor<T>& vb = value(b);
    if (vx.rank() != 2 || vw.rank() != 3 || vb.rank() != 1)
      throw std::invalid_argument("conv1d: expected (C,L) input, (Co,Ci,k) weight, (Co) bias");
    int Ci = vx.dim(0), L = vx.dim(1);
    int Co = vw.dim(0), k = vw.dim(2);
    if (vw.dim(1) != Ci || vb.dim(0) != Co) throw std::invalid_argument("conv1d: channel mismatch");
    int Lo = (L + 2 * pad - k) / stride + 1;
    if (L + 2 * pad < k || Lo < 1)
      throw std::invalid_argument("conv1d: input smaller than receptive field");
    Tensor<T> out({Co, Lo});
    for (int co = 0; co < Co; ++co)
      for (int lo = 0; lo < Lo; ++lo) {
        T acc = vb.data[static_cast<size_t>(co)];
        for (int ci = 0; ci < Ci; ++ci)
          for (int u = 0; u < k; ++u) {
            int l = lo * stride - pad + u;
            if (l < 0 || l >= L) {
              if (pad_mode == PadMode::kReplicate)
                l = std::clamp(l, 0, L - 1);
              else
                continue;
            }
            acc += vx(ci, l) * vw.data[(static_cast<size_t>(co) * Ci + ci) * k + u];
          }
        out(co, lo) = acc;
      }
    return make(std::move(out), {x, w, b}, [stride, pad, pad_mode](Graph& g, int id) {
      Var px = g.parents_[static_cast<size_t>(id)][0];
      Var pw = g.parents_[static_cast<size_t>(id)][1];
      Var pb = g.parents_[static_cast<size_t>(id)][2];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      const Tensor<T>& vx = g.value(px);
      const Tensor<T>& vw = g.value(pw);
      int Ci = vx.dim(0), L = vx.dim(1);
      int Co = vw.dim(0), k = vw.dim(2);
      int Lo = go.dim(1);
      Tensor<T> gx(vx.shape), gw(vw.shape), gb({Co});
      for (int co = 0; co < Co; ++co)
        for (int lo = 0; lo < Lo; ++lo) {
          T go_v = go(co, lo);
          gb.data[static_cast<size_t>(co)] += go_v;
          for (int ci = 0; ci < Ci; ++ci)
            for (int u = 0; u < k; ++u) {
              int l = lo * stride - pad + u;
              if (l < 0 || l >= L) {
                if (pad_mode == PadMode::kReplicate)
                  l = std::clamp(l, 0, L - 1);
                else
                  continue;
              }
              gx(ci, l) += go_v * vw.data[(static_cast<size_t>(co) * Ci + ci) * k + u];
              gw.data[(static_cast<size_t>(co) * Ci + ci) * k + u] += go_v * vx(ci, l);
            }
        }
      g.accumulate(px, gx);
      g.accumulate(pw, gw);
      g.accumulate(pb, gb);
    });
  }

  // (C, H, W) -> (H, C*W): one feature row per time frame.
  Var frames_from_chw(Var x) {
    const Tensor<T>& vx = value(x);
    if (vx.rank() != 3) throw std::invalid_argument("frames_from_chw: expected rank 3");
    int C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
    Tensor<T> out({H, C * W});
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) out(h, c * W + w) = vx.at3(c, h, w);
    return make(std::move(out), {x}, [C, H, W](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi(g.value(p).shape);
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w) gi.at3(c, h, w) = go(h, c * W + w);
      g.accumulate(p, gi);
    });
  }

  // ---- contrastive objective ----

  // C is a (B, B) matrix of cosine similarities, C[i][j] = cos(e_hat_i, e_j).
  // Returns -(1/B) * sum_i [ C_ii - log sum_{j != i} exp(C_ij) ].
  // With include_positive, the denominator sums over all j.
  Var cyclic_nce(Var cos_matrix, bool include_positive) {
    const Tensor<T>& vc = value(cos_matrix);
    if (vc.rank() != 2 || vc.rows() != vc.cols())
      throw std::invalid_argument("cyclic_nce: expected square cosine matrix");
    int B = vc.rows();
    if (B < 2) throw std::invalid_argument("cyclic_nce: batch size must be >= 2");
    Tensor<T> out({1, 1});
    T total = 0;
    for (int i = 0; i < B; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < B; ++j)
        if (include_positive || j != i) mx = std::max(mx, vc(i, j));
      T denom = 0;
      for (int j = 0; j < B; ++j)
        if (include_positive || j != i) denom += std::exp(vc(i, j) - mx);
      total += vc(i, i) - (mx + std::log(denom));
    }
    out.data[0] = -total / static_cast<T>(B);
    return make(std::move(out), {cos_matrix}, [include_positive, B](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& vc = g.value(p);
      T go = g.nodes_[static_cast<size_t>(id)].grad.data[0];
      Tensor<T> gi(vc.shape);
      for (int i = 0; i < B; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < B; ++j)
          if (include_positive || j != i) mx = std::max(mx, vc(i, j));
        T denom = 0;
        for (int j = 0; j < B; ++j)
          if (include_positive || j != i) denom += std::exp(vc(i, j) - mx);
        gi(i, i) += -go / static_cast<T>(B);
        for (int j = 0; j < B; ++j)
          if (include_positive || j != i)
            gi(i, j) += go * std::exp(vc(i, j) - mx) / denom / static_cast<T>(B);
      }
      g.accumulate(p, gi);
    });
  }

  // ---- backward ----

  void backward(Var loss) {
    Node& ln = nodes_[static_cast<size_t>(loss.id)];
    if (ln.value.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    ensure_grad(loss.id);
    ln.grad.data[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.has_grad || !n.needs_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.grad_sink) {
        for (int64_t i = 0; i < n.grad.size(); ++i)
          n.grad_sink->data[static_cast<size_t>(i)] += n.grad.data[static_cast<size_t>(i)];
      }
    }
  }

 private:
  template <class F, class DF>
  Var unary(Var a, F f, DF df) {
    const Tensor<T>& va = value(a);
    Tensor<T> out = va;
    for (auto& v : out.data) v = f(v);
    return make(std::move(out), {a}, [f, df](Graph& g, int id) {
      Var p = g.parents_[static_cast<size_t>(id)][0];
      const Tensor<T>& vx = g.value(p);
      const Tensor<T>& y = g.nodes_[static_cast<size_t>(id)].value;
      const Tensor<T>& go = g.nodes_[static_cast<size_t>(id)].grad;
      Tensor<T> gi(vx.shape);
      for (int64_t i = 0; i < gi.size(); ++i)
        gi.data[static_cast<size_t>(i)] =
            go.data[static_cast<size_t>(i)] * df(vx.data[static_cast<size_t>(i)], y.data[static_cast<size_t>(i)]);
      g.accumulate(p, gi);
    });
  }

  static void matmul_into(Tensor<T>& out, const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
    int M = ta ? a.cols() : a.rows();
    int K = ta ? a.rows() : a.cols();
    int N = tb ? b.rows() : b.cols();
    out.fill(T(0));
    // i-k-j ordering keeps the inner loop contiguous for the common case.
    for (int i = 0; i < M; ++i)
      for (int k = 0; k < K; ++k) {
        T av = ta ? a(k, i) : a(i, k);
        if (av == T(0)) continue;
        if (!tb) {
          const T* brow = &b.data[static_cast<size_t>(k) * b.cols()];
          T* orow = &out.data[static_cast<size_t>(i) * N];
          for (int j = 0; j < N; ++j) orow[j] += av * brow[j];
        } else {
          T* orow = &out.data[static_cast<size_t>(i) * N];
          for (int j = 0; j < N; ++j) orow[j] += av * b(j, k);
        }
      }
  }

  void check_same(Var a, Var b, const char* op) const {
    if (!value(a).same_shape(value(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(value(a).shape) +
                                  " vs " + shape_str(value(b).shape));
  }

  Var push(Tensor<T> v, bool needs_grad) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    parents_.emplace_back();
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var make(Tensor<T> out, std::vector<Var> parents, std::function<void(Graph&, int)> bw) {
    bool ng = false;
    for (Var p : parents) ng = ng || nodes_[static_cast<size_t>(p.id)].needs_grad;
    Var v = push(std::move(out), ng);
    parents_[static_cast<size_t>(v.id)] = std::move(parents);
    if (ng) nodes_[static_cast<size_t>(v.id)].backward = std::move(bw);
    return v;
  }

  bool wants_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].needs_grad; }

  void ensure_grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape);
      n.has_grad = true;
    }
  }

  void accumulate(Var target, const Tensor<T>& g) {
    Node& n = nodes_[static_cast<size_t>(target.id)];
    if (!n.needs_grad) return;
    ensure_grad(target.id);
    for (int64_t i = 0; i < g.size(); ++i)
      n.grad.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<Var>> parents_;
  bool freeze_params_ = false;
};

}  // namespace nn
}  // namespace sdtts

#endif

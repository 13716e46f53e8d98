#ifndef SDTTS_PARAMS_HPP
#define SDTTS_PARAMS_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdtts/rng.hpp"
#include "sdtts/tensor.hpp"

namespace sdtts {
namespace nn {

// Named parameter registry. std::map keeps iteration order stable across
// runs and platforms, which the optimizer, checksums, and checkpoint format
// all rely on.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;
  };

  explicit ParamStore(uint64_t model_seed = 0) : model_seed_(model_seed) {}

  uint64_t model_seed() const { return model_seed_; }

  Entry& add(const std::string& name, Tensor<T> value, bool trainable = true) {
    if (entries_.count(name))
      throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
    Entry e;
    e.grad = Tensor<T>(value.shape);
    e.value = std::move(value);
    e.trainable = trainable;
    return entries_.emplace(name, std::move(e)).first->second;
  }

  // Uniform(-limit, limit) with limit = sqrt(6 / (fan_in + fan_out)).
  Entry& add_glorot(const std::string& name, std::vector<int> shape, int fan_in, int fan_out,
                    bool trainable = true) {
    Tensor<T> w(shape);
    double limit = std::sqrt(6.0 / (static_cast<double>(fan_in) + static_cast<double>(fan_out)));
    Rng rng(mix_seed(model_seed_, fnv1a64(name)));
    for (auto& v : w.data) v = static_cast<T>(rng.uniform(-limit, limit));
    return add(name, std::move(w), trainable);
  }

  Entry& add_normal(const std::string& name, std::vector<int> shape, double stddev,
                    bool trainable = true) {
    Tensor<T> w(shape);
    Rng rng(mix_seed(model_seed_, fnv1a64(name)));
    for (auto& v : w.data) v = static_cast<T>(rng.normal() * stddev);
    return add(name, std::move(w), trainable);
  }

  Entry& add_const(const std::string& name, std::vector<int> shape, double fill_value,
                   bool trainable = true) {
    Tensor<T> w(shape);
    w.fill(static_cast<T>(fill_value));
    return add(name, std::move(w), trainable);
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Entry& get(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw std::invalid_argument("param store: unknown parameter '" + name + "'");
    return it->second;
  }

  const Entry& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw std::invalid_argument("param store: unknown parameter '" + name + "'");
    return it->second;
  }

  void zero_grads() {
    for (auto& [name, e] : entries_) e.grad.fill(T(0));
  }

  int64_t param_count(bool trainable_only = true) const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_)
      if (!trainable_only || e.trainable) n += e.value.size();
    return n;
  }

  // Order-sensitive FNV over names and value bytes; detects any drift in a
  // frozen module.
  uint64_t checksum() const {
    uint64_t h = 1469598103934665603ull;
    auto mix_bytes = [&h](const void* p, size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& [name, e] : entries_) {
      mix_bytes(name.data(), name.size());
      mix_bytes(e.value.data.data(), e.value.data.size() * sizeof(T));
    }
    return h;
  }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  uint64_t model_seed_;
  std::map<std::string, Entry> entries_;
};

// Decoupled weight decay Adam. Moment buffers are keyed by parameter name so
// the step survives checkpointing in name order.
template <typename T>
class AdamW {
 public:
  struct Options {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double weight_decay = 0.01;
  };

  explicit AdamW(Options opt = {}) : opt_(opt) {}

  Options& options() { return opt_; }
  const Options& options() const { return opt_; }
  int64_t step_count() const { return step_; }
  void set_step_count(int64_t s) { step_ = s; }

  void step(ParamStore<T>& params, double lr_override = -1.0) {
    double lr = lr_override >= 0.0 ? lr_override : opt_.lr;
    ++step_;
    double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_));
    for (auto& [name, e] : params.entries()) {
      if (!e.trainable) continue;
      State& st = state_[name];
      if (st.m.size() != e.value.size()) {
        st.m = Tensor<double>(e.value.shape);
        st.v = Tensor<double>(e.value.shape);
      }
      for (int64_t i = 0; i < e.value.size(); ++i) {
        size_t k = static_cast<size_t>(i);
        double gv = static_cast<double>(e.grad.data[k]);
        st.m.data[k] = opt_.beta1 * st.m.data[k] + (1.0 - opt_.beta1) * gv;
        st.v.data[k] = opt_.beta2 * st.v.data[k] + (1.0 - opt_.beta2) * gv * gv;
        double mhat = st.m.data[k] / bc1;
        double vhat = st.v.data[k] / bc2;
        double upd = mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * static_cast<double>(e.value.data[k]);
        e.value.data[k] = static_cast<T>(static_cast<double>(e.value.data[k]) - lr * upd);
      }
    }
  }

 private:
  struct State {
    Tensor<double> m;
    Tensor<double> v;
  };
  Options opt_;
  int64_t step_ = 0;
  std::map<std::string, State> state_;
};

// Linear warmup followed by inverse square-root decay, normalized so that
// lr(warmup) == base_lr.
inline double lr_schedule(double base_lr, int64_t step, int64_t warmup_steps) {
  if (warmup_steps <= 0) return base_lr;
  double s = static_cast<double>(step < 1 ? 1 : step);
  double w = static_cast<double>(warmup_steps);
  if (s < w) return base_lr * s / w;
  return base_lr * std::sqrt(w / s);
}

}  // namespace nn
}  // namespace sdtts

#endif

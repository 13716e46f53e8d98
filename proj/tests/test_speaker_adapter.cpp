#include <cmath>
#include <vector>

#include "doctest.h"
#include "sdtts/speaker_adapter.hpp"
#include "support/gradcheck.hpp"
#include "support/testconfig.hpp"

using namespace sdtts;
using namespace sdtts::nn;
using sdtts::testing::check_grad_fd;
using sdtts::testing::GradWatch;
using sdtts::testing::tiny_config;

namespace {

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor<T> t(shape);
  for (auto& v : t.data) v = static_cast<T>(rng.normal() * scale);
  return t;
}

}  // namespace

TEST_CASE("style encoder halves the frame count per layer, rounding up") {
  RunConfig cfg = tiny_config();  // two style layers
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  Rng rng(21);
  for (int T : {1, 2, 3, 4, 5, 7, 8, 9, 16}) {
    Graph<float> g;
    auto mel = g.constant(random_tensor<float>({T, cfg.mel_bins}, rng));
    const auto& sty = g.value(spk.style_encode(g, ps, mel));
    int expect = T;
    for (int i = 0; i < cfg.style_layers; ++i) expect = (expect + 1) / 2;
    CHECK(sty.rows() == expect);
    CHECK(sty.cols() == cfg.d_spk);
  }

  Graph<float> g;
  auto bad = g.constant(random_tensor<float>({4, cfg.mel_bins + 1}, rng));
  CHECK_THROWS_AS(spk.style_encode(g, ps, bad), std::invalid_argument);
}

TEST_CASE("style sequence is the projected conv stack plus sinusoidal positions") {
  RunConfig cfg = tiny_config();
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  Rng rng(22);
  const int T = 11;
  auto mel = random_tensor<float>({T, cfg.mel_bins}, rng);

  Graph<float> g;
  auto got = g.value(spk.style_encode(g, ps, g.constant(mel)));

  // Rebuild the stack from the adapter's own layers, add the closed-form
  // positional table, and demand bit-identical results.
  Graph<float> g2;
  auto x = g2.reshape(g2.constant(mel), {1, T, cfg.mel_bins});
  for (const auto& c : spk.style_convs) x = g2.leaky_relu(c.apply(g2, ps, x), 0.1);
  auto seq = spk.style_proj.apply(g2, ps, g2.frames_from_chw(x));
  const auto& seq_v = g2.value(seq);
  auto pe = sinusoidal_pe<float>(seq_v.rows(), cfg.d_spk);
  for (int t = 0; t < seq_v.rows(); ++t)
    for (int d = 0; d < cfg.d_spk; ++d) CHECK(got(t, d) == seq_v(t, d) + pe(t, d));

  // Positional table matches its closed form.
  auto pe2 = sinusoidal_pe<float>(5, cfg.d_spk);
  for (int t = 0; t < 5; ++t)
    for (int i = 0; i < cfg.d_spk; i += 2) {
      double angle = t / std::pow(10000.0, double(i) / cfg.d_spk);
      CHECK(pe2(t, i) == doctest::Approx(std::sin(angle)).epsilon(1e-6));
      if (i + 1 < cfg.d_spk) CHECK(pe2(t, i + 1) == doctest::Approx(std::cos(angle)).epsilon(1e-6));
    }
}

TEST_CASE("style sequence depends on frame order") {
  RunConfig cfg = tiny_config();
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  Rng rng(23);
  const int T = 10;
  auto mel = random_tensor<float>({T, cfg.mel_bins}, rng);
  auto swapped = mel;
  for (int f = 0; f < cfg.mel_bins; ++f) std::swap(swapped(2, f), swapped(7, f));

  Graph<float> g;
  auto a = g.value(spk.style_encode(g, ps, g.constant(mel)));
  auto b = g.value(spk.style_encode(g, ps, g.constant(swapped)));
  auto c = g.value(spk.style_encode(g, ps, g.constant(mel)));

  CHECK(a.data == c.data);  // deterministic
  double diff = 0;
  for (int64_t i = 0; i < a.size(); ++i)
    diff = std::max(diff, std::fabs(double(a.data[size_t(i)]) - double(b.data[size_t(i)])));
  CHECK(diff > 1e-4);
}

TEST_CASE("timbre stub is reproducible from its seed and registered frozen") {
  RunConfig cfg = tiny_config();
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  const auto& e = ps.get("spk.timbre.stub.w");
  CHECK_FALSE(e.trainable);
  REQUIRE(e.value.shape == std::vector<int>{2 * cfg.mel_bins, cfg.timbre_dim});

  Rng rng(cfg.timbre_stub_seed);
  double scale = 1.0 / std::sqrt(2.0 * cfg.mel_bins);
  for (auto v : e.value.data) CHECK(v == doctest::Approx(rng.normal() * scale).epsilon(1e-7));

  // A different stub seed must yield different fixed weights.
  RunConfig cfg2 = cfg;
  cfg2.timbre_stub_seed += 1;
  ParamStore<float> ps2(cfg2.model_seed);
  SpeakerAdapter<float> spk2(ps2, cfg2);
  CHECK(ps2.get("spk.timbre.stub.w").value.data != e.value.data);
}

TEST_CASE("timbre embedding matches hand-computed mel statistics through the stub") {
  RunConfig cfg = tiny_config();
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  Rng rng(24);
  const int T = 9;
  auto mel = random_tensor<float>({T, cfg.mel_bins}, rng);

  Graph<float> g;
  const auto& got = g.value(spk.timbre_embed(g, ps, g.constant(mel)));
  REQUIRE(got.rows() == 1);
  REQUIRE(got.cols() == cfg.timbre_dim);

  std::vector<double> stats(size_t(2 * cfg.mel_bins));
  for (int f = 0; f < cfg.mel_bins; ++f) {
    double m = 0;
    for (int t = 0; t < T; ++t) m += mel(t, f);
    m /= T;
    double var = 0;
    for (int t = 0; t < T; ++t) var += (mel(t, f) - m) * (mel(t, f) - m);
    var /= T;  // population variance
    stats[size_t(f)] = m;
    stats[size_t(cfg.mel_bins + f)] = std::sqrt(var + 1e-8);
  }
  const auto& w = ps.get("spk.timbre.stub.w").value;
  for (int d = 0; d < cfg.timbre_dim; ++d) {
    double acc = 0;
    for (int k = 0; k < 2 * cfg.mel_bins; ++k) acc += stats[size_t(k)] * w(k, d);
    CHECK(got(0, d) == doctest::Approx(acc).epsilon(1e-4));
  }
}

TEST_CASE("frozen stub receives no gradient while the mel input does") {
  RunConfig cfg = tiny_config();
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  Rng rng(25);
  auto& mel = ps.add("test.mel", random_tensor<float>({6, cfg.mel_bins}, rng));

  Graph<float> g;
  auto emb = spk.speaker_embed(g, ps, spk.timbre_embed(g, ps, g.param(mel.value, mel.grad)));
  ps.zero_grads();
  g.backward(g.mean_all(g.mul(emb, emb)));

  for (auto v : ps.get("spk.timbre.stub.w").grad.data) CHECK(v == 0.0f);
  double mel_grad_mag = 0;
  for (auto v : mel.grad.data) mel_grad_mag += std::fabs(double(v));
  CHECK(mel_grad_mag > 1e-6);
  double proj_grad_mag = 0;
  for (auto v : ps.get("spk.timbre.proj.w").grad.data) proj_grad_mag += std::fabs(double(v));
  CHECK(proj_grad_mag > 1e-6);
}

TEST_CASE("detached queries block gradients while style keys receive them") {
  RunConfig cfg = tiny_config();
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  Rng rng(26);
  const int L = 4, Ts = 3;
  auto& q = ps.add("test.q", random_tensor<float>({L, cfg.d_model}, rng));
  auto& sty = ps.add("test.sty", random_tensor<float>({Ts, cfg.d_spk}, rng));
  auto& spkv = ps.add("test.spk", random_tensor<float>({1, cfg.d_spk}, rng));

  Graph<float> g;
  auto vp = spk.predict_variances(g, ps, g.detach(g.param(q.value, q.grad)),
                                  g.param(sty.value, sty.grad), g.param(spkv.value, spkv.grad));
  auto loss = g.mean_all(g.add(g.mul(vp.log_dur, vp.log_dur),
                               g.add(g.mul(vp.pitch, vp.pitch), g.mul(vp.energy, vp.energy))));
  ps.zero_grads();
  g.backward(loss);

  for (auto v : q.grad.data) CHECK(v == 0.0f);
  auto mag = [](const Tensor<float>& t) {
    double s = 0;
    for (auto v : t.data) s += std::fabs(double(v));
    return s;
  };
  CHECK(mag(sty.grad) > 1e-8);
  CHECK(mag(spkv.grad) > 1e-8);
  CHECK(mag(ps.get("spk.var.dur.fc1.w").grad) > 1e-8);
  CHECK(mag(ps.get("spk.var.attn.wk.w").grad) > 1e-8);
}

TEST_CASE("length regulation embeds variances at phoneme rate then expands") {
  RunConfig cfg = tiny_config();
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  Rng rng(27);
  const int L = 4;
  auto e_con = random_tensor<float>({L, cfg.d_model}, rng);
  auto pitch = random_tensor<float>({L, 1}, rng);
  auto energy = random_tensor<float>({L, 1}, rng);
  std::vector<int> dur{2, 1, 3, 1};

  Graph<float> g;
  const auto& out = g.value(spk.length_regulate(g, ps, g.constant(e_con), g.constant(pitch),
                                                g.constant(energy), dur));
  REQUIRE(out.rows() == 7);
  REQUIRE(out.cols() == cfg.d_model);

  const auto& pw = ps.get("spk.pitch_emb.w").value;
  const auto& pb = ps.get("spk.pitch_emb.b").value;
  const auto& ew = ps.get("spk.energy_emb.w").value;
  const auto& eb = ps.get("spk.energy_emb.b").value;
  int row = 0;
  for (int l = 0; l < L; ++l)
    for (int r = 0; r < dur[size_t(l)]; ++r, ++row)
      for (int d = 0; d < cfg.d_model; ++d) {
        double expect = e_con(l, d) + pitch(l, 0) * pw(0, d) + pb(0, d) +
                        energy(l, 0) * ew(0, d) + eb(0, d);
        CHECK(out(row, d) == doctest::Approx(expect).epsilon(1e-5));
      }
  CHECK(row == 7);

  // Every phoneme must occupy at least one frame.
  Graph<float> g2;
  CHECK_THROWS_AS(spk.length_regulate(g2, ps, g2.constant(e_con), g2.constant(pitch),
                                      g2.constant(energy), {2, 0, 3, 1}),
                  std::invalid_argument);
}

TEST_CASE("post-AdaIN channel statistics equal beta and |gamma|") {
  RunConfig cfg = tiny_config();
  ParamStore<float> ps(cfg.model_seed);
  SpeakerAdapter<float> spk(ps, cfg);

  Rng rng(28);
  const int T = 12;
  auto frames = random_tensor<float>({T, cfg.d_model}, rng);
  auto e_spk = random_tensor<float>({1, cfg.d_spk}, rng);

  Graph<float> g;
  std::vector<Graph<float>::Var> taps;
  auto mel = spk.decode(g, ps, g.constant(frames), g.constant(e_spk), &taps);
  CHECK(g.value(mel).rows() == T);
  CHECK(g.value(mel).cols() == cfg.mel_bins);
  REQUIRE(taps.size() == size_t(2 * cfg.dec_blocks));

  for (size_t site = 0; site < taps.size(); ++site) {
    // Hand-computed gamma/beta from the projection weights.
    const auto& gw = ps.get("spk.dec.b" + std::to_string(site / 2) + ".ada" +
                            std::to_string(site % 2) + ".g.w").value;
    const auto& gb = ps.get("spk.dec.b" + std::to_string(site / 2) + ".ada" +
                            std::to_string(site % 2) + ".g.b").value;
    const auto& bw = ps.get("spk.dec.b" + std::to_string(site / 2) + ".ada" +
                            std::to_string(site % 2) + ".b.w").value;
    const auto& bb = ps.get("spk.dec.b" + std::to_string(site / 2) + ".ada" +
                            std::to_string(site % 2) + ".b.b").value;
    const auto& h = g.value(taps[site]);  // (C, T)
    REQUIRE(h.rows() == cfg.dec_channels);
    REQUIRE(h.cols() == T);
    for (int c = 0; c < cfg.dec_channels; ++c) {
      double gamma = 1.0, beta = 0.0;
      gamma += gb(0, c);
      beta += bb(0, c);
      for (int k = 0; k < cfg.d_spk; ++k) {
        gamma += e_spk(0, k) * gw(k, c);
        beta += e_spk(0, k) * bw(k, c);
      }
      double mean = 0;
      for (int t = 0; t < T; ++t) mean += h(c, t);
      mean /= T;
      double var = 0;
      for (int t = 0; t < T; ++t) var += (h(c, t) - mean) * (h(c, t) - mean);
      var /= T;
      CHECK(mean == doctest::Approx(beta).epsilon(1e-3));
      CHECK(std::sqrt(var) == doctest::Approx(std::fabs(gamma)).epsilon(1e-3));
    }
  }
}

TEST_CASE("variance adapter gradients match finite differences") {
  RunConfig cfg = tiny_config();
  ParamStore<double> ps(cfg.model_seed);
  SpeakerAdapter<double> spk(ps, cfg);

  Rng rng(29);
  auto& q = ps.add("test.q", random_tensor<double>({3, cfg.d_model}, rng, 0.5));
  auto& sty = ps.add("test.sty", random_tensor<double>({4, cfg.d_spk}, rng, 0.5));
  auto& spkv = ps.add("test.spk", random_tensor<double>({1, cfg.d_spk}, rng, 0.5));

  auto fn = [&](bool grads) {
    Graph<double> g;
    auto vp = spk.predict_variances(g, ps, g.param(q.value, q.grad), g.param(sty.value, sty.grad),
                                    g.param(spkv.value, spkv.grad));
    auto loss = g.mean_all(g.add(g.mul(vp.log_dur, vp.log_dur),
                                 g.add(g.mul(vp.pitch, vp.pitch), g.mul(vp.energy, vp.energy))));
    if (grads) {
      ps.zero_grads();
      g.backward(loss);
    }
    return static_cast<double>(g.value(loss).data[0]);
  };

  std::vector<GradWatch<double>> watches;
  for (const char* name : {"test.q", "test.sty", "test.spk", "spk.var.attn.wq.w",
                           "spk.var.attn.wv.w", "spk.var.attn.wo.b", "spk.var.dur.fc1.w",
                           "spk.var.pitch.fc2.b", "spk.var.energy.fc1.b"}) {
    auto& e = ps.get(name);
    watches.push_back({name, &e.value, &e.grad});
  }
  auto rep = check_grad_fd<double>(fn, watches, testing::FdDefaults<double>::h,
                                   testing::FdDefaults<double>::floor, 32);
  INFO(rep.worst);
  CHECK(rep.ok(1e-5));
}

TEST_CASE("decoder gradients match finite differences") {
  RunConfig cfg = tiny_config();
  ParamStore<double> ps(cfg.model_seed);
  SpeakerAdapter<double> spk(ps, cfg);

  Rng rng(30);
  auto& frames = ps.add("test.frames", random_tensor<double>({5, cfg.d_model}, rng, 0.5));
  auto& spkv = ps.add("test.spk", random_tensor<double>({1, cfg.d_spk}, rng, 0.5));

  auto fn = [&](bool grads) {
    Graph<double> g;
    auto mel = spk.decode(g, ps, g.param(frames.value, frames.grad), g.param(spkv.value, spkv.grad));
    auto loss = g.mean_all(g.mul(mel, mel));
    if (grads) {
      ps.zero_grads();
      g.backward(loss);
    }
    return static_cast<double>(g.value(loss).data[0]);
  };

  std::vector<GradWatch<double>> watches;
  for (const char* name : {"test.frames", "test.spk", "spk.dec.in.w", "spk.dec.b0.c0.w",
                           "spk.dec.b0.c1.b", "spk.dec.b0.ada0.g.w", "spk.dec.b0.ada1.b.w",
                           "spk.dec.out.w", "spk.dec.out.b"}) {
    auto& e = ps.get(name);
    watches.push_back({name, &e.value, &e.grad});
  }
  auto rep = check_grad_fd<double>(fn, watches, testing::FdDefaults<double>::h,
                                   testing::FdDefaults<double>::floor, 32);
  INFO(rep.worst);
  CHECK(rep.ok(1e-5));
}

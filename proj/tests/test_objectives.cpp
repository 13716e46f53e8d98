#include <cmath>
#include <vector>

#include "doctest.h"
#include "sdtts/objectives.hpp"
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

// Direct evaluation of the cycle loss from raw embeddings, written without
// any max-shift or factoring so it shares no structure with the graph code.
double cyc_direct(const Tensor<double>& e_hat, const Tensor<double>& e_ref, bool include_positive) {
  int B = e_hat.rows(), D = e_hat.cols();
  auto unit = [&](const Tensor<double>& m, int r) {
    std::vector<double> v(static_cast<size_t>(D));
    double n = 0;
    for (int d = 0; d < D; ++d) n += m(r, d) * m(r, d);
    n = std::sqrt(n);
    for (int d = 0; d < D; ++d) v[size_t(d)] = m(r, d) / n;
    return v;
  };
  double total = 0;
  for (int i = 0; i < B; ++i) {
    auto a = unit(e_hat, i);
    double denom = 0, pos = 0;
    for (int j = 0; j < B; ++j) {
      auto b = unit(e_ref, j);
      double cos = 0;
      for (int d = 0; d < D; ++d) cos += a[size_t(d)] * b[size_t(d)];
      if (j == i) pos = cos;
      if (include_positive || j != i) denom += std::exp(cos);
    }
    total += std::log(std::exp(pos) / denom);
  }
  return -total / B;
}

}  // namespace

TEST_CASE("reconstruction loss is the mean absolute error") {
  Graph<float> g;
  auto a = g.constant(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  auto b = g.constant(Tensor<float>({2, 2}, {0, 4, 3, 1}));
  CHECK(g.value(l_rec(g, a, b)).data[0] == doctest::Approx((1 + 2 + 0 + 3) / 4.0));
}

TEST_CASE("KL matches hand-computed closed forms") {
  Graph<double> g;
  auto z = g.constant(Tensor<double>({1, 2}, {0, 0}));
  CHECK(g.value(l_kl(g, z, z)).data[0] == doctest::Approx(0.0));

  auto mu1 = g.constant(Tensor<double>({1, 1}, {1.0}));
  auto lv0 = g.constant(Tensor<double>({1, 1}, {0.0}));
  CHECK(g.value(l_kl(g, mu1, lv0)).data[0] == doctest::Approx(0.5));

  auto mu0 = g.constant(Tensor<double>({1, 1}, {0.0}));
  auto lv4 = g.constant(Tensor<double>({1, 1}, {std::log(4.0)}));
  CHECK(g.value(l_kl(g, mu0, lv4)).data[0] == doctest::Approx(0.5 * (4.0 - 1.0 - std::log(4.0))));

  // Mixed tensor averages the per-cell terms.
  auto mu = g.constant(Tensor<double>({1, 2}, {1.0, 0.0}));
  auto lv = g.constant(Tensor<double>({1, 2}, {0.0, std::log(4.0)}));
  double expect = 0.5 * (0.5 + 0.5 * (3.0 - std::log(4.0)));
  CHECK(g.value(l_kl(g, mu, lv)).data[0] == doctest::Approx(expect));
}

TEST_CASE("least-squares GAN terms match hand values") {
  Graph<float> g;
  auto real = g.constant(Tensor<float>({1, 1}, {0.5f}));
  auto fake = g.constant(Tensor<float>({1, 1}, {-0.25f}));
  CHECK(g.value(lsgan_d(g, real, fake)).data[0] == doctest::Approx(0.25 + 0.0625));

  auto fake2 = g.constant(Tensor<float>({1, 2}, {0.0f, 2.0f}));
  CHECK(g.value(lsgan_g(g, fake2)).data[0] == doctest::Approx(1.0));

  // Perfect discriminator output: reals at 1, fakes at 0.
  auto ones = g.constant(Tensor<float>({2, 2}, {1, 1, 1, 1}));
  auto zeros = g.constant(Tensor<float>({2, 2}, {0, 0, 0, 0}));
  CHECK(g.value(lsgan_d(g, ones, zeros)).data[0] == doctest::Approx(0.0));
  CHECK(g.value(lsgan_g(g, ones)).data[0] == doctest::Approx(0.0));
}

TEST_CASE("cycle loss hand cases: orthonormal pair and identical pair") {
  Graph<double> g;
  // Orthonormal: positive cosine 1, sole negative cosine 0 -> -log(e/1) = -1.
  auto eye = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  CHECK(g.value(l_cyc(g, eye, eye)).data[0] == doctest::Approx(-1.0).epsilon(1e-7));

  // Identical rows: every cosine is 1 -> log(e/e) = 0.
  auto same = g.constant(Tensor<double>({2, 3}, {2, 1, 0, 2, 1, 0}));
  CHECK(g.value(l_cyc(g, same, same)).data[0] == doctest::Approx(0.0).epsilon(1e-7));

  // Scale invariance: rows are normalized before the cosine grid.
  auto eye_scaled = g.constant(Tensor<double>({2, 2}, {5, 0, 0, 0.1}));
  CHECK(g.value(l_cyc(g, eye_scaled, eye)).data[0] == doctest::Approx(-1.0).epsilon(1e-7));

  auto zero_row = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 0}));
  CHECK_THROWS_AS(g.value(l_cyc(g, zero_row, eye)), std::invalid_argument);
  auto single = g.constant(Tensor<double>({1, 2}, {1, 0}));
  CHECK_THROWS_AS(g.value(l_cyc(g, single, single)), std::invalid_argument);
}

TEST_CASE("cycle loss agrees with direct evaluation over random batches") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    int B = 2 + int(rng.below(5));  // 2..6
    int D = 2 + int(rng.below(6));  // 2..7
    auto e_hat = random_tensor<double>({B, D}, rng);
    auto e_ref = random_tensor<double>({B, D}, rng);

    Graph<double> g;
    double got = g.value(l_cyc(g, g.constant(e_hat), g.constant(e_ref))).data[0];
    CHECK(std::fabs(got - cyc_direct(e_hat, e_ref, false)) < 1e-6);

    double got_pos = g.value(l_cyc(g, g.constant(e_hat), g.constant(e_ref), true)).data[0];
    CHECK(std::fabs(got_pos - cyc_direct(e_hat, e_ref, true)) < 1e-6);
    // Including the positive in the denominator can only raise the loss.
    CHECK(got_pos >= got - 1e-9);
  }
}

TEST_CASE("prediction loss is plain mean squared error") {
  Graph<float> g;
  auto p = g.constant(Tensor<float>({2, 1}, {1, 3}));
  auto t = g.constant(Tensor<float>({2, 1}, {0, 1}));
  CHECK(g.value(l_mse(g, p, t)).data[0] == doctest::Approx((1 + 4) / 2.0));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(42);
  ParamStore<double> ps(7);
  auto& a = ps.add("a", random_tensor<double>({3, 4}, rng, 0.6));
  auto& b = ps.add("b", random_tensor<double>({3, 4}, rng, 0.6));
  // Keep |a-b| away from the L1 kink so central differences stay one-sided.
  for (int64_t i = 0; i < a.value.size(); ++i) {
    size_t k = size_t(i);
    double d = a.value.data[k] - b.value.data[k];
    if (std::fabs(d) < 0.05) b.value.data[k] -= (d >= 0 ? 0.1 : -0.1);
  }

  std::vector<GradWatch<double>> watches{{"a", &a.value, &a.grad}, {"b", &b.value, &b.grad}};

  SUBCASE("reconstruction") {
    auto fn = [&](bool grads) {
      Graph<double> g;
      auto loss = l_rec(g, g.param(a.value, a.grad), g.param(b.value, b.grad));
      if (grads) {
        ps.zero_grads();
        g.backward(loss);
      }
      return g.value(loss).data[0];
    };
    auto rep = check_grad_fd<double>(fn, watches);
    INFO(rep.worst);
    CHECK(rep.ok(1e-6));
  }

  SUBCASE("KL") {
    auto fn = [&](bool grads) {
      Graph<double> g;
      auto loss = l_kl(g, g.param(a.value, a.grad), g.param(b.value, b.grad));
      if (grads) {
        ps.zero_grads();
        g.backward(loss);
      }
      return g.value(loss).data[0];
    };
    auto rep = check_grad_fd<double>(fn, watches);
    INFO(rep.worst);
    CHECK(rep.ok(1e-6));
  }

  SUBCASE("LSGAN discriminator and generator") {
    auto fn = [&](bool grads) {
      Graph<double> g;
      auto loss = g.add(lsgan_d(g, g.param(a.value, a.grad), g.param(b.value, b.grad)),
                        lsgan_g(g, g.param(b.value, b.grad)));
      if (grads) {
        ps.zero_grads();
        g.backward(loss);
      }
      return g.value(loss).data[0];
    };
    auto rep = check_grad_fd<double>(fn, watches);
    INFO(rep.worst);
    CHECK(rep.ok(1e-6));
  }

  SUBCASE("MSE") {
    auto fn = [&](bool grads) {
      Graph<double> g;
      auto loss = l_mse(g, g.param(a.value, a.grad), g.param(b.value, b.grad));
      if (grads) {
        ps.zero_grads();
        g.backward(loss);
      }
      return g.value(loss).data[0];
    };
    auto rep = check_grad_fd<double>(fn, watches);
    INFO(rep.worst);
    CHECK(rep.ok(1e-6));
  }

  SUBCASE("cycle") {
    auto fn = [&](bool grads) {
      Graph<double> g;
      auto loss = l_cyc(g, g.param(a.value, a.grad), g.param(b.value, b.grad));
      if (grads) {
        ps.zero_grads();
        g.backward(loss);
      }
      return g.value(loss).data[0];
    };
    auto rep = check_grad_fd<double>(fn, watches);
    INFO(rep.worst);
    CHECK(rep.ok(1e-5));
  }
}

TEST_CASE("discriminator scores flow gradients into mel and weights") {
  RunConfig cfg = tiny_config();
  ParamStore<double> ps(cfg.model_seed);
  Discriminator<double> disc(ps, cfg);

  Rng rng(43);
  auto& mel = ps.add("test.mel", random_tensor<double>({8, cfg.mel_bins}, rng, 0.5));

  auto fn = [&](bool grads) {
    Graph<double> g;
    auto loss = lsgan_g(g, disc.score(g, ps, g.param(mel.value, mel.grad)));
    if (grads) {
      ps.zero_grads();
      g.backward(loss);
    }
    return g.value(loss).data[0];
  };

  std::vector<GradWatch<double>> watches;
  for (const char* name : {"test.mel", "disc.conv0.w", "disc.conv1.w", "disc.conv1.b",
                           "disc.head.w", "disc.head.b"}) {
    auto& e = ps.get(name);
    watches.push_back({name, &e.value, &e.grad});
  }
  auto rep = check_grad_fd<double>(fn, watches, testing::FdDefaults<double>::h,
                                   testing::FdDefaults<double>::floor, 32);
  INFO(rep.worst);
  CHECK(rep.ok(1e-5));
}

TEST_CASE("discriminator rejects inputs shorter than its receptive field") {
  RunConfig deep = tiny_config();
  deep.disc_layers = 4;
  ParamStore<float> ps(deep.model_seed);
  Discriminator<float> disc(ps, deep);

  Rng rng(44);
  Graph<float> g;
  auto short_mel = g.constant(random_tensor<float>({8, deep.mel_bins}, rng));
  CHECK_THROWS_WITH_AS(g.value(disc.score(g, ps, short_mel)),
                       doctest::Contains("receptive field"), std::invalid_argument);

  auto long_mel = g.constant(random_tensor<float>({16, deep.mel_bins}, rng));
  const auto& scores = g.value(disc.score(g, ps, long_mel));
  CHECK(scores.dim(0) == 1);
  CHECK(scores.dim(1) == 1);  // 16 -> 8 -> 4 -> 2 -> 1 along time

  auto wrong_bins = g.constant(random_tensor<float>({16, deep.mel_bins + 2}, rng));
  CHECK_THROWS_AS(disc.score(g, ps, wrong_bins), std::invalid_argument);
}

TEST_CASE("discriminator channel growth doubles and caps at four times the base") {
  RunConfig cfg = tiny_config();
  cfg.disc_channels = 4;
  cfg.disc_layers = 5;
  ParamStore<float> ps(cfg.model_seed);
  Discriminator<float> disc(ps, cfg);

  CHECK(ps.get("disc.conv0.w").value.shape == std::vector<int>{4, 1, 4, 3});
  CHECK(ps.get("disc.conv1.w").value.shape == std::vector<int>{8, 4, 4, 3});
  CHECK(ps.get("disc.conv2.w").value.shape == std::vector<int>{16, 8, 4, 3});
  CHECK(ps.get("disc.conv3.w").value.shape == std::vector<int>{16, 16, 4, 3});
  CHECK(ps.get("disc.conv4.w").value.shape == std::vector<int>{16, 16, 4, 3});
  CHECK(ps.get("disc.head.w").value.shape == std::vector<int>{1, 16, 3, 3});
}

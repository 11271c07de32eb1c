#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "support.hpp"
#include "tsscale/model/attention.hpp"
#include "tsscale/model/config.hpp"
#include "tsscale/model/mixture.hpp"
#include "tsscale/model/patching.hpp"
#include "tsscale/model/transformer.hpp"

using namespace tsscale;
using namespace tsscale::model;
using tsscale::testing::random_tensor;
using tsscale::testing::random_values;

namespace {

ModelConfig tiny_config(Architecture arch, HeadFamily family = HeadFamily::student_t) {
  ModelConfig cfg = standard_config(1, 8, 2, arch);
  cfg.patch_len = 4;
  cfg.components = 2;
  cfg.head_family = family;
  return cfg;
}

PatchSequence random_sequence(std::size_t patch_len, std::size_t n_context, std::size_t n_horizon,
                              std::uint64_t seed) {
  PatchSequence seq;
  seq.patch_len = patch_len;
  seq.n_context = n_context;
  seq.n_horizon = n_horizon;
  seq.patches = random_values(patch_len * (n_context + n_horizon), seed, -2.0, 2.0);
  return seq;
}

// Perturbs the weights away from their near-zero init so gradients are not trivially small.
void jitter(Transformer& model, std::uint64_t seed, double amount = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, amount);
  for (auto& p : model.parameters())
    for (double& v : p.tensor.mutable_data()) v += normal(rng);
}

MixtureParams single_point(HeadFamily family, std::vector<double> w, std::vector<double> df, std::vector<double> loc,
                           std::vector<double> scale) {
  MixtureParams p;
  p.family = family;
  p.components = w.size();
  p.weights = std::move(w);
  p.df = std::move(df);
  p.loc = std::move(loc);
  p.scale = std::move(scale);
  return p;
}

}  // namespace

TEST_CASE("param_count follows the scaling-law convention") {
  auto cfg = standard_config(2, 64, 4);
  auto c = param_count(cfg);
  CHECK(c.core == 98304);
  CHECK(c.core == 12 * 2 * 64 * 64);
  CHECK(c.embedding == 32 * 64);
  CHECK(c.head == 32768);
  CHECK(c.head == 512 * 64);
  cfg.n_layer = 0;
  CHECK(param_count(cfg).core == 0);
  CHECK(cfg.is_standard());
}

TEST_CASE("enumerated weights reproduce param_count per category") {
  std::vector<ModelConfig> configs = {standard_config(1, 8, 2), standard_config(2, 16, 2),
                                      standard_config(3, 12, 3, Architecture::decoder_only),
                                      tiny_config(Architecture::encoder_only, HeadFamily::gaussian)};
  ModelConfig odd = standard_config(2, 10, 1);
  odd.d_ff = 24;
  configs.push_back(odd);
  for (const auto& cfg : configs) {
    Transformer model(cfg, 1);
    std::map<ParamCategory, std::size_t> counts;
    for (const auto& p : model.parameters()) {
      counts[p.category] += p.tensor.numel();
      const bool matrix = p.tensor.dim() == 2;
      CHECK(p.decay == matrix);
      if (p.category == ParamCategory::excluded) CHECK_FALSE(matrix);
    }
    const auto expected = param_count(cfg);
    CHECK(counts[ParamCategory::core] == expected.core);
    CHECK(counts[ParamCategory::embedding] == expected.embedding);
    CHECK(counts[ParamCategory::head] == expected.head);
    CHECK(counts[ParamCategory::excluded] == expected.excluded);
    CHECK(model.trainable_count() == expected.total);
  }
}

TEST_CASE("config validation") {
  auto cfg = standard_config(1, 8, 2);
  cfg.df_floor = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = standard_config(1, 9, 3);  // d_head 3 is odd
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = standard_config(1, 8, 2);
  cfg.components = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("patchify") {
  std::vector<double> s96(96);
  std::iota(s96.begin(), s96.end(), 0.0);
  CHECK(patchify(s96, 32).n_patches() == 3);

  std::vector<double> s32(s96.begin(), s96.begin() + 32);
  auto one = patchify(s32, 32);
  CHECK(one.n_patches() == 1);
  CHECK(one.patches == s32);

  std::vector<double> s100(100);
  std::iota(s100.begin(), s100.end(), 0.0);
  auto seq = patchify(s100, 32);
  CHECK(seq.n_patches() == 3);
  auto back = depatchify(seq);
  CHECK(back == std::vector<double>(s100.begin() + 4, s100.end()));

  CHECK_THROWS_AS(patchify(std::vector<double>(31, 1.0), 32), std::invalid_argument);
}

TEST_CASE("rope_rotate") {
  RopeConfig cfg{10000.0, 8};
  auto x = random_values(8, 3);
  CHECK(rope_rotate(x, 0.0, cfg) == x);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto v = random_values(8, seed);
    auto r = rope_rotate(v, 3.0 + seed * 7.0, cfg);
    double n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < 8; ++i) {
      n0 += v[i] * v[i];
      n1 += r[i] * r[i];
    }
    CHECK(std::abs(n0 - n1) < 1e-12);
  }
  auto r2 = rope_rotate(std::vector<double>{1.0, 0.0}, std::numbers::pi / 2, RopeConfig{10000.0, 2});
  CHECK(std::abs(r2[0] - 0.0) < 1e-15);
  CHECK(std::abs(r2[1] - 1.0) < 1e-15);

  auto theta = cfg.angles();
  CHECK(theta[0] == 1.0);
  for (std::size_t i = 1; i < theta.size(); ++i) CHECK(theta[i] < theta[i - 1]);
  CHECK_THROWS_AS(rope_rotate(std::vector<double>(3, 1.0), 1.0, RopeConfig{10000.0, 3}), std::invalid_argument);
}

TEST_CASE("rotated dot products depend only on the position offset") {
  RopeConfig cfg{10000.0, 8};
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> pos(0, 200);
  for (int trial = 0; trial < 50; ++trial) {
    auto q = random_values(8, 100 + trial);
    auto k = random_values(8, 200 + trial);
    const double m = pos(rng), n = pos(rng), shift = pos(rng);
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
      return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
    };
    const double base = dot(rope_rotate(q, m, cfg), rope_rotate(k, n, cfg));
    const double shifted = dot(rope_rotate(q, m + shift, cfg), rope_rotate(k, n + shift, cfg));
    CHECK(std::abs(base - shifted) < 1e-10);
  }
}

TEST_CASE("attention") {
  RopeConfig rope_cfg{10000.0, 4};
  SUBCASE("single token returns v") {
    auto q = random_tensor({1, 4}, 1), k = random_tensor({1, 4}, 2), v = random_tensor({1, 4}, 3);
    auto out = attention(q, k, v, {}, rope_cfg);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(out.at(i) - v.at(i)) < 1e-15);
  }
  SUBCASE("constant logits average the values") {
    // Zero queries make every logit zero regardless of rotation.
    auto q = Tensor::zeros({5, 4}), k = random_tensor({5, 4}, 2), v = random_tensor({5, 4}, 3);
    auto out = attention(q, k, v, {}, rope_cfg);
    for (std::size_t j = 0; j < 4; ++j) {
      double m = 0;
      for (std::size_t i = 0; i < 5; ++i) m += v.at(i * 4 + j) / 5.0;
      for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(out.at(i * 4 + j) - m) < 1e-14);
    }
  }
  SUBCASE("mask shape mismatch is rejected") {
    auto q = random_tensor({3, 4}, 1);
    AttentionMask mask;
    mask.segments = {0, 0};
    CHECK_THROWS_AS(attention(q, q, q, mask, rope_cfg), std::invalid_argument);
  }
  SUBCASE("fused multi-head attention matches the composed single-head route") {
    for (bool causal : {false, true}) {
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const std::size_t heads = 2, d_head = 4, width = heads * d_head;
        std::vector<int> segments{0, 0, 0, 1, 1, 2, 2, 2, 2};
        const std::size_t L = segments.size();
        AttentionMask mask{causal ? AttentionMask::Kind::causal : AttentionMask::Kind::bidirectional, segments};
        const auto positions = mask.positions(L);
        std::vector<AttentionBlock> blocks{{0, 3}, {3, 5}, {5, 9}};
        auto q = random_tensor({L, width}, seed), k = random_tensor({L, width}, seed + 10),
             v = random_tensor({L, width}, seed + 20);
        auto probe = random_tensor({L, width}, seed + 30, false);

        auto fused = [&]() {
          return multi_head_attention(rope(q, positions, heads, 10000.0), rope(k, positions, heads, 10000.0), v,
                                      heads, blocks, causal);
        };
        Tensor out = fused();
        for (std::size_t h = 0; h < heads; ++h) {
          std::vector<double> qh(L * d_head), kh(L * d_head), vh(L * d_head);
          for (std::size_t t = 0; t < L; ++t)
            for (std::size_t d = 0; d < d_head; ++d) {
              qh[t * d_head + d] = q.at(t * width + h * d_head + d);
              kh[t * d_head + d] = k.at(t * width + h * d_head + d);
              vh[t * d_head + d] = v.at(t * width + h * d_head + d);
            }
          auto ref = attention(Tensor::from_data({L, d_head}, qh), Tensor::from_data({L, d_head}, kh),
                               Tensor::from_data({L, d_head}, vh), mask, rope_cfg);
          for (std::size_t t = 0; t < L; ++t)
            for (std::size_t d = 0; d < d_head; ++d)
              CHECK(std::abs(ref.at(t * d_head + d) - out.at(t * width + h * d_head + d)) < 1e-12);
        }
        for (Tensor* input : {&q, &k, &v}) {
          const double err = finite_diff_check([&]() { return sum_all(mul(fused(), probe)); }, *input, 1e-4);
          CHECK(err < 1e-5);
        }
      }
    }
  }
}

TEST_CASE("student-t log density") {
  CHECK(std::abs(student_t_logpdf(0.0, 1.0, 0.0, 1.0) - std::log(1.0 / std::numbers::pi)) < 1e-10);
  CHECK(student_t_logpdf(0.0, 1e6, 0.0, 1.0) == doctest::Approx(-0.91894).epsilon(1e-4));
  for (double a : {0.1, 1.0, 3.7}) {
    CHECK(student_t_logpdf(2.0 + a, 3.0, 2.0, 1.5) == student_t_logpdf(2.0 - a, 3.0, 2.0, 1.5));
  }
  CHECK_THROWS_AS(student_t_logpdf(0.0, 0.0, 0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(student_t_logpdf(0.0, 3.0, 0.0, -1.0), std::domain_error);
}

TEST_CASE("gaussian log density") {
  CHECK(std::abs(gaussian_logpdf(0.0, 0.0, 1.0) - (-0.5 * std::log(2.0 * std::numbers::pi))) < 1e-12);
  CHECK(gaussian_logpdf(0.0, 0.0, 1.0) == doctest::Approx(-0.91894).epsilon(1e-5));
  for (double x : {-1.3, 0.0, 0.4, 2.2}) {
    CHECK(std::abs(gaussian_logpdf(x, 0.3, 0.8) - student_t_logpdf(x, 1e6, 0.3, 0.8)) < 1e-4);
  }
  CHECK(gaussian_logpdf(1.0 + 0.7, 1.0, 2.0) == gaussian_logpdf(1.0 - 0.7, 1.0, 2.0));
  CHECK_THROWS_AS(gaussian_logpdf(0.0, 0.0, 0.0), std::domain_error);
}

TEST_CASE("mixture_nll") {
  SUBCASE("one component reduces to the density") {
    auto p = single_point(HeadFamily::student_t, {1.0}, {4.0}, {0.5}, {1.3});
    const std::vector<double> y{1.7};
    CHECK(std::abs(mixture_nll(p, y) + student_t_logpdf(1.7, 4.0, 0.5, 1.3)) < 1e-14);
  }
  SUBCASE("identical components collapse") {
    auto two = single_point(HeadFamily::student_t, {0.3, 0.7}, {5.0, 5.0}, {1.0, 1.0}, {2.0, 2.0});
    auto one = single_point(HeadFamily::student_t, {1.0}, {5.0}, {1.0}, {2.0});
    const std::vector<double> y{-0.4};
    CHECK(std::abs(mixture_nll(two, y) - mixture_nll(one, y)) < 1e-14);
  }
  SUBCASE("log-sum-exp matches direct summation") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.1, 1.0), m(-2.0, 2.0), d(2.0, 20.0);
    for (int trial = 0; trial < 50; ++trial) {
      MixtureParams p;
      p.components = 4;
      double total = 0;
      for (int k = 0; k < 4; ++k) {
        p.weights.push_back(u(rng));
        total += p.weights.back();
        p.df.push_back(d(rng));
        p.loc.push_back(m(rng));
        p.scale.push_back(u(rng) * 2.0);
      }
      for (double& w : p.weights) w /= total;
      const double y = m(rng);
      double direct = 0.0;
      for (int k = 0; k < 4; ++k) direct += p.weights[k] * std::exp(student_t_logpdf(y, p.df[k], p.loc[k], p.scale[k]));
      const std::vector<double> ys{y};
      CHECK(std::abs(mixture_nll(p, ys) + std::log(direct)) < 1e-10);
    }
  }
  SUBCASE("constraint violations are rejected") {
    const std::vector<double> y{0.0};
    CHECK_THROWS_AS(mixture_nll(single_point(HeadFamily::student_t, {0.5, 0.6}, {3, 3}, {0, 0}, {1, 1}), y),
                    std::invalid_argument);
    CHECK_THROWS_AS(mixture_nll(single_point(HeadFamily::student_t, {1.0}, {1.5}, {0}, {1}), y),
                    std::invalid_argument);
    CHECK_THROWS_AS(mixture_nll(single_point(HeadFamily::student_t, {1.0}, {3}, {0}, {0}), y),
                    std::invalid_argument);
  }
  SUBCASE("gaussian family") {
    auto g = single_point(HeadFamily::gaussian, {0.4, 0.6}, {}, {0.0, 1.0}, {1.0, 0.5});
    const std::vector<double> y{0.3};
    const double expected = -std::log(0.4 * std::exp(gaussian_logpdf(0.3, 0.0, 1.0)) +
                                      0.6 * std::exp(gaussian_logpdf(0.3, 1.0, 0.5)));
    CHECK(std::abs(gaussian_mixture_nll(g, y) - expected) < 1e-12);
  }
}

TEST_CASE("mixture NLL tensor op agrees with the scalar path and differentiates") {
  for (HeadFamily family : {HeadFamily::student_t, HeadFamily::gaussian}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const std::size_t points = 6, K = 3;
      auto logits = random_tensor({points, K}, seed);
      auto df_raw = random_tensor({points, K}, seed + 1);
      auto loc = random_tensor({points, K}, seed + 2);
      auto scale_raw = random_tensor({points, K}, seed + 3);
      const auto targets = random_values(points, seed + 4, -1.5, 1.5);
      auto loss = [&]() {
        return mixture_nll(constrain_head(family, 2.0, logits, df_raw, loc, scale_raw), targets);
      };
      const auto params = constrain_head(family, 2.0, logits, df_raw, loc, scale_raw).values();
      CHECK(std::abs(loss().item() - mixture_nll(params, targets)) < 1e-12);
      std::vector<Tensor*> inputs{&logits, &loc, &scale_raw};
      if (family == HeadFamily::student_t) inputs.push_back(&df_raw);
      for (Tensor* t : inputs) CHECK(finite_diff_check(loss, *t, 1e-4) < 1e-5);
    }
  }
}

TEST_CASE("sampling and quantiles") {
  std::mt19937_64 rng(3);
  SUBCASE("point mass") {
    auto p = single_point(HeadFamily::student_t, {1.0}, {3.0}, {2.5}, {1e-9});
    for (double s : sample_point(p, 0, 100, rng)) CHECK(std::abs(s - 2.5) < 1e-6);
  }
  SUBCASE("gaussian sample mean") {
    auto p = single_point(HeadFamily::gaussian, {1.0}, {}, {5.0}, {1.0});
    auto s = sample_point(p, 0, 100000, rng);
    const double m = std::accumulate(s.begin(), s.end(), 0.0) / s.size();
    CHECK(std::abs(m - 5.0) < 0.05);
  }
  SUBCASE("median of a symmetric component") {
    auto p = single_point(HeadFamily::student_t, {1.0}, {4.0}, {-1.0}, {2.0});
    const std::vector<double> levels{0.5};
    auto q = quantiles(p, levels, rng, 20000);
    CHECK(std::abs(q[0] + 1.0) < 0.05);
    CHECK_THROWS_AS(quantiles(p, std::vector<double>{}, rng), std::invalid_argument);
    CHECK_THROWS_AS(quantiles(p, std::vector<double>{1.0}, rng), std::invalid_argument);
  }
}

TEST_CASE("forward constraints") {
  for (auto arch : {Architecture::encoder_only, Architecture::decoder_only}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Transformer model(tiny_config(arch), seed);
      jitter(model, seed + 50, 1.0);
      auto params = model.forward(random_sequence(4, 3, 2, seed));
      CHECK_NOTHROW(params.validate());
      for (double s : params.scale) CHECK(s > 0.0);
      for (double d : params.df) CHECK(d >= 2.0);
      const std::size_t expected_points = arch == Architecture::encoder_only ? 2 * 4 : 4 * 4;
      CHECK(params.n_points() == expected_points);
    }
  }
  Transformer model(tiny_config(Architecture::encoder_only), 1);
  auto seq = random_sequence(4, 0, 2, 1);
  CHECK_THROWS_AS(model.forward(seq), std::invalid_argument);
}

TEST_CASE("encoder horizon output ignores the horizon values") {
  Transformer model(tiny_config(Architecture::encoder_only), 4);
  jitter(model, 5);
  auto seq = random_sequence(4, 3, 2, 8);
  auto a = model.forward(seq);
  for (std::size_t i = 3 * 4; i < seq.patches.size(); ++i) seq.patches[i] = 1e3 * std::sin(i);
  auto b = model.forward(seq);
  CHECK(a.weights == b.weights);
  CHECK(a.loc == b.loc);
  CHECK(a.scale == b.scale);
  CHECK(a.df == b.df);
}

TEST_CASE("decoder predictions are causal") {
  Transformer model(tiny_config(Architecture::decoder_only), 4);
  jitter(model, 6);
  auto seq = random_sequence(4, 5, 0, 9);
  auto base = model.forward(seq);
  const std::size_t K = 2, P = 4;
  for (std::size_t t = 0; t + 1 < seq.n_patches(); ++t) {
    auto perturbed = seq;
    for (std::size_t i = (t + 1) * P; i < perturbed.patches.size(); ++i) perturbed.patches[i] += 3.0 * std::cos(i);
    auto out = model.forward(perturbed);
    // Output row r predicts patch r + 1 and has seen patches 0..r.
    for (std::size_t r = 0; r <= t; ++r)
      for (std::size_t i = r * P * K; i < (r + 1) * P * K; ++i) {
        CHECK(std::abs(out.loc[i] - base.loc[i]) < 1e-10);
        CHECK(std::abs(out.scale[i] - base.scale[i]) < 1e-10);
        CHECK(std::abs(out.weights[i] - base.weights[i]) < 1e-10);
      }
  }
}

TEST_CASE("full model loss passes the gradient check") {
  for (auto arch : {Architecture::encoder_only, Architecture::decoder_only}) {
    for (auto family : {HeadFamily::student_t, HeadFamily::gaussian}) {
      Transformer model(tiny_config(arch, family), 21);
      jitter(model, 22);
      auto input = build_input(model.config(), random_sequence(4, 3, 2, 23), Targets::training);
      for (auto& p : model.parameters()) {
        const double err = finite_diff_check([&]() { return model.loss(input); }, p.tensor, 1e-4);
        CHECK_MESSAGE(err < 1e-4, p.name << " error " << err);
      }
    }
  }
}

#include <doctest.h>

#include <cmath>
#include <random>

#include "gradmap/policy.hpp"

using namespace gradmap;
using namespace gradmap::policy;

namespace {

Observation random_obs(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Observation obs;
  for (int i = 0; i < kObsDim; ++i) obs(i) = unit(rng);
  return obs;
}

devices::Agent battery_agent() {
  devices::Agent a;
  a.id = "bat";
  a.type = devices::DeviceType::Battery;
  devices::BatteryParams p;
  p.e_max = 10.0;
  p.p_max = 5.0;
  p.e_target = 5.0;
  a.params = p;
  return a;
}

devices::Agent generator_agent() {
  devices::Agent a;
  a.id = "gen";
  a.type = devices::DeviceType::Generator;
  devices::GeneratorParams p;
  p.p_min = 1.0;
  p.p_max = 9.0;
  a.params = p;
  return a;
}

devices::Agent heatpump_agent() {
  devices::Agent a;
  a.id = "hp";
  a.type = devices::DeviceType::HeatPump;
  devices::HeatPumpParams p;
  p.p_max = 4.0;
  a.params = p;
  return a;
}

}  // namespace

TEST_CASE("zero-weight network yields mu 0 and the initial std") {
  PolicyParams p;
  p.w1.setZero();
  p.b1.setZero();
  p.w2.setZero();
  p.b2 << 0.0, -2.0;
  const auto out = policy_forward(p, random_obs(1));
  CHECK(out.mu == 0.0);
  CHECK(out.sigma == doctest::Approx(std::exp(-2.0)).epsilon(1e-15));
  CHECK(out.sigma == doctest::Approx(0.1353).epsilon(1e-3));
}

TEST_CASE("forward pass matches an independent recomputation and is deterministic") {
  const PolicyParams p = PolicyParams::init(17);
  const Observation obs = random_obs(3);

  // Straight-line recomputation of the two-layer formula.
  double h[kHidden];
  for (int i = 0; i < kHidden; ++i) {
    double z = p.b1(i);
    for (int j = 0; j < kObsDim; ++j) z += p.w1(i, j) * obs(j);
    h[i] = std::tanh(z);
  }
  double mu = p.b2(0), ls = p.b2(1);
  for (int i = 0; i < kHidden; ++i) {
    mu += p.w2(0, i) * h[i];
    ls += p.w2(1, i) * h[i];
  }
  ls = clip(ls, kLogSigmaMin, kLogSigmaMax);

  const auto out1 = policy_forward(p, obs);
  const auto out2 = policy_forward(p, obs);
  CHECK(out1.mu == doctest::Approx(mu).epsilon(1e-14));
  CHECK(out1.log_sigma == doctest::Approx(ls).epsilon(1e-14));
  CHECK(out1.mu == out2.mu);          // byte-identical repeats
  CHECK(out1.sigma == out2.sigma);
}

TEST_CASE("action sampling and clipping") {
  PolicyOutput out;
  out.mu = 0.9;
  out.sigma = 0.2;
  SUBCASE("epsilon 0 returns the mean") {
    CHECK(sample_action(out, 0.0).first == 0.9);
  }
  SUBCASE("raw and clipped sample") {
    const auto [raw, clipped] = sample_action(out, 1.0);
    CHECK(raw == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(clipped == 1.0);
  }
  SUBCASE("small negative draw") {
    out.mu = 0.0;
    out.sigma = 0.14;
    CHECK(sample_action(out, -0.5).first ==
          doctest::Approx(-0.07).epsilon(1e-15));
  }
}

TEST_CASE("action decode endpoints per device type") {
  CHECK(decode_action(1.0, battery_agent()) == 5.0);
  CHECK(decode_action(-1.0, battery_agent()) == -5.0);
  CHECK(decode_action(-1.0, heatpump_agent()) == 0.0);
  CHECK(decode_action(1.0, heatpump_agent()) == 4.0);
  CHECK(decode_action(0.0, generator_agent()) == doctest::Approx(5.0));
  CHECK(decode_action(-1.0, generator_agent()) == 1.0);
  CHECK(decode_action(1.0, generator_agent()) == 9.0);
  // Decoded commands always respect the device bounds.
  for (double a = -1.0; a <= 1.0; a += 0.125) {
    CHECK(std::abs(decode_action(a, battery_agent())) <= 5.0);
    CHECK(decode_action(a, heatpump_agent()) >= 0.0);
    CHECK(decode_action(a, heatpump_agent()) <= 4.0);
    CHECK(decode_action(a, generator_agent()) >= 1.0);
    CHECK(decode_action(a, generator_agent()) <= 9.0);
  }
}

TEST_CASE("reparameterised output gradients") {
  CHECK(output_gradients(2.0, 0.5) == std::pair<double, double>{2.0, 1.0});
  CHECK(output_gradients(3.7, 0.0).second == 0.0);
  // Clipped actions arrive with g_a already zeroed upstream.
  CHECK(output_gradients(0.0, 1.3) == std::pair<double, double>{0.0, 0.0});
}

TEST_CASE("entropy of the Gaussian policy") {
  const double h1 = entropy(1.0);
  CHECK(h1 == doctest::Approx(1.41894).epsilon(1e-5));
  CHECK(entropy(2.0) - h1 == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(entropy(std::exp(-2.0)) == doctest::Approx(h1 - 2.0).epsilon(1e-12));
}

TEST_CASE("urgency feature") {
  const auto bat = battery_agent();
  SUBCASE("at-target battery has zero raw urgency") {
    CHECK(urgency_feature(bat, 5.0, 0.3) == 0.0);
  }
  SUBCASE("hand case: 1 kWh short at half horizon") {
    // (5 - 4) / (0.5 * 10/2) = 0.4
    CHECK(urgency_feature(bat, 4.0, 0.5) == doctest::Approx(0.4).epsilon(1e-14));
  }
  SUBCASE("generators have no urgency") {
    CHECK(urgency_feature(generator_agent(), 3.0, 0.5) == 0.0);
  }
  SUBCASE("clamped near the end of the horizon") {
    CHECK(urgency_feature(bat, 0.0, 0.999) == 3.0);
    CHECK(urgency_feature(bat, 10.0, 0.999) == -3.0);
  }
}

TEST_CASE("observations use only agent-local and broadcast quantities") {
  const auto agent = battery_agent();
  NormStats stats;
  stats.demand_max = 5.0;
  stats.price_imp_max = 0.5;
  stats.price_exp_max = 0.2;
  stats.temp_min = -5.0;
  stats.temp_max = 15.0;
  const Observation obs = build_observation(agent, 4.0, 12, 24, 2.5, 0.25, 0.1,
                                            5.0, 1.02, stats);
  CHECK(obs(0) == 0.5);
  CHECK(obs(1) == doctest::Approx(0.4));           // E / e_max
  CHECK(obs(2) == doctest::Approx(0.5));           // demand minmax
  CHECK(obs(3) == doctest::Approx(0.5));
  CHECK(obs(4) == doctest::Approx(0.5));
  CHECK(obs(5) == doctest::Approx(0.5));
  CHECK(obs(6) == doctest::Approx((0.4 + 3.0) / 6.0));
  CHECK(obs(7) == doctest::Approx((1.02 - 0.9) / 0.2));
  // The signature admits no other agent's state; identical inputs give
  // identical features regardless of anything else in the fleet.
  const Observation again = build_observation(agent, 4.0, 12, 24, 2.5, 0.25,
                                              0.1, 5.0, 1.02, stats);
  CHECK((obs - again).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("parameter gradient accumulation") {
  SUBCASE("zero output gradients accumulate nothing") {
    ParamGrad grad;
    accumulate_output_grad(PolicyParams::init(2), random_obs(2), 0.0, 0.0, grad);
    CHECK(grad.squared_norm() == 0.0);
  }
  SUBCASE("linear single-sample case matches the closed-form outer product") {
    const PolicyParams p = PolicyParams::init(5);
    const Observation obs = random_obs(9);
    ParamGrad grad;
    const double g_mu = 0.7;
    accumulate_output_grad(p, obs, g_mu, 0.0, grad, /*linear_activation=*/true);
    // mu = w2_row0 (w1 obs + b1) + b2(0): d mu / d w1 = w2_row0^T obs^T.
    const MatR want_w1 = g_mu * p.w2.row(0).transpose() * obs.transpose();
    CHECK((grad.w1 - want_w1).cwiseAbs().maxCoeff() < 1e-14);
    const VecR h = p.w1 * obs + p.b1;
    CHECK((grad.w2.row(0).transpose() - g_mu * h).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(grad.w2.row(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(grad.b2(0) == doctest::Approx(g_mu).epsilon(1e-15));
    CHECK(grad.b2(1) == 0.0);
  }
  SUBCASE("random batch matches finite differences") {
    const PolicyParams p = PolicyParams::init(13);
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<Observation> batch;
    std::vector<std::pair<double, double>> gs;
    for (int k = 0; k < 6; ++k) {
      batch.push_back(random_obs(100 + k));
      gs.emplace_back(gauss(rng), gauss(rng));
    }
    ParamGrad grad;
    for (int k = 0; k < 6; ++k) {
      accumulate_output_grad(p, batch[k], gs[k].first, gs[k].second, grad);
    }
    auto loss = [&](const VecR& flat) {
      const PolicyParams q = PolicyParams::from_flat(flat);
      double l = 0.0;
      for (int k = 0; k < 6; ++k) {
        const auto out = policy_forward(q, batch[k]);
        l += gs[k].first * out.mu + gs[k].second * out.sigma;
      }
      return l;
    };
    const VecR flat = p.flatten();
    VecR flat_grad(PolicyParams::flat_size());
    {
      ParamGrad g2 = grad;
      PolicyParams as_params;
      as_params.w1 = g2.w1;
      as_params.b1 = g2.b1;
      as_params.w2 = g2.w2;
      as_params.b2 = g2.b2;
      flat_grad = as_params.flatten();
    }
    const double h = 1e-5;
    std::mt19937_64 pick(77);
    std::uniform_int_distribution<int> idx(0, PolicyParams::flat_size() - 1);
    for (int trial = 0; trial < 40; ++trial) {
      const int i = idx(pick);
      VecR fp = flat, fm = flat;
      fp(i) += h;
      fm(i) -= h;
      const double fd = (loss(fp) - loss(fm)) / (2.0 * h);
      CHECK(std::abs(fd - flat_grad(i)) <
            1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("flatten round-trips losslessly") {
  const PolicyParams p = PolicyParams::init(23);
  const PolicyParams q = PolicyParams::from_flat(p.flatten());
  CHECK((p.w1 - q.w1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.b1 - q.b1).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.w2 - q.w2).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.b2 - q.b2).cwiseAbs().maxCoeff() == 0.0);
}

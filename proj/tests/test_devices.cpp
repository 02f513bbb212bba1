#include <doctest.h>

#include <random>

#include "gradmap/devices.hpp"
#include "gradmap/gradcheck.hpp"

using namespace gradmap;
using namespace gradmap::devices;

namespace {

BatteryParams flat_eff_battery() {
  BatteryParams p;
  p.e_max = 10.0;
  p.p_max = 5.0;
  p.e_target = 5.0;
  p.eff_a = 0.95;
  p.eff_b = 0.0;  // constant efficiency 0.95
  p.eff_c = 6.0;
  return p;
}

}  // namespace

TEST_CASE("battery step") {
  const BatteryParams p = flat_eff_battery();

  SUBCASE("charging inside the bounds") {
    const auto r = battery_step(5.0, 2.0, p, 0.25);
    CHECK(r.implied_value == doctest::Approx(5.475).epsilon(1e-14));
    CHECK(r.next_state == doctest::Approx(5.475).epsilon(1e-14));
    CHECK(r.actual_power == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(r.violation_raw == 0.0);
  }
  SUBCASE("idle command") {
    const auto r = battery_step(5.0, 0.0, p, 0.25);
    CHECK(r.next_state == 5.0);
    CHECK(r.actual_power == 0.0);
    CHECK(r.cost == 0.0);
  }
  SUBCASE("active upper clip back-calculates the actual power") {
    const auto r = battery_step(9.9, 2.0, p, 0.25);
    CHECK(r.implied_value == doctest::Approx(10.375).epsilon(1e-14));
    CHECK(r.next_state == 10.0);
    CHECK(r.actual_power == doctest::Approx(0.1 / 0.2375).epsilon(1e-12));
    CHECK(r.violation_raw == doctest::Approx(0.375 / p.p_max).epsilon(1e-12));
  }
  SUBCASE("energy consistency holds to machine precision") {
    BatteryParams q;  // nonlinear efficiency
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < 200; ++k) {
      const double e = unit(rng) * q.e_max;
      const double cmd = (2.0 * unit(rng) - 1.0) * q.p_max;
      const auto r = battery_step(e, cmd, q, 0.25);
      CHECK(r.next_state >= 0.0);
      CHECK(r.next_state <= q.e_max);
      CHECK(std::abs(r.next_state - (e + q.efficiency(cmd) * r.actual_power * 0.25)) <
            1e-12);
      CHECK(r.violation_raw >= 0.0);
    }
  }
}

TEST_CASE("heat pump step") {
  HeatPumpParams p;
  p.r = 2.0;
  p.c = 4.0;
  p.cop = 3.0;
  p.p_max = 5.0;

  SUBCASE("inside the comfort band") {
    p.theta_set = 21.0;  // band [19, 23]
    p.delta = 2.0;
    const auto r = heatpump_step(20.0, 1.0, p, 10.0, 0.25);
    CHECK(r.implied_value == doctest::Approx(19.875).epsilon(1e-14));
    CHECK(r.next_state == doctest::Approx(19.875).epsilon(1e-14));
    CHECK(r.actual_power == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.violation_raw == 0.0);
  }
  SUBCASE("thermal equilibrium is a fixed point") {
    const auto r = heatpump_step(10.0, 0.0, p, 10.0, 0.25);
    CHECK(r.implied_value == 10.0);
  }
  SUBCASE("active lower clip back-calculates the feedback power") {
    p.theta_set = 20.45;  // band [19.9, 21]
    p.delta = 0.55;
    const auto r = heatpump_step(20.0, 0.0, p, 10.0, 0.25);
    CHECK(r.implied_value == doctest::Approx(19.6875).epsilon(1e-14));
    CHECK(r.next_state == doctest::Approx(19.9).epsilon(1e-14));
    CHECK(r.actual_power ==
          doctest::Approx((16.0 * -0.1 + 5.0) / 3.0).epsilon(1e-10));
    CHECK(r.violation_raw ==
          doctest::Approx((19.9 - 19.6875) / 0.55).epsilon(1e-10));
  }
}

TEST_CASE("generator step") {
  GeneratorParams p;
  p.p_min = 0.0;
  p.p_max = 10.0;
  p.ramp_dn = -0.5;
  p.ramp_up = 0.5;
  p.fuel_a = 0.08;
  p.fuel_b = 0.005;

  SUBCASE("ramp clip and its channel raw") {
    const auto r = generator_step(5.0, 6.0, p, 1.0);
    CHECK(r.implied_value == 1.0);
    CHECK(r.actual_power == doctest::Approx(5.5).epsilon(1e-14));
    CHECK(r.next_state == r.actual_power);
    CHECK(r.violation_raw == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("holding the output is free of ramp violation") {
    const auto r = generator_step(5.0, 5.0, p, 1.0);
    CHECK(r.actual_power == 5.0);
    CHECK(r.violation_raw == 0.0);
  }
  SUBCASE("inactive clip passes the command through") {
    const auto r = generator_step(5.0, 5.3, p, 1.0);
    CHECK(r.actual_power == doctest::Approx(5.3).epsilon(1e-14));
    CHECK(r.violation_raw == 0.0);
    CHECK(r.cost ==
          doctest::Approx(0.08 * 5.3 + 0.005 * 5.3 * 5.3).epsilon(1e-12));
  }
}

TEST_CASE("meter cost") {
  CHECK(meter_cost(2.0, 0.30, 0.10, 0.25) == doctest::Approx(0.15).epsilon(1e-14));
  CHECK(meter_cost(0.0, 0.30, 0.10, 0.25) == 0.0);
  CHECK(meter_cost(-2.0, 0.30, 0.10, 0.25) ==
        doctest::Approx(-0.05).epsilon(1e-14));
}

TEST_CASE("battery backward matches the hand-derived clip cases") {
  const BatteryParams p = flat_eff_battery();

  SUBCASE("inactive clips, constant efficiency: d nextE / d cmd = eta dt") {
    UpstreamAdjoint up;
    up.d_next_state = 1.0;
    const auto adj = battery_step_backward(5.0, 2.0, p, 0.25, up);
    CHECK(adj.d_command == doctest::Approx(0.95 * 0.25).epsilon(1e-14));
    CHECK(adj.d_state == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("active upper clip: state path dies, power path follows eta'") {
    BatteryParams q;  // nonlinear efficiency, default pool values
    const double e = 9.9, cmd = 4.0, dt = 0.25;
    const auto fwd = battery_step(e, cmd, q, dt);
    REQUIRE(fwd.next_state == q.e_max);  // clip active
    UpstreamAdjoint up_state;
    up_state.d_next_state = 1.0;
    CHECK(battery_step_backward(e, cmd, q, dt, up_state).d_command == 0.0);

    UpstreamAdjoint up_power;
    up_power.d_actual_power = 1.0;
    const double eta = q.efficiency(cmd);
    const double want = -(fwd.next_state - e) * q.efficiency_deriv(cmd) /
                        (eta * eta * dt);
    CHECK(battery_step_backward(e, cmd, q, dt, up_power).d_command ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("all device adjoints agree with finite differences") {
  const auto report = gradcheck::check_device_backward(0);
  CHECK(report.n_checked > 0);
  CHECK(report.max_rel_err < 1e-6);
}

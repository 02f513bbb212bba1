#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gradmap/scenario.hpp"

using namespace gradmap;
using namespace gradmap::scenario;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("scen_test_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string timestamp(int hour) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "2024-01-%02dT%02d:00:00", 1 + hour / 24,
                hour % 24);
  return buf;
}

// Writes a 24-hour, hourly resolved triple of CSV files for two agents.
struct CsvFixture {
  TempDir dir;
  CsvPaths paths;
  std::vector<double> load_a, pv_a, temp, imp, exp;

  explicit CsvFixture(bool inject_gap = false, bool bad_header = false) {
    paths.household = dir.file("household.csv");
    paths.weather = dir.file("weather.csv");
    paths.prices = dir.file("prices.csv");

    std::ofstream hh(paths.household);
    hh << (bad_header ? "time,agent,load,pv" : "timestamp,agent_id,load_kw,pv_kw")
       << "\n";
    for (int h = 0; h < 24; ++h) {
      const double load = 0.5 + 0.1 * h;
      const double pv = h >= 8 && h <= 16 ? 1.5 : 0.0;
      load_a.push_back(load);
      pv_a.push_back(pv);
      hh << timestamp(h) << ",a1," << load << ',' << pv << "\n";
      hh << timestamp(h) << ",a2," << 2.0 * load << ',' << 0.0 << "\n";
    }
    std::ofstream wt(paths.weather);
    wt << "timestamp,temp_c\n";
    for (int h = 0; h < 24; ++h) {
      if (inject_gap && h == 12) continue;  // missing timestamp
      const double t = 5.0 + 0.5 * h;
      temp.push_back(t);
      wt << timestamp(h) << ',' << t << "\n";
    }
    std::ofstream pr(paths.prices);
    pr << "timestamp,price_import,price_export\n";
    for (int h = 0; h < 24; ++h) {
      const double pi = 0.2 + 0.01 * h;
      imp.push_back(pi);
      exp.push_back(0.4 * pi);
      pr << timestamp(h) << ',' << pi << ',' << 0.4 * pi << "\n";
    }
  }
};

}  // namespace

TEST_CASE("synthetic generation is deterministic in the seed") {
  const Scenario a = generate_synthetic(42, 4, 3, 1.0, 24);
  const Scenario b = generate_synthetic(42, 4, 3, 1.0, 24);
  const Scenario c = generate_synthetic(43, 4, 3, 1.0, 24);
  CHECK((a.load - b.load).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.pv - b.pv).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.price_import - b.price_import).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.temp_out - b.temp_out).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.load - c.load).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("synthetic series respect their structural constraints") {
  const Scenario s = generate_synthetic(7, 3, 4, 1.0, 24);
  REQUIRE(s.total_steps() == 96);
  // PV is exactly zero outside the generated daylight window.
  for (int d = 0; d < s.n_days; ++d) {
    for (int k = 0; k < 24; ++k) {
      const double hour = k + 0.5;
      if (hour < 6.0 || hour > 18.0) {
        for (int a = 0; a < s.n_agents; ++a) {
          CHECK(s.pv(a, d * 24 + k) == 0.0);
        }
      }
    }
  }
  CHECK(s.pv.minCoeff() >= 0.0);
  CHECK(s.price_import.minCoeff() > 0.0);
  // Export never exceeds import in generated data.
  CHECK(((s.price_import - s.price_export).array() >= 0.0).all());
  CHECK(s.train_days + s.test_days == s.n_days);
}

TEST_CASE("normalisation statistics recompute exactly and use only the train split") {
  Scenario s = generate_synthetic(11, 3, 5, 1.0, 24);
  REQUIRE(s.train_days == 4);
  REQUIRE(s.test_days == 1);

  const auto st = compute_stats(s);
  CHECK(st.demand_min == s.stats.demand_min);
  CHECK(st.demand_max == s.stats.demand_max);
  CHECK(st.price_imp_max == s.stats.price_imp_max);
  CHECK(st.temp_min == s.stats.temp_min);

  // Perturbing only the test split leaves the statistics untouched.
  const int test_start = s.train_days * s.steps_per_day;
  for (int a = 0; a < s.n_agents; ++a) {
    for (int k = test_start; k < s.total_steps(); ++k) s.load(a, k) *= 100.0;
  }
  s.temp_out.tail(s.steps_per_day).array() += 50.0;
  const auto st2 = compute_stats(s);
  CHECK(st2.demand_min == st.demand_min);
  CHECK(st2.demand_max == st.demand_max);
  CHECK(st2.temp_max == st.temp_max);
}

TEST_CASE("CSV ingestion") {
  SUBCASE("native-resolution load is lossless") {
    CsvFixture fx;
    const Scenario s = load_csv(fx.paths, 1.0, 24, 0);
    REQUIRE(s.n_days == 1);
    REQUIRE(s.n_agents == 2);
    for (int h = 0; h < 24; ++h) {
      CHECK(s.load(0, h) == doctest::Approx(fx.load_a[h]).epsilon(1e-15));
      CHECK(s.pv(0, h) == doctest::Approx(fx.pv_a[h]).epsilon(1e-15));
      CHECK(s.load(1, h) == doctest::Approx(2.0 * fx.load_a[h]).epsilon(1e-15));
      CHECK(s.temp_out(h) == doctest::Approx(fx.temp[h]).epsilon(1e-15));
      CHECK(s.price_import(h) == doctest::Approx(fx.imp[h]).epsilon(1e-15));
      CHECK(s.price_export(h) == doctest::Approx(fx.exp[h]).epsilon(1e-15));
    }
  }
  SUBCASE("quarter-hour interpolation quadruples the length with exact midpoints") {
    CsvFixture fx;
    const Scenario s = load_csv(fx.paths, 0.25, 96, 0);
    REQUIRE(s.n_days == 1);
    CHECK(s.total_steps() == 96);
    CHECK(s.load(0, 0) == doctest::Approx(fx.load_a[0]).epsilon(1e-15));
    for (int h = 0; h < 23; ++h) {
      // Hour anchors are preserved; quarter points are linear blends.
      CHECK(s.load(0, 4 * h) == doctest::Approx(fx.load_a[h]).epsilon(1e-13));
      const double mid = 0.5 * (fx.load_a[h] + fx.load_a[h + 1]);
      CHECK(s.load(0, 4 * h + 2) == doctest::Approx(mid).epsilon(1e-13));
      const double q1 = 0.75 * fx.load_a[h] + 0.25 * fx.load_a[h + 1];
      CHECK(s.load(0, 4 * h + 1) == doctest::Approx(q1).epsilon(1e-13));
    }
  }
  SUBCASE("malformed header raises SchemaError") {
    CsvFixture fx(/*inject_gap=*/false, /*bad_header=*/true);
    CHECK_THROWS_AS(load_csv(fx.paths, 1.0, 24, 0), SchemaError);
  }
  SUBCASE("missing timestamps raise GapError") {
    CsvFixture fx(/*inject_gap=*/true);
    CHECK_THROWS_AS(load_csv(fx.paths, 1.0, 24, 0), GapError);
  }
}

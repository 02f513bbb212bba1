#include "gradmap/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <sstream>
#include <vector>

namespace gradmap::scenario {

policy::NormStats compute_stats(const Scenario& s) {
  policy::NormStats st;
  const int train_steps = s.train_days * s.steps_per_day;
  double dmin = std::numeric_limits<double>::infinity();
  double dmax = -dmin;
  for (int a = 0; a < s.n_agents; ++a) {
    for (int k = 0; k < train_steps; ++k) {
      const double d = s.load(a, k) - s.pv(a, k);
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
  }
  st.demand_min = dmin;
  st.demand_max = dmax;
  const auto head = [&](const VecR& v) { return v.head(train_steps); };
  st.price_imp_min = head(s.price_import).minCoeff();
  st.price_imp_max = head(s.price_import).maxCoeff();
  st.price_exp_min = head(s.price_export).minCoeff();
  st.price_exp_max = head(s.price_export).maxCoeff();
  st.temp_min = head(s.temp_out).minCoeff();
  st.temp_max = head(s.temp_out).maxCoeff();
  return st;
}

Scenario generate_synthetic(std::uint64_t seed, int n_agents, int n_days,
                            double dt, int steps_per_day) {
  if (n_agents < 1 || n_days < 1 || steps_per_day < 1) {
    throw SchemaError("counts must be >= 1");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Scenario s;
  s.dt = dt;
  s.steps_per_day = steps_per_day;
  s.n_days = n_days;
  s.n_agents = n_agents;
  const int total = n_days * steps_per_day;
  s.load.resize(n_agents, total);
  s.pv.resize(n_agents, total);
  s.temp_out.resize(total);
  s.price_import.resize(total);
  s.price_export.resize(total);

  std::vector<double> base_load(n_agents), pv_cap(n_agents);
  for (int a = 0; a < n_agents; ++a) {
    base_load[a] = 0.4 + 0.6 * unit(rng);
    pv_cap[a] = 1.0 + 2.0 * unit(rng);
  }
  std::vector<double> pv_day_factor(n_days);
  for (int d = 0; d < n_days; ++d) pv_day_factor[d] = 0.4 + 0.6 * unit(rng);

  for (int d = 0; d < n_days; ++d) {
    for (int k = 0; k < steps_per_day; ++k) {
      const int idx = d * steps_per_day + k;
      const double hour = (k + 0.5) * dt * 24.0 / (steps_per_day * dt);
      // Diurnal shapes loosely mimicking residential data: evening load
      // peak, midday PV, afternoon price bump.
      const double diurnal =
          0.6 + 0.4 * std::sin(2.0 * M_PI * (hour - 13.0) / 24.0);
      for (int a = 0; a < n_agents; ++a) {
        const double noise = 0.05 * gauss(rng);
        s.load(a, idx) = std::max(0.05, base_load[a] * (diurnal + noise));
        const double daylight = std::sin(M_PI * (hour - 6.0) / 12.0);
        s.pv(a, idx) = (hour >= 6.0 && hour <= 18.0)
                           ? pv_cap[a] * pv_day_factor[d] * std::max(0.0, daylight)
                           : 0.0;
      }
      s.temp_out(idx) = 8.0 + 4.0 * std::sin(2.0 * M_PI * (hour - 15.0) / 24.0) +
                        2.0 * std::sin(2.0 * M_PI * d / 7.0);
      const double peak =
          0.18 * std::exp(-0.5 * std::pow((hour - 17.5) / 1.8, 2.0));
      s.price_import(idx) =
          std::max(0.02, 0.18 + peak + 0.01 * gauss(rng));
      s.price_export(idx) = 0.4 * s.price_import(idx);
    }
  }

  s.test_days = std::max(1, n_days / 5);
  if (s.test_days >= n_days) s.test_days = n_days > 1 ? 1 : 0;
  s.train_days = n_days - s.test_days;
  if (s.train_days == 0) {  // single-day scenario: train == test
    s.train_days = n_days;
    s.test_days = n_days;
  }
  s.stats = compute_stats(s);
  return s;
}

namespace {

std::time_t parse_timestamp(const std::string& text) {
  std::tm tm{};
  std::istringstream ss(text);
  ss >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
  if (ss.fail()) throw SchemaError("bad ISO-8601 timestamp: " + text);
  return timegm(&tm);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

void expect_header(const std::string& line, const std::string& expected,
                   const std::string& path) {
  if (line != expected) {
    throw SchemaError("bad header in " + path + ": expected '" + expected +
                      "', got '" + line + "'");
  }
}

// Regular series keyed by timestamp; values may have several columns.
struct RawSeries {
  std::vector<std::time_t> times;
  std::vector<std::vector<double>> values;

  double step_seconds() const {
    if (times.size() < 2) throw GapError("series too short to interpolate");
    return static_cast<double>(times[1] - times[0]);
  }
  void check_regular() const {
    const double step = step_seconds();
    for (size_t i = 1; i < times.size(); ++i) {
      const double gap = static_cast<double>(times[i] - times[i - 1]);
      if (std::abs(gap - step) > 1.0) {
        throw GapError("missing timestamps beyond one step at index " +
                       std::to_string(i));
      }
    }
  }
};

// Linear interpolation of one column onto a grid of n points spaced dt_target
// hours, anchored at the first timestamp. Endpoints are preserved exactly.
VecR interpolate(const RawSeries& raw, int column, int n, double dt_target_h) {
  const double step_h = raw.step_seconds() / 3600.0;
  VecR out(n);
  const int last = static_cast<int>(raw.times.size()) - 1;
  for (int i = 0; i < n; ++i) {
    const double pos = i * dt_target_h / step_h;
    const int lo = std::min(static_cast<int>(std::floor(pos)), last);
    const int hi = std::min(lo + 1, last);
    const double frac = pos - lo;
    out(i) = raw.values[lo][column] * (1.0 - frac) + raw.values[hi][column] * frac;
  }
  return out;
}

}  // namespace

Scenario load_csv(const CsvPaths& paths, double dt, int steps_per_day,
                  int test_days) {
  // Household file: one series per agent.
  std::ifstream hh(paths.household);
  if (!hh) throw SchemaError("cannot open " + paths.household);
  std::string line;
  if (!std::getline(hh, line)) throw SchemaError("empty " + paths.household);
  expect_header(line, "timestamp,agent_id,load_kw,pv_kw", paths.household);

  std::map<std::string, RawSeries> per_agent;
  while (std::getline(hh, line)) {
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != 4) throw SchemaError("bad row in " + paths.household);
    auto& series = per_agent[f[1]];
    series.times.push_back(parse_timestamp(f[0]));
    series.values.push_back({std::stod(f[2]), std::stod(f[3])});
  }
  if (per_agent.empty()) throw SchemaError("no data in " + paths.household);

  auto load_shared = [](const std::string& path, const std::string& header,
                        int ncols) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path);
    std::string ln;
    if (!std::getline(in, ln)) throw SchemaError("empty " + path);
    expect_header(ln, header, path);
    RawSeries raw;
    while (std::getline(in, ln)) {
      if (ln.empty()) continue;
      const auto f = split_line(ln);
      if (static_cast<int>(f.size()) != ncols + 1) {
        throw SchemaError("bad row in " + path);
      }
      raw.times.push_back(parse_timestamp(f[0]));
      std::vector<double> vals;
      for (int c = 1; c <= ncols; ++c) vals.push_back(std::stod(f[c]));
      raw.values.push_back(vals);
    }
    raw.check_regular();
    return raw;
  };

  const RawSeries weather = load_shared(paths.weather, "timestamp,temp_c", 1);
  const RawSeries prices =
      load_shared(paths.prices, "timestamp,price_import,price_export", 2);

  Scenario s;
  s.dt = dt;
  s.steps_per_day = steps_per_day;
  s.n_agents = static_cast<int>(per_agent.size());

  // Horizon: longest common span at the target resolution, whole days only.
  double span_h = std::numeric_limits<double>::infinity();
  for (const auto& [id, raw] : per_agent) {
    raw.check_regular();
    span_h = std::min(span_h, (raw.times.back() - raw.times.front()) / 3600.0 +
                                  raw.step_seconds() / 3600.0);
  }
  span_h = std::min(span_h, (weather.times.back() - weather.times.front()) / 3600.0 +
                                weather.step_seconds() / 3600.0);
  span_h = std::min(span_h, (prices.times.back() - prices.times.front()) / 3600.0 +
                                prices.step_seconds() / 3600.0);
  const double day_h = steps_per_day * dt;
  s.n_days = static_cast<int>(std::floor(span_h / day_h));
  if (s.n_days < 1) throw GapError("series shorter than one episode");
  const int total = s.n_days * steps_per_day;

  s.load.resize(s.n_agents, total);
  s.pv.resize(s.n_agents, total);
  int a = 0;
  for (const auto& [id, raw] : per_agent) {
    s.load.row(a) = interpolate(raw, 0, total, dt).transpose();
    s.pv.row(a) = interpolate(raw, 1, total, dt).transpose();
    ++a;
  }
  s.temp_out = interpolate(weather, 0, total, dt);
  s.price_import = interpolate(prices, 0, total, dt);
  s.price_export = interpolate(prices, 1, total, dt);

  s.test_days = std::min(std::max(test_days, 0), s.n_days - 1);
  s.train_days = s.n_days - s.test_days;
  if (s.test_days == 0) s.test_days = s.n_days;  // degenerate split
  s.stats = compute_stats(s);
  return s;
}

}  // namespace gradmap::scenario

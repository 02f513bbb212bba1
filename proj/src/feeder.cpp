#include "gradmap/feeder.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <Eigen/LU>
#include <json.hpp>

#include "gradmap/linsolve.hpp"

namespace gradmap::feeder {

namespace {

Complex parse_complex(const nlohmann::json& pair) {
  if (!pair.is_array() || pair.size() != 2) {
    throw MalformedFeeder("complex values must be [re, im] pairs");
  }
  return {pair[0].get<double>(), pair[1].get<double>()};
}

MatC parse_block3(const nlohmann::json& block) {
  if (!block.is_array() || block.size() != 3) {
    throw MalformedFeeder("admittance block must be 3x3");
  }
  MatC y(3, 3);
  for (int r = 0; r < 3; ++r) {
    if (!block[r].is_array() || block[r].size() != 3) {
      throw MalformedFeeder("admittance block must be 3x3");
    }
    for (int c = 0; c < 3; ++c) y(r, c) = parse_complex(block[r][c]);
  }
  return y;
}

SpMatR build_h(int n_buses) {
  // Per-bus phase-to-phase block: rows ab, bc, ca.
  SpMatR h(3 * n_buses, 3 * n_buses);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(6 * n_buses);
  for (int b = 0; b < n_buses; ++b) {
    const int o = 3 * b;
    trip.emplace_back(o + 0, o + 0, 1.0);
    trip.emplace_back(o + 0, o + 1, -1.0);
    trip.emplace_back(o + 1, o + 1, 1.0);
    trip.emplace_back(o + 1, o + 2, -1.0);
    trip.emplace_back(o + 2, o + 2, 1.0);
    trip.emplace_back(o + 2, o + 0, -1.0);
  }
  h.setFromTriplets(trip.begin(), trip.end());
  return h;
}

}  // namespace

int NetworkModel::node_phase(const std::string& bus, int phase) const {
  auto it = bus_index.find(bus);
  if (it == bus_index.end()) {
    throw MalformedFeeder("unknown bus id: " + bus);
  }
  if (phase < 0 || phase > 2) {
    throw MalformedFeeder("phase index out of range for bus " + bus);
  }
  return 3 * it->second + phase;
}

NetworkModel build_network(const nlohmann::json& feeder) {
  NetworkModel model;
  model.v_min = feeder.at("v_min").get<double>();
  model.v_max = feeder.at("v_max").get<double>();
  model.s_base_kw = feeder.at("s_base_kw").get<double>();
  model.v_base_kv = feeder.value("v_base_kv", 0.4);
  if (!(model.v_min > 0.0) || !(model.v_min < model.v_max)) {
    throw MalformedFeeder("voltage limits must satisfy 0 < v_min < v_max");
  }

  model.v0 = VecC(3);
  const auto& v0 = feeder.at("v0");
  if (!v0.is_array() || v0.size() != 3) {
    throw MalformedFeeder("v0 must hold three [re, im] pairs");
  }
  for (int p = 0; p < 3; ++p) model.v0(p) = parse_complex(v0[p]);

  std::string slack_id;
  std::set<std::string> seen;
  for (const auto& bus : feeder.at("buses")) {
    const std::string id = bus.at("id").get<std::string>();
    if (!seen.insert(id).second) {
      throw MalformedFeeder("duplicate bus id: " + id);
    }
    if (bus.value("slack", false)) {
      if (!slack_id.empty()) throw MalformedFeeder("multiple slack buses");
      slack_id = id;
    } else {
      model.bus_index.emplace(id, static_cast<int>(model.bus_ids.size()));
      model.bus_ids.push_back(id);
    }
  }
  if (slack_id.empty()) throw MalformedFeeder("no slack bus declared");
  model.n_buses = static_cast<int>(model.bus_ids.size());
  if (model.n_buses == 0) throw MalformedFeeder("no PQ buses");

  const int dim = model.dim();
  model.y_ll = MatC::Zero(dim, dim);
  model.y_l0 = MatC::Zero(dim, 3);
  MatC y_00 = MatC::Zero(3, 3);  // assembled but unused beyond bookkeeping

  std::set<std::string> connected;
  auto row_of = [&](const std::string& id) -> int {
    if (id == slack_id) return -1;
    auto it = model.bus_index.find(id);
    if (it == model.bus_index.end()) {
      throw MalformedFeeder("branch references unknown bus: " + id);
    }
    return it->second;
  };

  for (const auto& br : feeder.at("branches")) {
    const std::string from = br.at("from").get<std::string>();
    const std::string to = br.at("to").get<std::string>();
    const MatC yb = parse_block3(br.at("y"));
    const int f = row_of(from);
    const int t = row_of(to);
    connected.insert(from);
    connected.insert(to);
    // Standard two-terminal stamp.
    auto self = [&](int b) -> void {
      if (b < 0) {
        y_00 += yb;
      } else {
        model.y_ll.block(3 * b, 3 * b, 3, 3) += yb;
      }
    };
    self(f);
    self(t);
    // Stamp of entry (row a, col b); slack rows fall outside the reduced
    // system and are dropped.
    auto mutual = [&](int a, int b) -> void {
      if (a < 0) return;
      if (b < 0) {
        model.y_l0.block(3 * a, 0, 3, 3) -= yb;
      } else {
        model.y_ll.block(3 * a, 3 * b, 3, 3) -= yb;
      }
    };
    mutual(f, t);
    mutual(t, f);
  }

  for (const auto& id : model.bus_ids) {
    if (!connected.count(id)) {
      throw MalformedFeeder("bus has no connection: " + id);
    }
  }
  if (!connected.count(slack_id)) {
    throw MalformedFeeder("slack bus has no connection");
  }

  Eigen::FullPivLU<MatC> lu(model.y_ll);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw SingularAdmittance("y_ll is singular (island or zero-impedance loop)");
  }
  model.z = lu.inverse();
  model.w = -model.z * (model.y_l0 * model.v0);
  model.h = build_h(model.n_buses);
  return model;
}

NetworkModel load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedFeeder("cannot open feeder file: " + path);
  nlohmann::json j;
  in >> j;
  return build_network(j);
}

VecC injection_map(const VecC& v, const Injection& inj,
                   const NetworkModel& model) {
  const int dim = model.dim();
  VecC i_inj = VecC::Zero(dim);
  for (int k = 0; k < dim; ++k) {
    if (inj.s_wye(k) != 0.0) {
      if (std::abs(v(k)) < 1e-12) {
        throw DegenerateVoltage("zero voltage magnitude at node-phase " +
                                std::to_string(k));
      }
      i_inj(k) += std::conj(inj.s_wye(k) / v(k));
    }
  }
  if (inj.s_delta.cwiseAbs().maxCoeff() > 0.0) {
    const VecC hv = model.h * v;
    VecC i_delta(dim);
    for (int k = 0; k < dim; ++k) {
      if (inj.s_delta(k) != 0.0) {
        if (std::abs(hv(k)) < 1e-12) {
          throw DegenerateVoltage("zero phase-to-phase voltage at entry " +
                                  std::to_string(k));
        }
        i_delta(k) = std::conj(inj.s_delta(k) / hv(k));
      } else {
        i_delta(k) = 0.0;
      }
    }
    i_inj += model.h.transpose() * i_delta;
  }
  return i_inj;
}

PowerFlowSolution solve_power_flow(const Injection& inj,
                                   const NetworkModel& model,
                                   const VecC* warm_start, double tol,
                                   int max_iter) {
  PowerFlowSolution sol;
  VecC v = warm_start ? *warm_start : model.w;
  double best_res = std::numeric_limits<double>::infinity();
  VecC best_v = v;
  for (int it = 1; it <= max_iter; ++it) {
    VecC vn;
    try {
      vn = model.z * injection_map(v, inj, model) + model.w;
    } catch (const DegenerateVoltage&) {
      break;  // diverged into a degenerate iterate
    }
    const double res = (vn - v).cwiseAbs().maxCoeff();
    sol.iterations = it;
    if (!vn.allFinite()) break;
    v = vn;
    if (res < best_res) {
      best_res = res;
      best_v = v;
    }
    if (res <= tol) {
      sol.v = v;
      sol.residual = res;
      sol.converged = true;
      const VecC hv = model.h * sol.v;
      sol.i_delta = VecC::Zero(model.dim());
      for (int k = 0; k < model.dim(); ++k) {
        if (inj.s_delta(k) != 0.0) {
          sol.i_delta(k) = std::conj(inj.s_delta(k) / hv(k));
        }
      }
      return sol;
    }
  }
  sol.v = best_v;
  sol.residual = best_res;
  sol.converged = false;
  sol.i_delta = VecC::Zero(model.dim());
  return sol;
}

double pf_mismatch(const VecC& v, const Injection& inj,
                   const NetworkModel& model) {
  const int dim = model.dim();
  const VecC i = model.y_l0 * model.v0 + model.y_ll * v;
  const VecC hv = model.h * v;
  VecC i_delta = VecC::Zero(dim);
  for (int k = 0; k < dim; ++k) {
    if (inj.s_delta(k) != 0.0) i_delta(k) = std::conj(inj.s_delta(k) / hv(k));
  }
  // diag(H^T conj(i_delta)) v + s_wye - diag(v) conj(i)
  const VecC ht_id = model.h.transpose() * i_delta.conjugate();
  const VecC mism = ht_id.cwiseProduct(v) + inj.s_wye - v.cwiseProduct(i.conjugate());
  return mism.cwiseAbs().maxCoeff();
}

double voltage_violation_step(const VecC& v, const NetworkModel& model,
                              VecR* g_v) {
  const int dim = model.dim();
  double best = 0.0;
  int best_k = -1;
  double best_sign = 0.0;
  for (int k = 0; k < dim; ++k) {
    const double mag = std::abs(v(k));
    const double e = pos(mag - model.v_max) + pos(model.v_min - mag);
    if (e > best) {  // lowest-index maximiser wins ties
      best = e;
      best_k = k;
      best_sign = mag > model.v_max ? 1.0 : -1.0;
    }
  }
  if (g_v) {
    *g_v = VecR::Zero(2 * dim);
    if (best_k >= 0) {
      const double mag = std::abs(v(best_k));
      if (mag > 0.0) {
        (*g_v)(best_k) = best_sign * v(best_k).real() / mag;
        (*g_v)(dim + best_k) = best_sign * v(best_k).imag() / mag;
      }
    }
  }
  return best;
}

double voltage_violation(const std::vector<PowerFlowSolution>& solutions,
                         const NetworkModel& model, int n_agents) {
  const double t_steps = static_cast<double>(solutions.size());
  double sum = 0.0;
  for (const auto& sol : solutions) {
    sum += voltage_violation_step(sol.v, model);
  }
  const double denom =
      0.5 * (model.v_max - model.v_min) * t_steps / static_cast<double>(n_agents);
  return sum / denom;
}

SensitivityResult voltage_sensitivity(const PowerFlowSolution& solution,
                                      const Injection& inj,
                                      const NetworkModel& model,
                                      const VecR& g_v,
                                      const SensitivityOptions& opts) {
  const int dim = model.dim();
  SensitivityResult res;
  res.grad_wye = VecR::Zero(2 * dim);
  if (g_v.cwiseAbs().maxCoeff() == 0.0) {
    res.converged = true;
    return res;
  }

  // Phi(v, s) = Z i_inj(v, s) + w is antilinear in conj(v):
  //   dPhi = Z (diag(A) + H^T diag(B) H) conj(dv)
  // with A = -conj(s_wye) ./ conj(v)^2, B = -conj(s_delta) ./ conj(H v)^2.
  // The real-stacked transpose of an antilinear map M conj(.) is M^T conj(.),
  // so (dPhi/dv)^T gamma = (diag(A) + H^T diag(B) H) Z^T conj(gamma).
  const VecC& v = solution.v;
  const VecC hv = model.h * v;
  VecC a(dim), b(dim);
  for (int k = 0; k < dim; ++k) {
    const Complex vk = std::conj(v(k));
    a(k) = inj.s_wye(k) == 0.0 ? Complex(0) : -std::conj(inj.s_wye(k)) / (vk * vk);
    const Complex uk = std::conj(hv(k));
    b(k) = inj.s_delta(k) == 0.0 ? Complex(0)
                                 : -std::conj(inj.s_delta(k)) / (uk * uk);
  }
  const MatC zt = model.z.transpose();

  auto apply = [&](const VecR& x) -> VecR {
    const VecC xc = unstack_ri(x);
    const VecC u = zt * xc.conjugate();
    VecC jt = a.cwiseProduct(u);
    jt += model.h.transpose() * (b.cwiseProduct(model.h * u));
    return x - stack_ri(jt);
  };

  KrylovResult lin;
  if (opts.direct) {
    lin = dense_solve(apply, g_v);
  } else {
    const int max_iter = opts.max_iter > 0 ? opts.max_iter : 4 * dim;
    lin = bicgstab(apply, g_v, opts.tol, max_iter);
  }
  res.iterations = lin.iterations;
  if (!lin.converged || !lin.x.allFinite()) {
    return res;  // zero sensitivity, converged = false
  }

  // (dPhi/ds_wye)^T gamma = diag(1 ./ conj(v)) Z^T conj(gamma)
  const VecC gamma = unstack_ri(lin.x);
  const VecC u = zt * gamma.conjugate();
  const VecC grad = u.cwiseQuotient(v.conjugate());
  res.grad_wye = stack_ri(grad);
  res.converged = true;
  return res;
}

}  // namespace gradmap::feeder

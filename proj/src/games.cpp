#include "coalloc/games.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <functional>
#include <thread>

namespace coalloc::games {

using solver::kInf;
using solver::LinExpr;
using solver::Model;
using solver::Status;
using solver::Var;

ValueOracle::ValueOracle(const CaseData& cs, OracleOptions opt) : cs_(cs), opt_(std::move(opt)) {}

ValueOracle::Entry& ValueOracle::entry(Coalition c) {
  {
    std::lock_guard lk(mu_);
    auto it = entries_.find(c.mask);
    if (it != entries_.end()) return it->second;
  }
  Entry e;
  e.sol = preemptive::solve_preemptive(cs_, c, opt_.pre);
  if (e.sol.via_milp) {
    // Certify the embedded stages against conditional re-solves; the balancing
    // re-solves double as the price-carrying outcomes the MILP cannot provide.
    auto rep =
        preemptive::verify_bilevel_consistency(cs_, e.sol, opt_.consistency_tol, opt_.pre.solve);
    if (!rep.consistent)
      throw GameError("cost of coalition {" + cs_.coalition_string(c) +
                      "} failed the conditional re-clear check");
    e.seq.balancing = std::move(rep.recleared.balancing);
  } else {
    e.seq.balancing = e.sol.balancing;
  }
  e.seq.reserve = e.sol.reserve;
  e.seq.day_ahead = e.sol.day_ahead;
  e.seq.expected_cost = e.seq.reserve.cost + e.seq.day_ahead.cost;
  for (size_t s = 0; s < cs_.scenarios.size(); ++s)
    e.seq.expected_cost += cs_.scenarios[s].probability * e.seq.balancing[s].cost;
  std::lock_guard lk(mu_);
  auto [it, inserted] = entries_.emplace(c.mask, std::move(e));
  if (inserted && it->second.sol.via_milp) ++milp_solves_;
  return it->second;
}

double ValueOracle::cost_empty() { return entry(Coalition::empty()).seq.expected_cost; }

double ValueOracle::scenario_cost_empty(int s) {
  return entry(Coalition::empty()).seq.scenario_cost(s);
}

double ValueOracle::cost(Coalition c) { return entry(c).seq.expected_cost; }

double ValueOracle::scenario_cost(Coalition c, int s) { return entry(c).seq.scenario_cost(s); }

double ValueOracle::value(Coalition c) {
  {
    std::lock_guard lk(mu_);
    auto it = values_.find(c.mask);
    if (it != values_.end()) return it->second;
  }
  double v = 0.0;
  // A coalition with no renegotiable link leaves every floor unchanged.
  if (c.size() > 1 && !cs_.internal_links(c).empty()) v = cost_empty() - cost(c);
  put_value(c, v);
  std::lock_guard lk(mu_);
  return values_.at(c.mask);
}

double ValueOracle::scenario_value(Coalition c, int s) {
  if (c.size() <= 1 || cs_.internal_links(c).empty()) return 0.0;
  return scenario_cost_empty(s) - scenario_cost(c, s);
}

const preemptive::PreemptiveSolution& ValueOracle::solution(Coalition c) { return entry(c).sol; }

const markets::SequentialOutcome& ValueOracle::outcome(Coalition c) { return entry(c).seq; }

void ValueOracle::put_value(Coalition c, double v) {
  std::lock_guard lk(mu_);
  values_.emplace(c.mask, v);  // first write wins
}

bool ValueOracle::has_value(Coalition c) const {
  std::lock_guard lk(mu_);
  return values_.count(c.mask) > 0;
}

std::map<std::uint32_t, double> ValueOracle::known_values() const {
  std::lock_guard lk(mu_);
  return values_;
}

namespace {

void parallel_masks(std::size_t total, int threads, const std::function<void(std::uint32_t)>& fn) {
  if (threads <= 1) {
    for (std::uint32_t m = 0; m < total; ++m) fn(m);
    return;
  }
  std::atomic<std::uint32_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex fail_mu;
  int workers = std::min<int>(threads, (int)total);
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        std::uint32_t m = next.fetch_add(1);
        if (m >= total) return;
        try {
          fn(m);
        } catch (...) {
          std::lock_guard lk(fail_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

ValueTable enumerate_expected(ValueOracle& o, int threads) {
  std::size_t total = std::size_t{1} << o.n_areas();
  ValueTable t{o.n_areas(), std::vector<double>(total, 0.0)};
  parallel_masks(total, threads, [&](std::uint32_t m) { (void)o.value(Coalition{m}); });
  for (std::uint32_t m = 0; m < total; ++m) t.v[m] = o.value(Coalition{m});
  return t;
}

ValueTable enumerate_scenario(ValueOracle& o, int s, int threads) {
  std::size_t total = std::size_t{1} << o.n_areas();
  ValueTable t{o.n_areas(), std::vector<double>(total, 0.0)};
  parallel_masks(total, threads, [&](std::uint32_t m) { (void)o.scenario_value(Coalition{m}, s); });
  for (std::uint32_t m = 0; m < total; ++m) t.v[m] = o.scenario_value(Coalition{m}, s);
  return t;
}

std::vector<double> shapley(const ValueTable& t) {
  int n = t.n;
  std::vector<double> fact(n + 1, 1.0);
  for (int i = 1; i <= n; ++i) fact[i] = fact[i - 1] * i;
  std::vector<double> weight(n, 0.0);  // by |S| for S not containing the player
  for (int s = 0; s < n; ++s) weight[s] = fact[s] * fact[n - 1 - s] / fact[n];
  std::vector<double> phi(n, 0.0);
  std::uint32_t full = Coalition::all(n).mask;
  for (int a = 0; a < n; ++a) {
    std::uint32_t bit = 1u << a;
    for (std::uint32_t m = 0; m <= full; ++m) {
      if (m & bit) continue;
      phi[a] += weight[std::popcount(m)] * (t.v[m | bit] - t.v[m]);
    }
  }
  return phi;
}

std::vector<double> equal_shares(const ValueTable& t) {
  return std::vector<double>(t.n, t.grand() / t.n);
}

std::vector<double> marginal_contributions(const ValueTable& t) {
  std::uint32_t full = Coalition::all(t.n).mask;
  std::vector<double> mc(t.n, 0.0);
  for (int a = 0; a < t.n; ++a) mc[a] = t.grand() - t.v[full & ~(1u << a)];
  return mc;
}

double excess(const ValueTable& t, const std::vector<double>& beta, Coalition c) {
  double paid = 0.0;
  for (int a = 0; a < t.n; ++a)
    if (c.contains(a)) paid += beta[a];
  return t(c) - paid;
}

double max_excess(const ValueTable& t, const std::vector<double>& beta, Coalition* arg) {
  std::uint32_t full = Coalition::all(t.n).mask;
  double worst = -kInf;
  Coalition at;
  for (std::uint32_t m = 1; m < full; ++m) {
    double e = excess(t, beta, Coalition{m});
    if (e > worst) {
      worst = e;
      at = Coalition{m};
    }
  }
  if (arg) *arg = at;
  return worst;
}

bool in_core(const ValueTable& t, const std::vector<double>& beta, double tol) {
  double sum = 0.0;
  for (double b : beta) sum += b;
  if (std::abs(sum - t.grand()) > tol) return false;
  return max_excess(t, beta, nullptr) <= tol;
}

namespace {

struct MasterOut {
  double eps = 0.0;
  std::vector<double> beta;
};

// min eps over (optionally nonnegative) budget-balanced allocations subject to
// sum_{a in C} beta_a >= v(C) - eps for each known coalition, then among the
// eps-optimal allocations pick the closest one to `ref` (diagonal QP).
MasterOut master_step(int n, double v_all, const std::vector<std::pair<std::uint32_t, double>>& family,
                      const std::vector<double>& ref, bool clamp, const solver::SolveOptions& lp) {
  Model m;
  std::vector<Var> beta(n);
  for (int a = 0; a < n; ++a)
    beta[a] = m.add_var("beta_" + std::to_string(a), clamp ? 0.0 : -kInf, kInf);
  Var eps = m.add_var("eps", clamp ? 0.0 : -kInf, kInf, 1.0);
  LinExpr eff;
  for (int a = 0; a < n; ++a) eff.add(beta[a], 1.0);
  m.add_eq("budget", eff, v_all);
  int k = 0;
  for (auto& [mask, val] : family) {
    LinExpr row;
    for (int a = 0; a < n; ++a)
      if (mask & (1u << a)) row.add(beta[a], 1.0);
    row.add(eps, 1.0);
    m.add_ge("cut_" + std::to_string(k++), row, val);
  }
  auto r1 = m.solve(lp);
  if (!r1.ok()) throw GameError("least-core master LP: " + solver::to_string(r1.status));
  double eps_hat = r1.value(eps);

  Model q;
  std::vector<Var> b2(n);
  for (int a = 0; a < n; ++a) {
    b2[a] = q.add_var("beta_" + std::to_string(a), clamp ? 0.0 : -kInf, kInf,
                      -2.0 * (a < (int)ref.size() ? ref[a] : 0.0));
    q.add_quad_obj(b2[a], 2.0);  // beta^2 - 2 ref beta
  }
  LinExpr eff2;
  for (int a = 0; a < n; ++a) eff2.add(b2[a], 1.0);
  q.add_eq("budget", eff2, v_all);
  k = 0;
  for (auto& [mask, val] : family) {
    LinExpr row;
    for (int a = 0; a < n; ++a)
      if (mask & (1u << a)) row.add(b2[a], 1.0);
    // tiny relaxation so the frozen eps cannot render the QP infeasible
    q.add_ge("cut_" + std::to_string(k++), row, val - eps_hat - 1e-9 * std::max(1.0, std::abs(val)));
  }
  auto r2 = q.solve(lp);
  if (!r2.ok()) throw GameError("least-core tie-break QP: " + solver::to_string(r2.status));
  MasterOut out;
  out.eps = eps_hat;
  out.beta.resize(n);
  for (int a = 0; a < n; ++a) out.beta[a] = r2.value(b2[a]);
  return out;
}

}  // namespace

LeastCoreResult least_core_select(ValueOracle& o, const LeastCoreOptions& opt) {
  int n = o.n_areas();
  Coalition grand = o.grand();
  double v_all = o.value(grand);
  double j_empty = o.cost_empty();
  std::vector<double> ref = opt.reference;
  if (ref.empty()) ref.assign(n, v_all / n);
  if ((int)ref.size() != n) throw GameError("reference allocation has wrong length");

  std::vector<std::pair<std::uint32_t, double>> family;
  auto add_cut = [&](Coalition c, double v) {
    if (c.mask == 0 || c.mask == grand.mask) return false;
    for (auto& [mask, val] : family)
      if (mask == c.mask) {
        if (v > val + 1e-9) {  // raise a stale bound rather than stalling
          val = v;
          return true;
        }
        return false;
      }
    family.emplace_back(c.mask, v);
    return true;
  };
  if (opt.marginal_init)
    for (int a = 0; a < n; ++a) {
      Coalition c = grand.without(a);
      add_cut(c, o.value(c));
    }

  LeastCoreResult out;
  for (int k = 1; k <= opt.max_iters; ++k) {
    MasterOut ms = master_step(n, v_all, family, ref, true, opt.lp);
    auto sep = preemptive::solve_separation(o.data(), ms.beta, j_empty, o.options().pre);
    o.put_value(sep.coalition, sep.value);
    out.iterations.push_back({k, ms.eps, sep.eta, sep.coalition, sep.value, ms.beta});
    out.eps = ms.eps;
    out.beta = ms.beta;
    if (sep.eta <= ms.eps + opt.cg_tol) {
      out.converged = true;
      break;
    }
    if (!add_cut(sep.coalition, sep.value))
      throw GameError("separation stalled on coalition " +
                      o.data().coalition_string(sep.coalition));
  }
  return out;
}

LeastCoreResult least_core_master(const ValueTable& t, const std::vector<double>& reference,
                                  const solver::SolveOptions& lp) {
  int n = t.n;
  std::uint32_t full = Coalition::all(n).mask;
  std::vector<double> ref = reference;
  if (ref.empty()) ref.assign(n, t.grand() / n);
  std::vector<std::pair<std::uint32_t, double>> family;
  family.reserve(full - 1);
  for (std::uint32_t m = 1; m < full; ++m) family.emplace_back(m, t.v[m]);
  MasterOut ms = master_step(n, t.grand(), family, ref, true, lp);
  LeastCoreResult out;
  out.converged = true;
  out.eps = ms.eps;
  out.beta = ms.beta;
  return out;
}

double least_core_eps(const ValueTable& t, const solver::SolveOptions& lp) {
  int n = t.n;
  std::uint32_t full = Coalition::all(n).mask;
  std::vector<std::pair<std::uint32_t, double>> family;
  family.reserve(full - 1);
  for (std::uint32_t m = 1; m < full; ++m) family.emplace_back(m, t.v[m]);
  std::vector<double> ref(n, t.grand() / n);
  return master_step(n, t.grand(), family, ref, false, lp).eps;
}

NucleolusResult nucleolus(const ValueTable& t, const solver::SolveOptions& lp) {
  int n = t.n;
  NucleolusResult out;
  out.beta.assign(n, 0.0);
  if (n == 1) {
    out.beta[0] = t.grand();
    return out;
  }
  std::uint32_t full = Coalition::all(n).mask;
  double scale = 1.0;
  for (std::uint32_t m = 1; m <= full; ++m) scale = std::max(scale, std::abs(t.v[m]));
  const double tol = 1e-7 * scale;

  std::vector<std::uint32_t> free_masks;
  for (std::uint32_t m = 1; m < full; ++m) free_masks.push_back(m);
  std::vector<std::pair<std::uint32_t, double>> fixed;  // mask -> excess level

  auto coalition_row = [&](const std::vector<Var>& beta, std::uint32_t mask) {
    LinExpr row;
    for (int a = 0; a < n; ++a)
      if (mask & (1u << a)) row.add(beta[a], 1.0);
    return row;
  };

  while (!free_masks.empty()) {
    ++out.stages;
    Model m;
    std::vector<Var> beta(n);
    for (int a = 0; a < n; ++a) beta[a] = m.add_var("beta_" + std::to_string(a), -kInf, kInf);
    Var eps = m.add_var("eps", -kInf, kInf, 1.0);
    LinExpr eff;
    for (int a = 0; a < n; ++a) eff.add(beta[a], 1.0);
    m.add_eq("budget", eff, t.grand());
    for (auto& [mask, lvl] : fixed)
      m.add_eq("fix_" + std::to_string(mask), coalition_row(beta, mask), t.v[mask] - lvl);
    for (std::uint32_t mask : free_masks) {
      LinExpr row = coalition_row(beta, mask);
      row.add(eps, 1.0);
      m.add_ge("exc_" + std::to_string(mask), row, t.v[mask]);
    }
    auto r = m.solve(lp);
    if (!r.ok()) throw GameError("excess-minimization stage LP: " + solver::to_string(r.status));
    double eps_s = r.value(eps);
    if (out.stages == 1) out.max_excess = eps_s;
    for (int a = 0; a < n; ++a) out.beta[a] = r.value(beta[a]);

    // A coalition's excess level is settled at this stage iff its constraint is
    // binding in every optimum: probe by maximizing its payment at frozen eps.
    std::vector<std::uint32_t> still_free;
    bool settled_any = false;
    for (std::uint32_t mask : free_masks) {
      double paid = 0.0;
      for (int a = 0; a < n; ++a)
        if (mask & (1u << a)) paid += out.beta[a];
      if (paid + eps_s - t.v[mask] > tol) {  // slack here, so slack in some optimum
        still_free.push_back(mask);
        continue;
      }
      Model c;
      std::vector<Var> b2(n);
      for (int a = 0; a < n; ++a) b2[a] = c.add_var("beta_" + std::to_string(a), -kInf, kInf);
      LinExpr obj;
      for (int a = 0; a < n; ++a)
        if (mask & (1u << a)) obj.add(b2[a], -1.0);
      c.add_obj(obj);
      LinExpr eff2;
      for (int a = 0; a < n; ++a) eff2.add(b2[a], 1.0);
      c.add_eq("budget", eff2, t.grand());
      for (auto& [fm, lvl] : fixed)
        c.add_eq("fix_" + std::to_string(fm), coalition_row(b2, fm), t.v[fm] - lvl);
      for (std::uint32_t om : free_masks)
        c.add_ge("exc_" + std::to_string(om), coalition_row(b2, om), t.v[om] - eps_s);
      auto rc = c.solve(lp);
      if (rc.status == Status::Unbounded) {
        still_free.push_back(mask);
        continue;
      }
      if (!rc.ok()) throw GameError("excess certification LP: " + solver::to_string(rc.status));
      double best_paid = -rc.objective;
      if (best_paid + eps_s - t.v[mask] <= tol) {
        fixed.emplace_back(mask, eps_s);
        settled_any = true;
      } else {
        still_free.push_back(mask);
      }
    }
    if (!settled_any) throw GameError("excess-minimization certification stalled");
    free_masks = std::move(still_free);

    // Stop once the settled equality system pins the allocation.
    bool unique = true;
    for (int a = 0; a < n && unique; ++a) {
      double lo = 0.0, hi = 0.0;
      for (int dir = 0; dir < 2 && unique; ++dir) {
        Model p;
        std::vector<Var> b2(n);
        for (int i = 0; i < n; ++i) b2[i] = p.add_var("beta_" + std::to_string(i), -kInf, kInf);
        p.set_obj(b2[a], dir == 0 ? 1.0 : -1.0);
        LinExpr eff2;
        for (int i = 0; i < n; ++i) eff2.add(b2[i], 1.0);
        p.add_eq("budget", eff2, t.grand());
        for (auto& [fm, lvl] : fixed)
          p.add_eq("fix_" + std::to_string(fm), coalition_row(b2, fm), t.v[fm] - lvl);
        auto rp = p.solve(lp);
        if (rp.status == Status::Unbounded) {
          unique = false;
          break;
        }
        if (!rp.ok()) throw GameError("uniqueness probe LP: " + solver::to_string(rp.status));
        (dir == 0 ? lo : hi) = rp.value(b2[a]);
      }
      if (unique && std::abs(hi - lo) > tol) unique = false;
    }
    if (unique) break;
  }
  return out;
}

std::vector<double> scenario_split(const std::vector<double>& beta, double v_all, double vs_all) {
  std::vector<double> out(beta.size(), 0.0);
  if (std::abs(v_all) < 1e-12) return out;
  double f = vs_all / v_all;
  for (std::size_t a = 0; a < beta.size(); ++a) out[a] = beta[a] * f;
  return out;
}

Diagnostics diagnose(const ValueTable& expected, const std::vector<ValueTable>& per_scenario,
                     const solver::SolveOptions& lp) {
  Diagnostics d;
  int n = expected.n;
  std::uint32_t full = Coalition::all(n).mask;
  double scale = 1.0;
  for (std::uint32_t m = 0; m <= full; ++m) scale = std::max(scale, std::abs(expected.v[m]));
  const double tol = 1e-6 * scale;

  for (int a = 0; a < n; ++a) {
    std::uint32_t bit = 1u << a;
    bool dummy = true, veto = true;
    for (std::uint32_t m = 0; m <= full; ++m) {
      if (m & bit) continue;
      if (std::abs(expected.v[m | bit] - expected.v[m]) > tol) dummy = false;
      if (std::abs(expected.v[m]) > tol) veto = false;
    }
    if (dummy) d.dummy_areas.push_back(a);
    if (veto) d.veto_areas.push_back(a);
  }
  for (std::uint32_t m = 0; m <= full && d.monotone; ++m)
    for (int a = 0; a < n; ++a) {
      std::uint32_t bit = 1u << a;
      if (m & bit) continue;
      if (expected.v[m | bit] < expected.v[m] - tol) {
        d.monotone = false;
        break;
      }
    }
  for (std::uint32_t m = 0; m <= full && d.supermodular; ++m)
    for (int a = 0; a < n && d.supermodular; ++a) {
      std::uint32_t ba = 1u << a;
      if (m & ba) continue;
      for (int b = a + 1; b < n; ++b) {
        std::uint32_t bb = 1u << b;
        if (m & bb) continue;
        // adding a must help at least as much in the presence of b
        if (expected.v[m | ba | bb] - expected.v[m | bb] <
            expected.v[m | ba] - expected.v[m] - tol) {
          d.supermodular = false;
          break;
        }
      }
    }
  d.least_core_radius = least_core_eps(expected, lp);
  d.core_nonempty = d.least_core_radius <= tol;
  for (int s = 0; s < (int)per_scenario.size(); ++s) {
    const ValueTable& ts = per_scenario[s];
    double g = ts.grand();
    for (std::uint32_t m = 1; m < full; ++m)
      if (ts.v[m] > g + tol) {
        d.blocking_scenarios.push_back(s);
        break;
      }
  }
  return d;
}

}  // namespace coalloc::games

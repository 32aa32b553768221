// Command-line driver: validate cases, clear the sequential markets, solve the
// preemptive share reallocation, enumerate coalition values, and compute
// benefit allocations. All outputs are deterministic CSV/JSON files.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "coalloc/games.hpp"
#include "coalloc/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace coalloc;

std::string fmt(double x, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, x);
  std::string s = buf;
  if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

void write_text(const fs::path& p, const std::string& body) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << body;
}

struct SolveFlags {
  double mip_gap = 1e-6;
  double time_limit = 0.0;
  double price_cap = 0.0;
  double comp_tol = 1e-4;
  int retries = 3;
  int threads = 1;
  bool log = false;
  std::string lp_export;

  preemptive::PreemptiveOptions pre() const {
    preemptive::PreemptiveOptions o;
    o.solve.mip_rel_gap = mip_gap;
    o.solve.time_limit = time_limit;
    o.solve.log = log;
    o.solve.lp_export = lp_export;
    o.price_cap = price_cap;
    o.comp_tol = comp_tol;
    o.max_bigm_retries = retries;
    return o;
  }
  solver::SolveOptions lp() const { return pre().solve; }
};

void add_solver_flags(CLI::App* c, SolveFlags& f) {
  c->add_option("--mip-gap", f.mip_gap, "relative MIP optimality gap")->capture_default_str();
  c->add_option("--time-limit", f.time_limit, "per-solve time limit in seconds (0 = none)")
      ->capture_default_str();
  c->add_option("--price-cap", f.price_cap,
                "dual price cap for the disjunctive linearization (0 = derive from data)")
      ->capture_default_str();
  c->add_option("--comp-tol", f.comp_tol, "tolerated complementarity residual")
      ->capture_default_str();
  c->add_option("--retries", f.retries, "price-cap escalations before giving up")
      ->capture_default_str();
  c->add_option("--threads", f.threads, "worker threads for coalition enumeration")
      ->capture_default_str();
  c->add_flag("--solver-log", f.log, "let the backend solver print its log");
  c->add_option("--lp-export", f.lp_export, "write each solved model to this path (LP format)");
}

CaseData load_checked(const std::string& path) {
  CaseData cs = load_case(path);
  validate_case(cs);
  return cs;
}

std::vector<double> parse_chi(const CaseData& cs, const std::string& spec) {
  if (spec.empty()) return cs.existing_chi;
  std::vector<double> chi;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      chi.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw CaseError("bad share value '" + tok + "' in --chi");
    }
  }
  if (chi.size() != cs.links.size())
    throw CaseError("--chi needs " + std::to_string(cs.links.size()) +
                    " comma-separated values (one per link, in case order)");
  for (double& v : chi) {
    if (v < -1e-9 || v > 1.0 + 1e-9) throw CaseError("--chi values must lie in [0,1]");
    v = std::min(1.0, std::max(0.0, v));
  }
  return chi;
}

// ---- CSV builders ----------------------------------------------------------

std::string costs_csv(const CaseData& cs, const markets::SequentialOutcome& o) {
  std::ostringstream s;
  s << "metric,scenario,value\n";
  s << "reserve,," << fmt(o.reserve.cost) << "\n";
  s << "day_ahead,," << fmt(o.day_ahead.cost) << "\n";
  for (size_t k = 0; k < o.balancing.size(); ++k)
    s << "balancing," << cs.scenarios[k].id << "," << fmt(o.balancing[k].cost) << "\n";
  for (size_t k = 0; k < o.balancing.size(); ++k)
    s << "total," << cs.scenarios[k].id << "," << fmt(o.scenario_cost((int)k)) << "\n";
  s << "expected,," << fmt(o.expected_cost) << "\n";
  return s.str();
}

std::string area_costs_csv(const CaseData& cs, const markets::SurplusTable& t) {
  std::ostringstream s;
  s << "area,scenario,cost\n";
  for (size_t a = 0; a < cs.areas.size(); ++a) {
    double exp = 0.0;
    for (size_t k = 0; k < cs.scenarios.size(); ++k) {
      double c = t.area_scenario_cost((int)a, (int)k);
      exp += cs.scenarios[k].probability * c;
      s << cs.areas[a].id << "," << cs.scenarios[k].id << "," << fmt(c) << "\n";
    }
    s << cs.areas[a].id << ",expected," << fmt(exp) << "\n";
  }
  return s.str();
}

void surplus_rows(std::ostringstream& s, const CaseData& cs, const std::string& floor,
                  const std::string& scenario, const markets::FloorSurplus& f) {
  s << floor << "," << scenario << ",cost,," << fmt(f.floor_cost) << "\n";
  for (size_t a = 0; a < cs.areas.size(); ++a) {
    const std::string& id = cs.areas[a].id;
    s << floor << "," << scenario << ",consumer," << id << "," << fmt(f.cs[a]) << "\n";
    s << floor << "," << scenario << ",producer," << id << "," << fmt(f.ps[a]) << "\n";
    s << floor << "," << scenario << ",congestion," << id << "," << fmt(f.cr[a]) << "\n";
    s << floor << "," << scenario << ",total," << id << "," << fmt(f.area_total((int)a)) << "\n";
  }
}

std::string surpluses_csv(const CaseData& cs, const markets::SurplusTable& t) {
  std::ostringstream s;
  s << "floor,scenario,component,area,value\n";
  surplus_rows(s, cs, "reserve", "", t.reserve);
  surplus_rows(s, cs, "day_ahead", "", t.day_ahead);
  for (size_t k = 0; k < t.balancing.size(); ++k)
    surplus_rows(s, cs, "balancing", cs.scenarios[k].id, t.balancing[k]);
  return s.str();
}

std::string dispatch_csv(const CaseData& cs, const markets::SequentialOutcome& o) {
  std::ostringstream s;
  s << "stage,scenario,kind,id,value\n";
  for (size_t i = 0; i < cs.gens.size(); ++i)
    if (cs.gens[i].flexible) {
      s << "reserve,,r_up," << cs.gens[i].id << "," << fmt(o.reserve.r_up[i]) << "\n";
      s << "reserve,,r_dn," << cs.gens[i].id << "," << fmt(o.reserve.r_dn[i]) << "\n";
    }
  for (size_t e = 0; e < cs.links.size(); ++e) {
    s << "reserve,,x_up," << cs.links[e].id << "," << fmt(o.reserve.x_up[e]) << "\n";
    s << "reserve,,x_dn," << cs.links[e].id << "," << fmt(o.reserve.x_dn[e]) << "\n";
  }
  for (size_t i = 0; i < cs.gens.size(); ++i)
    s << "day_ahead,,p," << cs.gens[i].id << "," << fmt(o.day_ahead.p[i]) << "\n";
  for (size_t j = 0; j < cs.wind.size(); ++j)
    s << "day_ahead,,w," << cs.wind[j].id << "," << fmt(o.day_ahead.w[j]) << "\n";
  for (size_t l = 0; l < cs.lines.size(); ++l)
    s << "day_ahead,,f," << cs.lines[l].id << "," << fmt(o.day_ahead.flow[l]) << "\n";
  for (size_t n = 0; n < cs.nodes.size(); ++n)
    s << "day_ahead,,price," << cs.nodes[n].id << "," << fmt(o.day_ahead.price[n]) << "\n";
  for (const auto& b : o.balancing) {
    const std::string& sid = cs.scenarios[b.scenario].id;
    for (size_t i = 0; i < cs.gens.size(); ++i)
      if (cs.gens[i].flexible) {
        s << "balancing," << sid << ",up," << cs.gens[i].id << "," << fmt(b.up[i]) << "\n";
        s << "balancing," << sid << ",dn," << cs.gens[i].id << "," << fmt(b.dn[i]) << "\n";
      }
    for (size_t j = 0; j < cs.wind.size(); ++j)
      s << "balancing," << sid << ",spill," << cs.wind[j].id << "," << fmt(b.spill[j])
        << "\n";
    for (size_t n = 0; n < cs.nodes.size(); ++n)
      if (b.shed[n] > 1e-9)
        s << "balancing," << sid << ",shed," << cs.nodes[n].id << "," << fmt(b.shed[n]) << "\n";
    for (size_t l = 0; l < cs.lines.size(); ++l)
      s << "balancing," << sid << ",f," << cs.lines[l].id << "," << fmt(b.flow[l]) << "\n";
  }
  return s.str();
}

std::string chi_csv(const CaseData& cs, const std::vector<double>& chosen) {
  std::ostringstream s;
  s << "link,existing,chosen\n";
  for (size_t e = 0; e < cs.links.size(); ++e)
    s << cs.links[e].id << "," << fmt(cs.existing_chi[e]) << "," << fmt(chosen[e]) << "\n";
  return s.str();
}

// ---- commands --------------------------------------------------------------

void check_budget_balance(const CaseData& cs, const markets::SurplusTable& t) {
  auto check = [&](const markets::FloorSurplus& f, const std::string& what) {
    double sum = 0.0;
    for (size_t a = 0; a < cs.areas.size(); ++a) sum += f.area_total((int)a);
    if (std::abs(sum + f.floor_cost) > 1e-4)
      throw std::runtime_error("settlement of the " + what + " floor is not budget-balanced (" +
                               fmt(sum) + " vs cost " + fmt(f.floor_cost) + ")");
  };
  check(t.reserve, "reserve");
  check(t.day_ahead, "day-ahead");
  for (size_t k = 0; k < t.balancing.size(); ++k)
    check(t.balancing[k], "balancing[" + cs.scenarios[k].id + "]");
}

void cmd_validate(const std::string& path) {
  CaseData cs = load_checked(path);
  int flex = 0;
  for (auto& g : cs.gens) flex += g.flexible ? 1 : 0;
  int ties = 0;
  for (size_t l = 0; l < cs.lines.size(); ++l) ties += cs.is_tie((int)l) ? 1 : 0;
  std::printf("case %s: %zu areas, %zu nodes, %zu lines (%d tie), %zu links, %zu generators (%d flexible), %zu wind farms, %zu scenarios\n",
              cs.name.c_str(), cs.areas.size(), cs.nodes.size(), cs.lines.size(), ties,
              cs.links.size(), cs.gens.size(), flex, cs.wind.size(),
              cs.scenarios.size());
  for (size_t a = 0; a < cs.areas.size(); ++a)
    std::printf("  %s: reserve requirement up %s / down %s MW\n", cs.areas[a].id.c_str(),
                fmt(cs.areas[a].rr_up, 2).c_str(), fmt(cs.areas[a].rr_dn, 2).c_str());
  std::printf("OK\n");
}

void print_costs(const CaseData& cs, const markets::SequentialOutcome& o) {
  std::printf("  reserve   %10s\n", fmt(o.reserve.cost, 1).c_str());
  std::printf("  day-ahead %10s\n", fmt(o.day_ahead.cost, 1).c_str());
  for (size_t k = 0; k < o.balancing.size(); ++k)
    std::printf("  balancing %10s  (%s, total %s)\n", fmt(o.balancing[k].cost, 1).c_str(),
                cs.scenarios[k].id.c_str(), fmt(o.scenario_cost((int)k), 1).c_str());
  std::printf("  expected  %10s\n", fmt(o.expected_cost, 1).c_str());
}

void cmd_clear(const std::string& path, const std::string& chi_spec, const std::string& coal_spec,
               const std::string& outdir, const SolveFlags& flags) {
  CaseData cs = load_checked(path);
  std::vector<double> chi = parse_chi(cs, chi_spec);
  Coalition regime = cs.parse_coalition(coal_spec);
  auto out = markets::run_sequential(cs, chi, regime, flags.lp());
  auto tbl = markets::decompose_surpluses(cs, out);
  check_budget_balance(cs, tbl);
  write_text(fs::path(outdir) / "costs.csv", costs_csv(cs, out));
  write_text(fs::path(outdir) / "area_costs.csv", area_costs_csv(cs, tbl));
  write_text(fs::path(outdir) / "surpluses.csv", surpluses_csv(cs, tbl));
  write_text(fs::path(outdir) / "dispatch.csv", dispatch_csv(cs, out));
  std::printf("cleared %s (regime %s, shares", cs.name.c_str(),
              cs.coalition_string(regime).c_str());
  for (size_t e = 0; e < chi.size(); ++e) std::printf(" %s=%s", cs.links[e].id.c_str(), fmt(chi[e], 4).c_str());
  std::printf(")\n");
  print_costs(cs, out);
  std::printf("wrote %s/{costs,area_costs,surpluses,dispatch}.csv\n", outdir.c_str());
}

void run_sweep(const CaseData& cs, Coalition coalition, const std::string& sweep_link, int points,
               const std::string& outdir, const SolveFlags& flags) {
  auto internal = cs.internal_links(coalition);
  int link = -1;
  if (!sweep_link.empty()) {
    link = cs.link_index(sweep_link);
    if (link < 0) throw CaseError("unknown link '" + sweep_link + "'");
  } else if (internal.size() == 1) {
    link = internal[0];
  } else {
    throw CaseError("--sweep needs a coalition with exactly one internal link, or --sweep-link");
  }
  if (points < 2) throw CaseError("--sweep-points must be at least 2");
  std::ostringstream s;
  s << "chi,reserve,day_ahead";
  for (auto& sc : cs.scenarios) s << ",balancing_" << sc.id;
  s << ",expected\n";
  double best_chi = 0.0, best_cost = solver::kInf;
  for (int k = 0; k < points; ++k) {
    std::vector<double> chi = cs.existing_chi;
    chi[link] = (double)k / (points - 1);
    auto out = markets::run_sequential(cs, chi, Coalition::empty(), flags.lp());
    s << fmt(chi[link]) << "," << fmt(out.reserve.cost) << "," << fmt(out.day_ahead.cost);
    for (auto& b : out.balancing) s << "," << fmt(b.cost);
    s << "," << fmt(out.expected_cost) << "\n";
    if (out.expected_cost < best_cost) {
      best_cost = out.expected_cost;
      best_chi = chi[link];
    }
  }
  write_text(fs::path(outdir) / "sweep.csv", s.str());
  std::printf("swept %s on %s: best grid point chi=%s, expected cost %s\n", cs.name.c_str(),
              cs.links[link].id.c_str(), fmt(best_chi, 4).c_str(), fmt(best_cost, 1).c_str());
  std::printf("wrote %s/sweep.csv\n", outdir.c_str());
}

void cmd_preempt(const std::string& path, const std::string& coal_spec, const std::string& outdir,
                 const SolveFlags& flags, bool sweep, const std::string& sweep_link,
                 int sweep_points) {
  CaseData cs = load_checked(path);
  Coalition coalition = cs.parse_coalition(coal_spec);
  if (sweep) {
    run_sweep(cs, coalition, sweep_link, sweep_points, outdir, flags);
    return;
  }
  auto sol = preemptive::solve_preemptive(cs, coalition, flags.pre());
  auto rep = preemptive::verify_bilevel_consistency(cs, sol, 1e-4, flags.lp());
  if (!rep.consistent)
    throw std::runtime_error(
        "lower-level costs from the MILP do not match the re-cleared markets (rel. err " +
        fmt(std::max({rep.reserve_rel, rep.day_ahead_rel, rep.balancing_rel}), 8) + ")");
  // report the model's own equilibrium path; the balancing re-solves conditioned
  // on its day-ahead schedule supply the real-time prices
  markets::SequentialOutcome mp;
  mp.reserve = sol.reserve;
  mp.day_ahead = sol.day_ahead;
  mp.balancing = rep.recleared.balancing;
  mp.expected_cost = mp.reserve.cost + mp.day_ahead.cost;
  for (size_t s = 0; s < cs.scenarios.size(); ++s)
    mp.expected_cost += cs.scenarios[s].probability * mp.balancing[s].cost;
  write_text(fs::path(outdir) / "chi.csv", chi_csv(cs, sol.chi));
  write_text(fs::path(outdir) / "costs.csv", costs_csv(cs, mp));
  write_text(fs::path(outdir) / "dispatch.csv", dispatch_csv(cs, mp));
  std::printf("preemptive optimum for coalition %s on %s%s\n",
              cs.coalition_string(coalition).c_str(), cs.name.c_str(),
              sol.via_milp ? "" : " (nothing to renegotiate; sequential run)");
  for (size_t e = 0; e < cs.links.size(); ++e)
    std::printf("  chi[%s] = %s%s\n", cs.links[e].id.c_str(), fmt(sol.chi[e], 4).c_str(),
                std::find(cs.internal_links(coalition).begin(), cs.internal_links(coalition).end(),
                          (int)e) != cs.internal_links(coalition).end()
                    ? ""
                    : "  (kept)");
  print_costs(cs, mp);
  if (sol.via_milp)
    std::printf("  milp: gap %s, complementarity residual %s, cap escalations %d\n",
                fmt(sol.mip_gap, 8).c_str(), fmt(sol.comp_residual, 8).c_str(), sol.bigm_retries);
  std::printf("wrote %s/{chi,costs,dispatch}.csv\n", outdir.c_str());
}

std::string values_csv(const CaseData& cs, games::ValueOracle& oracle,
                       const games::ValueTable& expected,
                       const std::vector<games::ValueTable>& per_scenario) {
  std::ostringstream s;
  s << "coalition,cost,value";
  for (auto& sc : cs.scenarios) s << ",value_" << sc.id;
  s << "\n";
  std::uint32_t full = Coalition::all((int)cs.areas.size()).mask;
  for (std::uint32_t m = 0; m <= full; ++m) {
    Coalition c{m};
    s << '"' << cs.coalition_string(c) << '"' << "," << fmt(oracle.cost(c)) << ","
      << fmt(expected.v[m]);
    for (auto& t : per_scenario) s << "," << fmt(t.v[m]);
    s << "\n";
  }
  return s.str();
}

void cmd_values(const std::string& path, const std::string& outdir, const SolveFlags& flags) {
  CaseData cs = load_checked(path);
  games::ValueOracle oracle(cs, {flags.pre()});
  auto expected = games::enumerate_expected(oracle, flags.threads);
  std::vector<games::ValueTable> per_scenario;
  for (size_t k = 0; k < cs.scenarios.size(); ++k)
    per_scenario.push_back(games::enumerate_scenario(oracle, (int)k, 1));
  write_text(fs::path(outdir) / "values.csv", values_csv(cs, oracle, expected, per_scenario));
  std::printf("coalition values for %s (%d preemptive MILPs):\n", cs.name.c_str(),
              oracle.milp_solves());
  std::uint32_t full = Coalition::all((int)cs.areas.size()).mask;
  for (std::uint32_t m = 0; m <= full; ++m)
    std::printf("  v(%s) = %s\n", cs.coalition_string(Coalition{m}).c_str(),
                fmt(expected.v[m], 1).c_str());
  std::printf("wrote %s/values.csv\n", outdir.c_str());
}

struct AllocationRun {
  std::vector<double> beta;
  json log;
};

std::vector<double> criterion_vector(const std::string& criterion, games::ValueOracle& oracle) {
  int n = oracle.n_areas();
  Coalition grand = oracle.grand();
  std::vector<double> ref(n, 0.0);
  if (criterion == "equal") {
    double v = oracle.value(grand);
    for (int a = 0; a < n; ++a) ref[a] = v / n;
  } else if (criterion == "marginal") {
    for (int a = 0; a < n; ++a) ref[a] = oracle.value(grand) - oracle.value(grand.without(a));
  } else {
    throw CaseError("unknown criterion '" + criterion + "' (equal|marginal)");
  }
  return ref;
}

AllocationRun run_mechanism(const CaseData& cs, games::ValueOracle& oracle,
                            const std::string& method, const std::string& criterion,
                            double cg_tol, int max_iters, bool marginal_init,
                            const SolveFlags& flags) {
  AllocationRun run;
  run.log["method"] = method;
  auto table = [&]() { return games::enumerate_expected(oracle, flags.threads); };
  if (method == "shapley") {
    run.beta = games::shapley(table());
  } else if (method == "equal") {
    run.beta = games::equal_shares(table());
  } else if (method == "marginal") {
    run.beta = games::marginal_contributions(table());
  } else if (method == "nucleolus") {
    auto r = games::nucleolus(table(), flags.lp());
    run.beta = r.beta;
    run.log["max_excess"] = r.max_excess;
    run.log["stages"] = r.stages;
  } else if (method == "least-core-table") {
    auto ref = criterion_vector(criterion, oracle);
    auto r = games::least_core_master(table(), ref, flags.lp());
    run.beta = r.beta;
    run.log["criterion"] = criterion;
    run.log["eps"] = r.eps;
  } else if (method == "least-core") {
    games::LeastCoreOptions lo;
    lo.cg_tol = cg_tol;
    lo.max_iters = max_iters;
    lo.marginal_init = marginal_init;
    lo.reference = criterion_vector(criterion, oracle);
    lo.lp = flags.lp();
    auto r = games::least_core_select(oracle, lo);
    if (!r.converged)
      throw std::runtime_error("constraint generation did not converge in " +
                               std::to_string(max_iters) + " iterations");
    run.beta = r.beta;
    run.log["criterion"] = criterion;
    run.log["eps"] = r.eps;
    run.log["converged"] = r.converged;
    run.log["milp_solves"] = oracle.milp_solves();
    json iters = json::array();
    for (auto& it : r.iterations)
      iters.push_back({{"k", it.k},
                       {"eps", it.eps},
                       {"eta", it.eta},
                       {"coalition", cs.coalition_string(it.generated)},
                       {"value", it.value}});
    run.log["iterations"] = iters;
  } else {
    throw CaseError("unknown method '" + method +
                    "' (shapley|nucleolus|least-core|least-core-table|equal|marginal)");
  }
  double v_all = oracle.value(oracle.grand());
  double sum = 0.0;
  for (double b : run.beta) sum += b;
  // marginal contributions are a comparison vector, not an allocation, so they
  // are allowed to over- or under-pay the grand-coalition value
  if (method != "marginal" && std::abs(sum - v_all) > 1e-6 * std::max(1.0, std::abs(v_all)))
    throw std::runtime_error("allocation is not efficient: pays " + fmt(sum) + " of " +
                             fmt(v_all));
  run.log["v_all"] = v_all;
  json betas = json::object();
  for (int a = 0; a < oracle.n_areas(); ++a) betas[cs.areas[a].id] = run.beta[a];
  run.log["beta"] = betas;
  return run;
}

std::vector<int> wanted_scenarios(const CaseData& cs, const std::string& spec) {
  std::vector<int> out;
  if (spec.empty()) return out;
  if (spec == "all" || spec == "ALL") {
    for (size_t k = 0; k < cs.scenarios.size(); ++k) out.push_back((int)k);
    return out;
  }
  for (size_t k = 0; k < cs.scenarios.size(); ++k)
    if (cs.scenarios[k].id == spec) {
      out.push_back((int)k);
      return out;
    }
  throw CaseError("unknown scenario '" + spec + "'");
}

void cmd_allocate(const std::string& path, const std::string& method, const std::string& criterion,
                  const std::string& scenario_spec, const std::string& outdir,
                  const SolveFlags& flags, double cg_tol, int max_iters, bool marginal_init) {
  CaseData cs = load_checked(path);
  games::ValueOracle oracle(cs, {flags.pre()});
  AllocationRun run =
      run_mechanism(cs, oracle, method, criterion, cg_tol, max_iters, marginal_init, flags);
  std::ostringstream csv;
  csv << "mechanism,area,value\n";
  for (size_t a = 0; a < cs.areas.size(); ++a)
    csv << method << "," << cs.areas[a].id << "," << fmt(run.beta[a]) << "\n";
  double v_all = oracle.value(oracle.grand());
  json scen = json::object();
  for (int s : wanted_scenarios(cs, scenario_spec)) {
    double vs = oracle.scenario_value(oracle.grand(), s);
    auto split = games::scenario_split(run.beta, v_all, vs);
    const std::string& sid = cs.scenarios[s].id;
    for (size_t a = 0; a < cs.areas.size(); ++a)
      csv << method << "@" << sid << "," << cs.areas[a].id << "," << fmt(split[a]) << "\n";
    json sj;
    sj["v_all"] = vs;
    sj["budget_imbalance"] = vs - v_all;  // negative: scenario budget deficit
    json sp = json::object();
    for (size_t a = 0; a < cs.areas.size(); ++a) sp[cs.areas[a].id] = split[a];
    sj["split"] = sp;
    scen[sid] = sj;
  }
  if (!scen.empty()) run.log["scenario"] = scen;
  write_text(fs::path(outdir) / "allocation.csv", csv.str());
  write_text(fs::path(outdir) / "runlog.json", run.log.dump(2) + "\n");
  std::printf("%s allocation on %s (v(ALL) = %s):\n", method.c_str(), cs.name.c_str(),
              fmt(v_all, 1).c_str());
  for (size_t a = 0; a < cs.areas.size(); ++a)
    std::printf("  %s: %s\n", cs.areas[a].id.c_str(), fmt(run.beta[a], 1).c_str());
  if (run.log.contains("eps")) std::printf("  eps = %s\n", fmt((double)run.log["eps"], 1).c_str());
  if (run.log.contains("max_excess"))
    std::printf("  max excess = %s\n", fmt((double)run.log["max_excess"], 1).c_str());
  std::printf("wrote %s/allocation.csv and %s/runlog.json\n", outdir.c_str(), outdir.c_str());
}

void cmd_report(const std::string& path, const std::string& outdir, const SolveFlags& flags,
                double cg_tol, int max_iters) {
  CaseData cs = load_checked(path);
  fs::path dir(outdir);

  auto existing = markets::run_sequential(cs, cs.existing_chi, Coalition::empty(), flags.lp());
  auto tbl = markets::decompose_surpluses(cs, existing);
  check_budget_balance(cs, tbl);
  write_text(dir / "existing_costs.csv", costs_csv(cs, existing));
  write_text(dir / "existing_area_costs.csv", area_costs_csv(cs, tbl));
  write_text(dir / "existing_surpluses.csv", surpluses_csv(cs, tbl));
  write_text(dir / "existing_dispatch.csv", dispatch_csv(cs, existing));

  games::ValueOracle oracle(cs, {flags.pre()});
  Coalition grand = oracle.grand();
  const auto& sol = oracle.solution(grand);
  auto rep = preemptive::verify_bilevel_consistency(cs, sol, 1e-4, flags.lp());
  if (!rep.consistent)
    throw std::runtime_error("lower-level costs from the MILP do not match the re-cleared markets");
  write_text(dir / "preemptive_chi.csv", chi_csv(cs, sol.chi));
  write_text(dir / "preemptive_costs.csv", costs_csv(cs, oracle.outcome(grand)));
  write_text(dir / "preemptive_dispatch.csv", dispatch_csv(cs, oracle.outcome(grand)));

  auto expected = games::enumerate_expected(oracle, flags.threads);
  std::vector<games::ValueTable> per_scenario;
  for (size_t k = 0; k < cs.scenarios.size(); ++k)
    per_scenario.push_back(games::enumerate_scenario(oracle, (int)k, 1));
  write_text(dir / "values.csv", values_csv(cs, oracle, expected, per_scenario));

  std::ostringstream csv;
  csv << "mechanism,area,value\n";
  json logs = json::object();
  double v_all = expected.grand();
  for (const std::string& method :
       {std::string("equal"), std::string("marginal"), std::string("shapley"),
        std::string("nucleolus"), std::string("least-core")}) {
    AllocationRun run =
        run_mechanism(cs, oracle, method, "marginal", cg_tol, max_iters, false, flags);
    for (size_t a = 0; a < cs.areas.size(); ++a)
      csv << method << "," << cs.areas[a].id << "," << fmt(run.beta[a]) << "\n";
    for (size_t k = 0; k < cs.scenarios.size(); ++k) {
      auto split = games::scenario_split(run.beta, v_all, per_scenario[k].grand());
      for (size_t a = 0; a < cs.areas.size(); ++a)
        csv << method << "@" << cs.scenarios[k].id << "," << cs.areas[a].id << ","
            << fmt(split[a]) << "\n";
    }
    logs[method] = run.log;
  }
  write_text(dir / "allocations.csv", csv.str());
  write_text(dir / "allocation_runlogs.json", logs.dump(2) + "\n");

  auto diag = games::diagnose(expected, per_scenario, flags.lp());
  json dj;
  json names = json::array();
  for (int a : diag.dummy_areas) names.push_back(cs.areas[a].id);
  dj["dummy_areas"] = names;
  names = json::array();
  for (int a : diag.veto_areas) names.push_back(cs.areas[a].id);
  dj["veto_areas"] = names;
  dj["monotone"] = diag.monotone;
  dj["supermodular"] = diag.supermodular;
  dj["core_nonempty"] = diag.core_nonempty;
  dj["least_core_radius"] = diag.least_core_radius;
  names = json::array();
  for (int s : diag.blocking_scenarios) names.push_back(cs.scenarios[s].id);
  dj["blocking_scenarios"] = names;
  json imb = json::object();
  for (size_t k = 0; k < cs.scenarios.size(); ++k)
    imb[cs.scenarios[k].id] = per_scenario[k].grand() - v_all;
  dj["scenario_budget_imbalance"] = imb;
  write_text(dir / "diagnostics.json", dj.dump(2) + "\n");

  std::printf("report for %s:\n", cs.name.c_str());
  std::printf("  expected cost: existing %s, preemptive %s (v(ALL) = %s)\n",
              fmt(existing.expected_cost, 1).c_str(),
              fmt(oracle.outcome(grand).expected_cost, 1).c_str(), fmt(v_all, 1).c_str());
  std::printf("  core %s (least-core radius %s)\n", diag.core_nonempty ? "nonempty" : "empty",
              fmt(diag.least_core_radius, 1).c_str());
  std::printf("wrote report tables under %s/\n", outdir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential market clearing, preemptive transmission-share reallocation and "
               "coalition benefit allocation"};
  app.require_subcommand(1);
  std::string path, outdir = "out";
  std::string chi_spec, coal_spec, method = "least-core", criterion = "marginal", scenario_spec;
  std::string sweep_link;
  bool sweep = false, marginal_init = false;
  int sweep_points = 51, max_iters = 100;
  double cg_tol = 1e-4;
  SolveFlags flags;

  auto* v = app.add_subcommand("validate", "load a case file and run all structural checks");
  v->add_option("case", path, "case JSON file")->required();

  auto* c = app.add_subcommand("clear", "clear reserve, day-ahead and balancing sequentially");
  c->add_option("case", path, "case JSON file")->required();
  c->add_option("--chi", chi_spec, "balancing shares, one value per link in case order");
  c->add_option("--coalition", coal_spec,
                "areas whose share-less external flows stay free in real time (default none)");
  c->add_option("-o,--out", outdir, "output directory")->capture_default_str();
  add_solver_flags(c, flags);

  auto* p = app.add_subcommand("preempt", "choose balancing shares by the single-level MILP");
  p->add_option("case", path, "case JSON file")->required();
  p->add_option("--coalition", coal_spec, "renegotiating coalition (default ALL)");
  p->add_flag("--sweep", sweep, "grid-sweep the share of the single internal link instead");
  p->add_option("--sweep-link", sweep_link, "link to sweep when several are internal");
  p->add_option("--sweep-points", sweep_points, "grid points for --sweep")->capture_default_str();
  p->add_option("-o,--out", outdir, "output directory")->capture_default_str();
  add_solver_flags(p, flags);

  auto* vals = app.add_subcommand("values", "enumerate coalition values over the subset lattice");
  vals->add_option("case", path, "case JSON file")->required();
  vals->add_option("-o,--out", outdir, "output directory")->capture_default_str();
  add_solver_flags(vals, flags);

  auto* al = app.add_subcommand("allocate", "compute a benefit allocation");
  al->add_option("case", path, "case JSON file")->required();
  al->add_option("--method", method,
                 "shapley|nucleolus|least-core|least-core-table|equal|marginal")
      ->capture_default_str();
  al->add_option("--criterion", criterion, "least-core tie-break target: equal|marginal")
      ->capture_default_str();
  al->add_option("--scenario", scenario_spec, "also split for this scenario id (or 'all')");
  al->add_option("--cg-tol", cg_tol, "constraint-generation stop tolerance")
      ->capture_default_str();
  al->add_option("--max-iters", max_iters, "constraint-generation iteration cap")
      ->capture_default_str();
  al->add_flag("--marginal-init", marginal_init,
               "seed the constraint family with the n leave-one-out coalitions");
  al->add_option("-o,--out", outdir, "output directory")->capture_default_str();
  add_solver_flags(al, flags);

  auto* r = app.add_subcommand("report", "bundle all tables for a case");
  r->add_option("case", path, "case JSON file")->required();
  r->add_option("--cg-tol", cg_tol, "constraint-generation stop tolerance")->capture_default_str();
  r->add_option("--max-iters", max_iters, "constraint-generation iteration cap")
      ->capture_default_str();
  r->add_option("-o,--out", outdir, "output directory")->capture_default_str();
  add_solver_flags(r, flags);

  try {
    app.parse(argc, argv);
    if (v->parsed()) cmd_validate(path);
    if (c->parsed()) cmd_clear(path, chi_spec, coal_spec, outdir, flags);
    if (p->parsed()) cmd_preempt(path, coal_spec.empty() ? "ALL" : coal_spec, outdir, flags, sweep,
                                 sweep_link, sweep_points);
    if (vals->parsed()) cmd_values(path, outdir, flags);
    if (al->parsed())
      cmd_allocate(path, method, criterion, scenario_spec, outdir, flags, cg_tol, max_iters,
                   marginal_init);
    if (r->parsed()) cmd_report(path, outdir, flags, cg_tol, max_iters);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const CaseError& e) {
    std::fprintf(stderr, "ParseError: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "Error: %s\n", e.what());
    return 1;
  }
  return 0;
}

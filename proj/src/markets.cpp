#include "coalloc/markets.hpp"

#include <cmath>

namespace coalloc::markets {

using solver::kInf;
using solver::LinExpr;
using solver::Model;
using solver::Result;
using solver::Var;

namespace {

Result checked_solve(const Model& m, const solver::SolveOptions& opt, const std::string& what) {
  Result r = m.solve(opt);
  if (!r.ok())
    throw MarketError(what + " did not solve to optimality: " + solver::to_string(r.status));
  return r;
}

// per-line share withheld from the energy market: chi of its link, 0 for internal lines
double line_chi(const CaseData& cs, const std::vector<double>& chi, int l) {
  return cs.lines[l].link >= 0 ? chi[cs.lines[l].link] : 0.0;
}

}  // namespace

ReserveOutcome clear_reserve(const CaseData& cs, const std::vector<double>& chi,
                             const solver::SolveOptions& opt) {
  const int nI = (int)cs.gens.size(), nE = (int)cs.links.size(), nA = (int)cs.areas.size();
  Model m;
  std::vector<Var> rup(nI, -1), rdn(nI, -1), xup(nE), xdn(nE);
  for (int i = 0; i < nI; ++i) {
    const auto& g = cs.gens[i];
    if (!g.flexible) continue;
    rup[i] = m.add_var("rup_" + g.id, 0.0, g.rmax_up, g.rcost_up);
    rdn[i] = m.add_var("rdn_" + g.id, 0.0, g.rmax_dn, g.rcost_dn);
  }
  for (int e = 0; e < nE; ++e) {
    double cap = chi[e] * cs.link_capacity(e);
    xup[e] = m.add_var("xup_" + cs.links[e].id, -cap, cap);
    xdn[e] = m.add_var("xdn_" + cs.links[e].id, -cap, cap);
  }
  std::vector<int> row_up(nA), row_dn(nA);
  for (int a = 0; a < nA; ++a) {
    LinExpr up, dn;
    for (int i = 0; i < nI; ++i)
      if (rup[i] >= 0 && cs.nodes[cs.gens[i].node].area == a) {
        up.add(rup[i], 1.0);
        dn.add(rdn[i], 1.0);
      }
    for (int e = 0; e < nE; ++e)
      if (int h = cs.link_incidence(e, a); h != 0) {
        up.add(xup[e], h);
        dn.add(xdn[e], h);
      }
    row_up[a] = m.add_ge("rr_up_" + cs.areas[a].id, up, cs.areas[a].rr_up);
    row_dn[a] = m.add_ge("rr_dn_" + cs.areas[a].id, dn, cs.areas[a].rr_dn);
  }
  Result r = checked_solve(m, opt, "reserve market");

  ReserveOutcome out;
  out.cost = r.objective;
  out.r_up.assign(nI, 0.0);
  out.r_dn.assign(nI, 0.0);
  for (int i = 0; i < nI; ++i)
    if (rup[i] >= 0) {
      // the procured quantities become balancing activation limits; keep solver
      // noise from turning them into inconsistent bounds downstream
      out.r_up[i] = std::max(0.0, r.value(rup[i]));
      out.r_dn[i] = std::max(0.0, r.value(rdn[i]));
    }
  for (int e = 0; e < nE; ++e) {
    out.x_up.push_back(r.value(xup[e]));
    out.x_dn.push_back(r.value(xdn[e]));
    // scarcity rent of the shared capacity: nonzero only when a bound binds
    out.link_rent.push_back(std::abs(r.value(xup[e]) * r.reduced_cost[xup[e]]) +
                            std::abs(r.value(xdn[e]) * r.reduced_cost[xdn[e]]));
  }
  for (int a = 0; a < nA; ++a) {
    out.price_up.push_back(r.dual(row_up[a]));
    out.price_dn.push_back(r.dual(row_dn[a]));
  }
  return out;
}

DayAheadOutcome clear_day_ahead(const CaseData& cs, const std::vector<double>& chi,
                                const ReserveOutcome& res, const solver::SolveOptions& opt) {
  const int nI = (int)cs.gens.size(), nJ = (int)cs.wind.size(), nL = (int)cs.lines.size(),
            nN = (int)cs.nodes.size();
  Model m;
  std::vector<Var> p(nI), w(nJ), f(nL), delta(nN);
  for (int i = 0; i < nI; ++i) {
    double lb = res.r_dn[i], ub = cs.gens[i].pmax - res.r_up[i];
    if (lb > ub + 1e-12)
      throw MarketError("generator " + cs.gens[i].id + ": reserved capacity leaves no dispatch range");
    p[i] = m.add_var("p_" + cs.gens[i].id, lb, ub, cs.gens[i].cost);
  }
  for (int j = 0; j < nJ; ++j)
    w[j] = m.add_var("w_" + cs.wind[j].id, 0.0, cs.wind_mean(j));
  for (int l = 0; l < nL; ++l) {
    double cap = (1.0 - line_chi(cs, chi, l)) * cs.lines[l].capacity;
    f[l] = m.add_var("f_" + cs.lines[l].id, -cap, cap);
  }
  for (int n = 0; n < nN; ++n)
    delta[n] = n == cs.ref_node ? m.add_var("delta_" + cs.nodes[n].id, 0.0, 0.0)
                                : m.add_var("delta_" + cs.nodes[n].id, -kInf, kInf);

  std::vector<int> bal(nN);
  for (int n = 0; n < nN; ++n) {
    LinExpr ex;
    for (int i = 0; i < nI; ++i)
      if (cs.gens[i].node == n) ex.add(p[i], 1.0);
    for (int j = 0; j < nJ; ++j)
      if (cs.wind[j].node == n) ex.add(w[j], 1.0);
    for (int l = 0; l < nL; ++l) {
      if (cs.lines[l].from == n) ex.add(f[l], -1.0);
      if (cs.lines[l].to == n) ex.add(f[l], 1.0);
    }
    bal[n] = m.add_eq("bal_" + cs.nodes[n].id, ex, cs.nodes[n].demand);
  }
  for (int l = 0; l < nL; ++l) {
    LinExpr ex(f[l]);
    ex.add(delta[cs.lines[l].from], -cs.lines[l].susceptance);
    ex.add(delta[cs.lines[l].to], cs.lines[l].susceptance);
    m.add_eq("flowdef_" + cs.lines[l].id, ex, 0.0);
  }
  Result r = checked_solve(m, opt, "day-ahead market");

  DayAheadOutcome out;
  out.cost = r.objective;
  for (int i = 0; i < nI; ++i) out.p.push_back(r.value(p[i]));
  for (int j = 0; j < nJ; ++j) out.w.push_back(r.value(w[j]));
  for (int l = 0; l < nL; ++l) {
    out.flow.push_back(r.value(f[l]));
    // congestion rent: capacity times the binding cap's multiplier (else zero)
    out.line_rent.push_back(std::abs(r.value(f[l]) * r.reduced_cost[f[l]]));
  }
  for (int n = 0; n < nN; ++n) {
    out.angle.push_back(r.value(delta[n]));
    out.price.push_back(r.dual(bal[n]));
  }
  return out;
}

BalancingOutcome clear_balancing(const CaseData& cs, const std::vector<double>& chi,
                                 Coalition regime, const ReserveOutcome& res,
                                 const DayAheadOutcome& da, int s,
                                 const solver::SolveOptions& opt) {
  const int nI = (int)cs.gens.size(), nJ = (int)cs.wind.size(), nL = (int)cs.lines.size(),
            nN = (int)cs.nodes.size();
  std::vector<bool> locked(nL, false);
  for (int e : cs.locked_links(chi, regime))
    for (int l : cs.links[e].lines) locked[l] = true;

  Model m;
  std::vector<Var> up(nI, -1), dn(nI, -1), spill(nJ), shed(nN, -1), f(nL), delta(nN);
  for (int i = 0; i < nI; ++i) {
    if (!cs.gens[i].flexible) continue;
    up[i] = m.add_var("up_" + cs.gens[i].id, 0.0, res.r_up[i], cs.gens[i].cost);
    dn[i] = m.add_var("dn_" + cs.gens[i].id, 0.0, res.r_dn[i], -cs.gens[i].cost);
  }
  for (int j = 0; j < nJ; ++j)
    spill[j] = m.add_var("spill_" + cs.wind[j].id, 0.0, cs.wind_mw(j, s));
  for (int n = 0; n < nN; ++n)
    if (cs.nodes[n].demand > 0)
      shed[n] = m.add_var("shed_" + cs.nodes[n].id, 0.0, cs.nodes[n].demand, cs.shed_cost);
  for (int l = 0; l < nL; ++l)
    f[l] = locked[l] ? m.add_var("f_" + cs.lines[l].id, da.flow[l], da.flow[l])
                     : m.add_var("f_" + cs.lines[l].id, -cs.lines[l].capacity,
                                 cs.lines[l].capacity);
  for (int n = 0; n < nN; ++n)
    delta[n] = n == cs.ref_node ? m.add_var("delta_" + cs.nodes[n].id, 0.0, 0.0)
                                : m.add_var("delta_" + cs.nodes[n].id, -kInf, kInf);

  std::vector<int> bal(nN);
  for (int n = 0; n < nN; ++n) {
    LinExpr ex;
    double rhs = 0.0;
    for (int i = 0; i < nI; ++i)
      if (cs.gens[i].node == n && up[i] >= 0) {
        ex.add(up[i], 1.0);
        ex.add(dn[i], -1.0);
      }
    for (int j = 0; j < nJ; ++j)
      if (cs.wind[j].node == n) {
        rhs -= cs.wind_mw(j, s) - da.w[j];
        ex.add(spill[j], -1.0);
      }
    if (shed[n] >= 0) ex.add(shed[n], 1.0);
    for (int l = 0; l < nL; ++l) {
      double a = cs.lines[l].from == n ? -1.0 : cs.lines[l].to == n ? 1.0 : 0.0;
      if (a == 0.0) continue;
      ex.add(f[l], a);
      rhs += a * da.flow[l];
    }
    bal[n] = m.add_eq("bal_" + cs.nodes[n].id, ex, rhs);
  }
  for (int l = 0; l < nL; ++l) {
    LinExpr ex(f[l]);
    ex.add(delta[cs.lines[l].from], -cs.lines[l].susceptance);
    ex.add(delta[cs.lines[l].to], cs.lines[l].susceptance);
    m.add_eq("flowdef_" + cs.lines[l].id, ex, 0.0);
  }
  Result r = checked_solve(m, opt, "balancing market (" + cs.scenarios[s].id + ")");

  BalancingOutcome out;
  out.scenario = s;
  out.cost = r.objective;
  out.up.assign(nI, 0.0);
  out.dn.assign(nI, 0.0);
  for (int i = 0; i < nI; ++i)
    if (up[i] >= 0) {
      out.up[i] = r.value(up[i]);
      out.dn[i] = r.value(dn[i]);
    }
  for (int j = 0; j < nJ; ++j) out.spill.push_back(r.value(spill[j]));
  out.shed.assign(nN, 0.0);
  for (int n = 0; n < nN; ++n)
    if (shed[n] >= 0) out.shed[n] = r.value(shed[n]);
  for (int l = 0; l < nL; ++l) {
    out.flow.push_back(r.value(f[l]));
    // rent on the capacity left after the day-ahead schedule; locked lines move
    // nothing and earn nothing
    out.line_rent.push_back(
        std::abs((r.value(f[l]) - da.flow[l]) * r.reduced_cost[f[l]]));
  }
  for (int n = 0; n < nN; ++n) out.price.push_back(r.dual(bal[n]));
  return out;
}

SequentialOutcome run_sequential(const CaseData& cs, const std::vector<double>& chi,
                                 Coalition regime, const solver::SolveOptions& opt) {
  if (chi.size() != cs.links.size()) throw MarketError("chi vector does not match link count");
  SequentialOutcome out;
  out.chi = chi;
  out.regime = regime;
  out.reserve = clear_reserve(cs, chi, opt);
  out.day_ahead = clear_day_ahead(cs, chi, out.reserve, opt);
  out.expected_cost = out.reserve.cost + out.day_ahead.cost;
  for (int s = 0; s < (int)cs.scenarios.size(); ++s) {
    out.balancing.push_back(clear_balancing(cs, chi, regime, out.reserve, out.day_ahead, s, opt));
    out.expected_cost += cs.scenarios[s].probability * out.balancing.back().cost;
  }
  return out;
}

SequentialOutcome run_existing(const CaseData& cs, const solver::SolveOptions& opt) {
  return run_sequential(cs, cs.existing_chi, Coalition::empty(), opt);
}

SurplusTable decompose_surpluses(const CaseData& cs, const SequentialOutcome& out) {
  const int nA = (int)cs.areas.size();
  SurplusTable t;
  auto blank = [&] {
    FloorSurplus fs;
    fs.cs.assign(nA, 0.0);
    fs.ps.assign(nA, 0.0);
    fs.cr.assign(nA, 0.0);
    return fs;
  };

  // Reserve floor: requirements pay the zonal price, providers earn price - offer,
  // shared link capacity earns its scarcity rent, split between the two areas.
  t.reserve = blank();
  t.reserve.floor_cost = out.reserve.cost;
  for (int a = 0; a < nA; ++a) {
    t.reserve.cs[a] -= cs.areas[a].rr_up * out.reserve.price_up[a] +
                       cs.areas[a].rr_dn * out.reserve.price_dn[a];
  }
  for (int i = 0; i < (int)cs.gens.size(); ++i) {
    int a = cs.nodes[cs.gens[i].node].area;
    t.reserve.ps[a] += (out.reserve.price_up[a] - cs.gens[i].rcost_up) * out.reserve.r_up[i] +
                       (out.reserve.price_dn[a] - cs.gens[i].rcost_dn) * out.reserve.r_dn[i];
  }
  for (int e = 0; e < (int)cs.links.size(); ++e) {
    t.reserve.cr[cs.links[e].area_from] += out.reserve.link_rent[e] / 2;
    t.reserve.cr[cs.links[e].area_to] += out.reserve.link_rent[e] / 2;
  }

  // Day-ahead floor: load pays, generation and scheduled wind earn, congested
  // lines collect their capacity rent (internal lines to the owner, ties half-half).
  t.day_ahead = blank();
  t.day_ahead.floor_cost = out.day_ahead.cost;
  const auto& da = out.day_ahead;
  for (int n = 0; n < (int)cs.nodes.size(); ++n)
    t.day_ahead.cs[cs.nodes[n].area] -= da.price[n] * cs.nodes[n].demand;
  for (int i = 0; i < (int)cs.gens.size(); ++i) {
    int n = cs.gens[i].node;
    t.day_ahead.ps[cs.nodes[n].area] += (da.price[n] - cs.gens[i].cost) * da.p[i];
  }
  for (int j = 0; j < (int)cs.wind.size(); ++j) {
    int n = cs.wind[j].node;
    t.day_ahead.ps[cs.nodes[n].area] += da.price[n] * da.w[j];
  }
  for (int l = 0; l < (int)cs.lines.size(); ++l) {
    double rent = da.line_rent[l];
    if (cs.is_tie(l)) {
      t.day_ahead.cr[cs.nodes[cs.lines[l].from].area] += rent / 2;
      t.day_ahead.cr[cs.nodes[cs.lines[l].to].area] += rent / 2;
    } else {
      t.day_ahead.cr[cs.area_of_line(l)] += rent;
    }
  }

  // Balancing floors: deviations settle at balancing nodal prices; shed demand is
  // compensated at the price but loses value at the shedding cost; congestion
  // rents accrue only on the capacity left over after the day-ahead schedule.
  for (const auto& b : out.balancing) {
    FloorSurplus fs = blank();
    fs.floor_cost = b.cost;
    int s = b.scenario;
    for (int n = 0; n < (int)cs.nodes.size(); ++n)
      fs.cs[cs.nodes[n].area] += (cs.shed_cost - b.price[n]) * b.shed[n];
    for (int i = 0; i < (int)cs.gens.size(); ++i) {
      int n = cs.gens[i].node;
      fs.ps[cs.nodes[n].area] += (b.price[n] - cs.gens[i].cost) * (b.up[i] - b.dn[i]);
    }
    for (int j = 0; j < (int)cs.wind.size(); ++j) {
      int n = cs.wind[j].node;
      fs.ps[cs.nodes[n].area] += b.price[n] * b.wind_deviation(j, da.w[j], cs.wind_mw(j, s));
    }
    for (int l = 0; l < (int)cs.lines.size(); ++l) {
      double rent = b.line_rent[l];
      if (cs.is_tie(l)) {
        fs.cr[cs.nodes[cs.lines[l].from].area] += rent / 2;
        fs.cr[cs.nodes[cs.lines[l].to].area] += rent / 2;
      } else {
        fs.cr[cs.area_of_line(l)] += rent;
      }
    }
    t.balancing.push_back(std::move(fs));
  }
  return t;
}

}  // namespace coalloc::markets

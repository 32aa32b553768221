#include "coalloc/preemptive.hpp"

#include <algorithm>
#include <cmath>

namespace coalloc::preemptive {

using solver::kInf;
using solver::LinExpr;
using solver::Model;
using solver::Result;
using solver::Var;

BigM BigM::derive(const CaseData& cs, double override_cap) {
  double price = 1.0;
  for (const auto& g : cs.gens)
    price = std::max({price, g.cost, g.rcost_up, g.rcost_dn});
  price = std::max(price, cs.shed_cost);
  BigM m;
  m.reserve_price = m.energy_price = override_cap > 0 ? override_cap : std::max(1e4, 10.0 * price);
  return m;
}

namespace {

Var emit_pair(Model& m, std::vector<CompPair>& pairs, const std::string& name,
              const LinExpr& slack, double m_slack, Var dual, double m_dual) {
  Var z = m.add_var("z_" + name, 0.0, 1.0, 0.0, true);
  m.add_ge("kf_" + name, slack, 0.0);
  LinExpr on = slack;
  on.add(z, m_slack);
  m.add_le("ka_" + name, on, m_slack);  // active -> slack forced to 0
  LinExpr cap(dual);
  cap.add(z, -m_dual);
  m.add_le("kc_" + name, cap, 0.0);  // inactive -> dual forced to 0
  pairs.push_back({name, slack, dual, z, m_slack, m_dual});
  return z;
}

// For a two-sided bound only the difference of the two multipliers is pinned by
// stationarity; when both sides close (zero-width box) the pair can drift to its
// cap together. Restricting activity to one side keeps the multipliers minimal
// without cutting off any optimum.
void one_side_only(Model& m, const std::string& name, Var z_lo, Var z_hi) {
  LinExpr ex(z_lo);
  ex.add(z_hi, 1.0);
  m.add_le("oneside_" + name, ex, 1.0);
}

}  // namespace

ReserveKkt emit_kkt_reserve(const CaseData& cs, Model& m, const ChiExpr& chi, const BigM& caps) {
  const int nI = (int)cs.gens.size(), nE = (int)cs.links.size(), nA = (int)cs.areas.size();
  const double Kr = caps.reserve_price;
  ReserveKkt k;
  k.r_up.assign(nI, -1);
  k.r_dn.assign(nI, -1);

  for (int i = 0; i < nI; ++i) {
    const auto& g = cs.gens[i];
    if (!g.flexible) continue;
    k.r_up[i] = m.add_var("rup_" + g.id, 0.0, g.rmax_up);
    k.r_dn[i] = m.add_var("rdn_" + g.id, 0.0, g.rmax_dn);
    k.cost.add(k.r_up[i], g.rcost_up);
    k.cost.add(k.r_dn[i], g.rcost_dn);
  }
  for (int e = 0; e < nE; ++e) {
    double t = cs.link_capacity(e);
    k.x_up.push_back(m.add_var("xup_" + cs.links[e].id, -t, t));
    k.x_dn.push_back(m.add_var("xdn_" + cs.links[e].id, -t, t));
  }
  for (int a = 0; a < nA; ++a) {
    k.price_up.push_back(m.add_var("mu_rrup_" + cs.areas[a].id, 0.0, Kr));
    k.price_dn.push_back(m.add_var("mu_rrdn_" + cs.areas[a].id, 0.0, Kr));
  }

  // generator capacity pairs and stationarity-vs-procurement pairs
  for (int i = 0; i < nI; ++i) {
    const auto& g = cs.gens[i];
    if (!g.flexible) continue;
    int a = cs.nodes[g.node].area;
    Var mu_up = m.add_var("mu_rup_" + g.id, 0.0, Kr);
    Var mu_dn = m.add_var("mu_rdn_" + g.id, 0.0, Kr);
    LinExpr cap_up;
    cap_up.add(k.r_up[i], -1.0).constant = g.rmax_up;
    emit_pair(m, k.pairs, "rupcap_" + g.id, cap_up, g.rmax_up, mu_up, Kr);
    LinExpr cap_dn;
    cap_dn.add(k.r_dn[i], -1.0).constant = g.rmax_dn;
    emit_pair(m, k.pairs, "rdncap_" + g.id, cap_dn, g.rmax_dn, mu_dn, Kr);

    LinExpr st_up;  // offer + capacity dual - zonal price, complementary to r_up
    st_up.add(mu_up, 1.0).add(k.price_up[a], -1.0).constant = g.rcost_up;
    emit_pair(m, k.pairs, "rupstat_" + g.id, st_up, g.rcost_up + Kr, k.r_up[i], g.rmax_up);
    LinExpr st_dn;
    st_dn.add(mu_dn, 1.0).add(k.price_dn[a], -1.0).constant = g.rcost_dn;
    emit_pair(m, k.pairs, "rdnstat_" + g.id, st_dn, g.rcost_dn + Kr, k.r_dn[i], g.rmax_dn);
  }

  // zonal requirement pairs
  for (int a = 0; a < nA; ++a) {
    LinExpr up, dn;
    double room = 0.0;
    for (int i = 0; i < nI; ++i)
      if (k.r_up[i] >= 0 && cs.nodes[cs.gens[i].node].area == a) {
        up.add(k.r_up[i], 1.0);
        dn.add(k.r_dn[i], 1.0);
        room += std::max(cs.gens[i].rmax_up, cs.gens[i].rmax_dn);
      }
    for (int e = 0; e < nE; ++e)
      if (int h = cs.link_incidence(e, a); h != 0) {
        up.add(k.x_up[e], h);
        dn.add(k.x_dn[e], h);
        room += cs.link_capacity(e);
      }
    up.constant = -cs.areas[a].rr_up;
    dn.constant = -cs.areas[a].rr_dn;
    emit_pair(m, k.pairs, "rrup_" + cs.areas[a].id, up, room + 1.0, k.price_up[a], Kr);
    emit_pair(m, k.pairs, "rrdn_" + cs.areas[a].id, dn, room + 1.0, k.price_dn[a], Kr);
  }

  // exchange bounds |x_e| <= chi_e * T_e and exchange stationarity
  for (int e = 0; e < nE; ++e) {
    double t = cs.link_capacity(e);
    int af = cs.links[e].area_from, at = cs.links[e].area_to;
    Var zl_up = m.add_var("zeta_xlo_up_" + cs.links[e].id, 0.0, 2 * Kr);
    Var zu_up = m.add_var("zeta_xup_up_" + cs.links[e].id, 0.0, 2 * Kr);
    Var zl_dn = m.add_var("zeta_xlo_dn_" + cs.links[e].id, 0.0, 2 * Kr);
    Var zu_dn = m.add_var("zeta_xup_dn_" + cs.links[e].id, 0.0, 2 * Kr);
    k.xlo_up.push_back(zl_up);
    k.xhi_up.push_back(zu_up);
    k.xlo_dn.push_back(zl_dn);
    k.xhi_dn.push_back(zu_dn);

    LinExpr lo_up;  // x + chi*T >= 0
    lo_up.add(k.x_up[e], 1.0).add(chi[e], t);
    Var zlu = emit_pair(m, k.pairs, "xlo_up_" + cs.links[e].id, lo_up, 2 * t, zl_up, 2 * Kr);
    LinExpr hi_up;  // chi*T - x >= 0
    hi_up.add(k.x_up[e], -1.0).add(chi[e], t);
    Var zhu = emit_pair(m, k.pairs, "xhi_up_" + cs.links[e].id, hi_up, 2 * t, zu_up, 2 * Kr);
    one_side_only(m, "x_up_" + cs.links[e].id, zlu, zhu);
    LinExpr lo_dn;
    lo_dn.add(k.x_dn[e], 1.0).add(chi[e], t);
    Var zld = emit_pair(m, k.pairs, "xlo_dn_" + cs.links[e].id, lo_dn, 2 * t, zl_dn, 2 * Kr);
    LinExpr hi_dn;
    hi_dn.add(k.x_dn[e], -1.0).add(chi[e], t);
    Var zhd = emit_pair(m, k.pairs, "xhi_dn_" + cs.links[e].id, hi_dn, 2 * t, zu_dn, 2 * Kr);
    one_side_only(m, "x_dn_" + cs.links[e].id, zld, zhd);

    LinExpr st_up;  // importing-minus-exporting zonal spread balanced by bound duals
    st_up.add(k.price_up[at], 1.0).add(k.price_up[af], -1.0).add(zl_up, 1.0).add(zu_up, -1.0);
    m.add_eq("xstat_up_" + cs.links[e].id, st_up, 0.0);
    LinExpr st_dn;
    st_dn.add(k.price_dn[at], 1.0).add(k.price_dn[af], -1.0).add(zl_dn, 1.0).add(zu_dn, -1.0);
    m.add_eq("xstat_dn_" + cs.links[e].id, st_dn, 0.0);
  }
  return k;
}

DayAheadKkt emit_kkt_day_ahead(const CaseData& cs, Model& m, const ChiExpr& chi,
                               const ReserveKkt& res, const BigM& caps) {
  const int nI = (int)cs.gens.size(), nJ = (int)cs.wind.size(), nL = (int)cs.lines.size(),
            nN = (int)cs.nodes.size();
  const double Kd = caps.energy_price;
  DayAheadKkt k;

  for (int i = 0; i < nI; ++i)
    k.p.push_back(m.add_var("p_" + cs.gens[i].id, 0.0, cs.gens[i].pmax));
  for (int j = 0; j < nJ; ++j)
    k.w.push_back(m.add_var("w_" + cs.wind[j].id, 0.0, cs.wind_mean(j)));
  for (int l = 0; l < nL; ++l)
    k.f.push_back(m.add_var("fda_" + cs.lines[l].id, -cs.lines[l].capacity, cs.lines[l].capacity));
  for (int n = 0; n < nN; ++n)
    k.delta.push_back(n == cs.ref_node ? m.add_var("dda_" + cs.nodes[n].id, 0.0, 0.0)
                                       : m.add_var("dda_" + cs.nodes[n].id, -kInf, kInf));
  for (int n = 0; n < nN; ++n)
    k.price.push_back(m.add_var("lambda_" + cs.nodes[n].id, -Kd, Kd));
  std::vector<Var> lamf(nL);
  for (int l = 0; l < nL; ++l)
    lamf[l] = m.add_var("lamf_" + cs.lines[l].id, -kInf, kInf);

  for (int i = 0; i < nI; ++i) k.cost.add(k.p[i], cs.gens[i].cost);

  // primal balance and flow definition
  for (int n = 0; n < nN; ++n) {
    LinExpr ex;
    for (int i = 0; i < nI; ++i)
      if (cs.gens[i].node == n) ex.add(k.p[i], 1.0);
    for (int j = 0; j < nJ; ++j)
      if (cs.wind[j].node == n) ex.add(k.w[j], 1.0);
    for (int l = 0; l < nL; ++l) {
      if (cs.lines[l].from == n) ex.add(k.f[l], -1.0);
      if (cs.lines[l].to == n) ex.add(k.f[l], 1.0);
    }
    m.add_eq("da_bal_" + cs.nodes[n].id, ex, cs.nodes[n].demand);
  }
  for (int l = 0; l < nL; ++l) {
    LinExpr ex(k.f[l]);
    ex.add(k.delta[cs.lines[l].from], -cs.lines[l].susceptance);
    ex.add(k.delta[cs.lines[l].to], cs.lines[l].susceptance);
    m.add_eq("da_flowdef_" + cs.lines[l].id, ex, 0.0);
  }

  // dispatch range pairs and energy stationarity
  for (int i = 0; i < nI; ++i) {
    const auto& g = cs.gens[i];
    Var mu_lo = m.add_var("mu_plo_" + g.id, 0.0, Kd);
    Var mu_hi = m.add_var("mu_phi_" + g.id, 0.0, Kd);
    LinExpr lo(k.p[i]);  // p - r_dn >= 0
    if (res.r_dn[i] >= 0) lo.add(res.r_dn[i], -1.0);
    Var z_lo = emit_pair(m, k.pairs, "plo_" + g.id, lo, g.pmax, mu_lo, Kd);
    LinExpr hi;  // pmax - r_up - p >= 0
    hi.add(k.p[i], -1.0).constant = g.pmax;
    if (res.r_up[i] >= 0) hi.add(res.r_up[i], -1.0);
    Var z_hi = emit_pair(m, k.pairs, "phi_" + g.id, hi, g.pmax, mu_hi, Kd);
    one_side_only(m, "p_" + g.id, z_lo, z_hi);

    LinExpr st;  // C - lambda - mu_lo + mu_hi = 0
    st.add(k.price[g.node], -1.0).add(mu_lo, -1.0).add(mu_hi, 1.0);
    m.add_eq("dstat_p_" + g.id, st, -g.cost);
  }

  // wind schedule pairs (capacity bound and zero-offer stationarity)
  for (int j = 0; j < nJ; ++j) {
    const auto& wf = cs.wind[j];
    double wbar = cs.wind_mean(j);
    Var mu_w = m.add_var("mu_wup_" + wf.id, 0.0, Kd);
    LinExpr capw;
    capw.add(k.w[j], -1.0).constant = wbar;
    emit_pair(m, k.pairs, "wcap_" + wf.id, capw, wbar, mu_w, Kd);
    LinExpr st;  // mu_w - lambda >= 0, complementary to w
    st.add(mu_w, 1.0).add(k.price[wf.node], -1.0);
    emit_pair(m, k.pairs, "wstat_" + wf.id, st, 2 * Kd, k.w[j], std::max(wbar, 1.0));
  }

  // line limit pairs at (1 - chi) * T and flow/angle stationarity
  for (int l = 0; l < nL; ++l) {
    const auto& ln = cs.lines[l];
    double t = ln.capacity;
    Var zl = m.add_var("zeta_flo_" + ln.id, 0.0, Kd);
    Var zu = m.add_var("zeta_fhi_" + ln.id, 0.0, Kd);
    k.flo.push_back(zl);
    k.fhi.push_back(zu);
    LinExpr lo(k.f[l]);  // f + (1-chi)T >= 0
    lo.constant = t;
    if (ln.link >= 0) lo.add(chi[ln.link], -t);
    Var z_lo = emit_pair(m, k.pairs, "flo_" + ln.id, lo, 2 * t, zl, Kd);
    LinExpr hi;  // (1-chi)T - f >= 0
    hi.add(k.f[l], -1.0).constant = t;
    if (ln.link >= 0) hi.add(chi[ln.link], -t);
    Var z_hi = emit_pair(m, k.pairs, "fhi_" + ln.id, hi, 2 * t, zu, Kd);
    one_side_only(m, "f_" + ln.id, z_lo, z_hi);

    LinExpr st;  // lambda_from - lambda_to - lamf - zl + zu = 0
    st.add(k.price[ln.from], 1.0).add(k.price[ln.to], -1.0);
    st.add(lamf[l], -1.0).add(zl, -1.0).add(zu, 1.0);
    m.add_eq("dstat_f_" + ln.id, st, 0.0);
  }
  for (int n = 0; n < nN; ++n) {
    if (n == cs.ref_node) continue;
    LinExpr st;
    for (int l = 0; l < nL; ++l) {
      if (cs.lines[l].from == n) st.add(lamf[l], cs.lines[l].susceptance);
      if (cs.lines[l].to == n) st.add(lamf[l], -cs.lines[l].susceptance);
    }
    m.add_eq("dstat_ang_" + cs.nodes[n].id, st, 0.0);
  }
  return k;
}

namespace {

struct BalBlock {
  std::vector<Var> up, dn, spill, shed, f, delta;
  LinExpr cost;
};

// Balancing primal block for scenario s on top of the KKT decision variables.
// Links in `pinned` keep day-ahead flows; when `b` (per-area selection binaries)
// is given, pinning on `candidates` is relaxed for lines whose both end areas
// are selected.
BalBlock emit_balancing(const CaseData& cs, Model& m, int s, const ReserveKkt& rk,
                        const DayAheadKkt& dk, const std::vector<int>& pinned,
                        const std::vector<Var>* b, const std::vector<int>* candidates) {
  const int nI = (int)cs.gens.size(), nJ = (int)cs.wind.size(), nL = (int)cs.lines.size(),
            nN = (int)cs.nodes.size();
  const std::string tag = "_" + cs.scenarios[s].id;
  BalBlock blk;
  blk.up.assign(nI, -1);
  blk.dn.assign(nI, -1);
  blk.shed.assign(nN, -1);

  for (int i = 0; i < nI; ++i) {
    const auto& g = cs.gens[i];
    if (!g.flexible) continue;
    blk.up[i] = m.add_var("bup_" + g.id + tag, 0.0, g.rmax_up);
    blk.dn[i] = m.add_var("bdn_" + g.id + tag, 0.0, g.rmax_dn);
    LinExpr ub(blk.up[i]);
    ub.add(rk.r_up[i], -1.0);
    m.add_le("bup_lim_" + g.id + tag, ub, 0.0);
    LinExpr db(blk.dn[i]);
    db.add(rk.r_dn[i], -1.0);
    m.add_le("bdn_lim_" + g.id + tag, db, 0.0);
    blk.cost.add(blk.up[i], g.cost);
    blk.cost.add(blk.dn[i], -g.cost);
  }
  for (int j = 0; j < nJ; ++j)
    blk.spill.push_back(m.add_var("spill_" + cs.wind[j].id + tag, 0.0, cs.wind_mw(j, s)));
  for (int n = 0; n < nN; ++n)
    if (cs.nodes[n].demand > 0) {
      blk.shed[n] = m.add_var("shed_" + cs.nodes[n].id + tag, 0.0, cs.nodes[n].demand);
      blk.cost.add(blk.shed[n], cs.shed_cost);
    }
  for (int l = 0; l < nL; ++l)
    blk.f.push_back(
        m.add_var("f_" + cs.lines[l].id + tag, -cs.lines[l].capacity, cs.lines[l].capacity));
  for (int n = 0; n < nN; ++n)
    blk.delta.push_back(n == cs.ref_node ? m.add_var("d_" + cs.nodes[n].id + tag, 0.0, 0.0)
                                         : m.add_var("d_" + cs.nodes[n].id + tag, -kInf, kInf));

  for (int n = 0; n < nN; ++n) {
    LinExpr ex;
    double rhs = 0.0;
    for (int i = 0; i < nI; ++i)
      if (cs.gens[i].node == n && blk.up[i] >= 0) {
        ex.add(blk.up[i], 1.0);
        ex.add(blk.dn[i], -1.0);
      }
    for (int j = 0; j < nJ; ++j)
      if (cs.wind[j].node == n) {
        rhs -= cs.wind_mw(j, s);
        ex.add(dk.w[j], -1.0);  // deviation = realized - scheduled - spilled
        ex.add(blk.spill[j], -1.0);
      }
    if (blk.shed[n] >= 0) ex.add(blk.shed[n], 1.0);
    for (int l = 0; l < nL; ++l) {
      double c = cs.lines[l].from == n ? -1.0 : cs.lines[l].to == n ? 1.0 : 0.0;
      if (c == 0.0) continue;
      ex.add(blk.f[l], c);
      ex.add(dk.f[l], -c);
    }
    m.add_eq("bal_" + cs.nodes[n].id + tag, ex, rhs);
  }
  for (int l = 0; l < nL; ++l) {
    LinExpr ex(blk.f[l]);
    ex.add(blk.delta[cs.lines[l].from], -cs.lines[l].susceptance);
    ex.add(blk.delta[cs.lines[l].to], cs.lines[l].susceptance);
    m.add_eq("flowdef_" + cs.lines[l].id + tag, ex, 0.0);
  }

  if (!b) {
    for (int e : pinned)
      for (int l : cs.links[e].lines) {
        LinExpr dev(blk.f[l]);
        dev.add(dk.f[l], -1.0);
        m.add_eq("pin_" + cs.lines[l].id + tag, dev, 0.0);
      }
  } else {
    for (int e : *candidates) {
      int af = cs.links[e].area_from, at = cs.links[e].area_to;
      for (int l : cs.links[e].lines) {
        double big = 2.0 * cs.lines[l].capacity;
        LinExpr dev(blk.f[l]);
        dev.add(dk.f[l], -1.0);
        for (int a : {af, at}) {
          LinExpr up = dev;
          up.add((*b)[a], -big);
          m.add_le("dev_hi_" + cs.lines[l].id + "_" + cs.areas[a].id + tag, up, 0.0);
          LinExpr lo = dev;
          lo.add((*b)[a], big);
          m.add_ge("dev_lo_" + cs.lines[l].id + "_" + cs.areas[a].id + tag, lo, 0.0);
        }
      }
    }
  }
  return blk;
}

double pair_residual(const Result& r, const CompPair& p) {
  double s = std::max(0.0, r.value(p.slack));
  double d = std::max(0.0, r.value(p.dual));
  return std::min(s, d);
}

// worst complementarity violation and whether any active dual sits at its cap
std::pair<double, bool> check_pairs(const Result& r, const std::vector<const std::vector<CompPair>*>& blocks) {
  double worst = 0.0;
  bool at_cap = false;
  for (auto* pairs : blocks)
    for (const auto& p : *pairs) {
      worst = std::max(worst, pair_residual(r, p));
      if (r.value(p.dual) > 0.999 * p.m_dual) at_cap = true;
    }
  return {worst, at_cap};
}

PreemptiveSolution sequential_as_solution(const CaseData& cs, Coalition c,
                                          const PreemptiveOptions& opt) {
  auto seq = markets::run_sequential(cs, cs.existing_chi, c, opt.solve);
  PreemptiveSolution sol;
  sol.coalition = c;
  sol.chi = cs.existing_chi;
  sol.via_milp = false;
  sol.objective = seq.expected_cost;
  sol.reserve_cost = seq.reserve.cost;
  sol.day_ahead_cost = seq.day_ahead.cost;
  for (const auto& b : seq.balancing) sol.balancing_cost.push_back(b.cost);
  sol.reserve = seq.reserve;
  sol.day_ahead = seq.day_ahead;
  sol.balancing = seq.balancing;
  return sol;
}

markets::ReserveOutcome extract_reserve(const CaseData& cs, const Result& r, const ReserveKkt& k) {
  markets::ReserveOutcome out;
  out.cost = r.value(k.cost);
  for (size_t i = 0; i < cs.gens.size(); ++i) {
    // procurement quantities bound the balancing activations later on, so solver
    // noise below zero must not survive the extraction
    out.r_up.push_back(k.r_up[i] >= 0 ? std::max(0.0, r.value(k.r_up[i])) : 0.0);
    out.r_dn.push_back(k.r_dn[i] >= 0 ? std::max(0.0, r.value(k.r_dn[i])) : 0.0);
  }
  for (size_t e = 0; e < cs.links.size(); ++e) {
    out.x_up.push_back(r.value(k.x_up[e]));
    out.x_dn.push_back(r.value(k.x_dn[e]));
  }
  for (size_t a = 0; a < cs.areas.size(); ++a) {
    out.price_up.push_back(r.value(k.price_up[a]));
    out.price_dn.push_back(r.value(k.price_dn[a]));
  }
  for (size_t e = 0; e < cs.links.size(); ++e)
    out.link_rent.push_back(
        std::abs(r.value(k.x_up[e]) * (r.value(k.xhi_up[e]) - r.value(k.xlo_up[e]))) +
        std::abs(r.value(k.x_dn[e]) * (r.value(k.xhi_dn[e]) - r.value(k.xlo_dn[e]))));
  return out;
}

markets::DayAheadOutcome extract_day_ahead(const CaseData& cs, const Result& r,
                                           const DayAheadKkt& k) {
  markets::DayAheadOutcome out;
  out.cost = r.value(k.cost);
  for (size_t i = 0; i < cs.gens.size(); ++i) out.p.push_back(r.value(k.p[i]));
  for (size_t j = 0; j < cs.wind.size(); ++j) out.w.push_back(r.value(k.w[j]));
  for (size_t l = 0; l < cs.lines.size(); ++l) out.flow.push_back(r.value(k.f[l]));
  for (size_t n = 0; n < cs.nodes.size(); ++n) {
    out.angle.push_back(r.value(k.delta[n]));
    out.price.push_back(r.value(k.price[n]));
  }
  for (size_t l = 0; l < cs.lines.size(); ++l)
    out.line_rent.push_back(
        std::abs(r.value(k.f[l]) * (r.value(k.fhi[l]) - r.value(k.flo[l]))));
  return out;
}

markets::BalancingOutcome extract_balancing(const CaseData& cs, const Result& r,
                                            const BalBlock& blk, int s) {
  markets::BalancingOutcome out;
  out.scenario = s;
  out.cost = r.value(blk.cost);
  for (size_t i = 0; i < cs.gens.size(); ++i) {
    out.up.push_back(blk.up[i] >= 0 ? r.value(blk.up[i]) : 0.0);
    out.dn.push_back(blk.dn[i] >= 0 ? r.value(blk.dn[i]) : 0.0);
  }
  for (size_t j = 0; j < cs.wind.size(); ++j) out.spill.push_back(r.value(blk.spill[j]));
  for (size_t n = 0; n < cs.nodes.size(); ++n)
    out.shed.push_back(blk.shed[n] >= 0 ? r.value(blk.shed[n]) : 0.0);
  for (size_t l = 0; l < cs.lines.size(); ++l) out.flow.push_back(r.value(blk.f[l]));
  out.price.assign(cs.nodes.size(), 0.0);  // no balancing duals inside the MILP
  out.line_rent.assign(cs.lines.size(), 0.0);
  return out;
}

solver::SolveOptions milp_options(const PreemptiveOptions& opt) {
  solver::SolveOptions s = opt.solve;
  // keep binary leakage through the big-M rows below the cost tolerances
  s.integrality_tol = std::min(s.integrality_tol, 1e-9);
  s.feasibility_tol = std::min(s.feasibility_tol, 1e-9);
  return s;
}

}  // namespace

PreemptiveSolution solve_preemptive(const CaseData& cs, Coalition coalition,
                                    const PreemptiveOptions& opt) {
  std::vector<int> internal = cs.internal_links(coalition);
  if (coalition.size() <= 1 || internal.empty())
    return sequential_as_solution(cs, coalition, opt);

  BigM caps = BigM::derive(cs, opt.price_cap);
  const std::vector<int> pinned = cs.locked_links(cs.existing_chi, coalition);
  const int S = (int)cs.scenarios.size();

  for (int attempt = 0;; ++attempt) {
    Model m;
    ChiExpr chi;
    std::vector<Var> chi_var(cs.links.size(), -1);
    for (size_t e = 0; e < cs.links.size(); ++e) {
      bool free = std::find(internal.begin(), internal.end(), (int)e) != internal.end();
      if (free) {
        chi_var[e] = m.add_var("chi_" + cs.links[e].id, 0.0, 1.0);
        chi.emplace_back(chi_var[e]);
      } else {
        LinExpr c;
        c.constant = cs.existing_chi[e];
        chi.push_back(c);
      }
    }
    ReserveKkt rk = emit_kkt_reserve(cs, m, chi, caps);
    DayAheadKkt dk = emit_kkt_day_ahead(cs, m, chi, rk, caps);
    m.add_obj(rk.cost);
    m.add_obj(dk.cost);
    std::vector<BalBlock> bal;
    for (int s = 0; s < S; ++s) {
      bal.push_back(emit_balancing(cs, m, s, rk, dk, pinned, nullptr, nullptr));
      m.add_obj(bal.back().cost, cs.scenarios[s].probability);
    }

    Result r = m.solve(milp_options(opt));
    if (!r.ok())
      throw PreemptiveError("preemptive MILP for {" + cs.coalition_string(coalition) +
                            "} did not solve: " + solver::to_string(r.status));
    auto [residual, at_cap] = check_pairs(r, {&rk.pairs, &dk.pairs});
    if (residual > opt.comp_tol) {
      if (attempt < opt.max_bigm_retries) {
        caps.escalate();
        continue;
      }
      throw PreemptiveError("complementarity residual " + std::to_string(residual) +
                            " persists after price-cap escalation");
    }

    PreemptiveSolution sol;
    sol.coalition = coalition;
    sol.via_milp = true;
    sol.bigm_retries = attempt;
    sol.comp_residual = residual;
    sol.mip_gap = r.mip_gap;
    sol.objective = r.objective;
    for (size_t e = 0; e < cs.links.size(); ++e)
      sol.chi.push_back(chi_var[e] >= 0 ? std::clamp(r.value(chi_var[e]), 0.0, 1.0)
                                        : cs.existing_chi[e]);
    sol.reserve = extract_reserve(cs, r, rk);
    sol.day_ahead = extract_day_ahead(cs, r, dk);
    sol.reserve_cost = sol.reserve.cost;
    sol.day_ahead_cost = sol.day_ahead.cost;
    for (int s = 0; s < S; ++s) {
      sol.balancing.push_back(extract_balancing(cs, r, bal[s], s));
      sol.balancing_cost.push_back(sol.balancing.back().cost);
    }

    if (at_cap) {
      // A multiplier parked at its cap is usually harmless drift along a
      // degenerate face, but it can also mean the cap truncated a real price
      // and warped the embedded markets. Settle the question against a
      // stage-conditional re-clear at the chosen shares.
      auto rep = verify_bilevel_consistency(cs, sol, 1e-6, opt.solve);
      if (!rep.consistent) {
        if (attempt < opt.max_bigm_retries) {
          caps.escalate();
          continue;
        }
        throw PreemptiveError("embedded stage costs disagree with conditional re-clears "
                              "(reserve " +
                              std::to_string(rep.reserve_rel) + ", day-ahead " +
                              std::to_string(rep.day_ahead_rel) + ", balancing " +
                              std::to_string(rep.balancing_rel) + " relative)");
      }
    }
    return sol;
  }
}

ConsistencyReport verify_bilevel_consistency(const CaseData& cs, const PreemptiveSolution& sol,
                                             double rel_tol, const solver::SolveOptions& opt) {
  // Each embedded stage must attain the optimal value of its own market given
  // what the previous stage handed it. The comparison is stage-conditional on
  // purpose: when a market has several optimal dispatches at equal cost, the
  // model may pick a different one than a fresh solve would, so only the values
  // are comparable, and an unconditioned chain of re-solves could diverge at
  // the first tie.
  ConsistencyReport rep;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
  rep.recleared.reserve = markets::clear_reserve(cs, sol.chi, opt);
  rep.reserve_rel = rel(sol.reserve_cost, rep.recleared.reserve.cost);
  rep.recleared.day_ahead = markets::clear_day_ahead(cs, sol.chi, sol.reserve, opt);
  rep.day_ahead_rel = rel(sol.day_ahead_cost, rep.recleared.day_ahead.cost);
  rep.recleared.expected_cost = rep.recleared.reserve.cost + rep.recleared.day_ahead.cost;
  for (size_t s = 0; s < cs.scenarios.size(); ++s) {
    rep.recleared.balancing.push_back(markets::clear_balancing(
        cs, sol.chi, sol.coalition, sol.reserve, sol.day_ahead, (int)s, opt));
    rep.balancing_rel =
        std::max(rep.balancing_rel, rel(sol.balancing_cost[s], rep.recleared.balancing[s].cost));
    rep.recleared.expected_cost +=
        cs.scenarios[s].probability * rep.recleared.balancing[s].cost;
  }
  rep.consistent =
      rep.reserve_rel <= rel_tol && rep.day_ahead_rel <= rel_tol && rep.balancing_rel <= rel_tol;
  return rep;
}

SeparationResult solve_separation(const CaseData& cs, const std::vector<double>& payments,
                                  double cost_empty, const PreemptiveOptions& opt) {
  const int nA = (int)cs.areas.size(), S = (int)cs.scenarios.size();
  if ((int)payments.size() != nA)
    throw PreemptiveError("payment vector does not match area count");
  BigM caps = BigM::derive(cs, opt.price_cap);
  const std::vector<int> candidates = cs.locked_links(cs.existing_chi, Coalition::empty());

  for (int attempt = 0;; ++attempt) {
    Model m;
    std::vector<Var> b;
    for (int a = 0; a < nA; ++a)
      b.push_back(m.add_var("sel_" + cs.areas[a].id, 0.0, 1.0, payments[a], true));

    ChiExpr chi;
    for (size_t e = 0; e < cs.links.size(); ++e) {
      Var cv = m.add_var("chi_" + cs.links[e].id, 0.0, 1.0);
      chi.emplace_back(cv);
      double x0 = cs.existing_chi[e];
      // selected end areas release the share to the optimizer, otherwise pin to x0
      for (int a : {cs.links[e].area_from, cs.links[e].area_to}) {
        LinExpr lo(cv);
        lo.add(b[a], x0);
        m.add_ge("chilo_" + cs.links[e].id + "_" + cs.areas[a].id, lo, x0);
        LinExpr hi(cv);
        hi.add(b[a], x0 - 1.0);
        m.add_le("chihi_" + cs.links[e].id + "_" + cs.areas[a].id, hi, x0);
      }
    }

    ReserveKkt rk = emit_kkt_reserve(cs, m, chi, caps);
    DayAheadKkt dk = emit_kkt_day_ahead(cs, m, chi, rk, caps);
    m.add_obj(rk.cost);
    m.add_obj(dk.cost);
    std::vector<BalBlock> bal;
    for (int s = 0; s < S; ++s) {
      bal.push_back(emit_balancing(cs, m, s, rk, dk, {}, &b, &candidates));
      m.add_obj(bal.back().cost, cs.scenarios[s].probability);
    }

    Result r = m.solve(milp_options(opt));
    if (!r.ok())
      throw PreemptiveError("separation MILP did not solve: " + solver::to_string(r.status));
    auto [residual, at_cap] = check_pairs(r, {&rk.pairs, &dk.pairs});
    if (residual > opt.comp_tol) {
      if (attempt < opt.max_bigm_retries) {
        caps.escalate();
        continue;
      }
      throw PreemptiveError("complementarity residual " + std::to_string(residual) +
                            " persists after price-cap escalation");
    }

    Coalition picked;
    double paid = 0.0;
    for (int a = 0; a < nA; ++a)
      if (r.value(b[a]) > 0.5) {
        picked = picked.with(a);
        paid += payments[a];
      }
    if (at_cap) {
      PreemptiveSolution probe;
      probe.coalition = picked;
      for (size_t e = 0; e < cs.links.size(); ++e)
        probe.chi.push_back(std::clamp(r.value(chi[e]), 0.0, 1.0));
      probe.reserve = extract_reserve(cs, r, rk);
      probe.day_ahead = extract_day_ahead(cs, r, dk);
      probe.reserve_cost = probe.reserve.cost;
      probe.day_ahead_cost = probe.day_ahead.cost;
      for (int s = 0; s < S; ++s) probe.balancing_cost.push_back(r.value(bal[s].cost));
      auto rep = verify_bilevel_consistency(cs, probe, 1e-6, opt.solve);
      if (!rep.consistent) {
        if (attempt < opt.max_bigm_retries) {
          caps.escalate();
          continue;
        }
        throw PreemptiveError("embedded stage costs disagree with conditional re-clears "
                              "in the separation problem");
      }
    }

    SeparationResult out;
    out.coalition = picked;
    out.objective = r.objective;
    out.mip_gap = r.mip_gap;
    out.eta = cost_empty - r.objective;
    out.value = out.eta + paid;
    return out;
  }
}

}  // namespace coalloc::preemptive

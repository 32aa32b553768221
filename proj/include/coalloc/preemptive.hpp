// Preemptive (bilevel) choice of the balancing shares chi: the lower-level
// reserve and day-ahead auctions are replaced by their KKT systems with
// disjunctive (big-M) complementarity, giving a single-level MILP. Also hosts
// the coalition-separation MILP that prices worst-case deviations.
#pragma once

#include "coalloc/markets.hpp"
#include "coalloc/solver.hpp"
#include "coalloc/types.hpp"

namespace coalloc::preemptive {

struct PreemptiveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One disjunctive complementarity pair: slack >= 0, dual >= 0, slack*dual = 0,
// linearized with binary `active` (1 -> slack pinned to 0, 0 -> dual pinned to 0).
struct CompPair {
  std::string name;
  solver::LinExpr slack;
  solver::Var dual;
  solver::Var active;
  double m_slack, m_dual;
};

// Caps used for the disjunctive linearization. Slack-side caps are exact bounds
// from the data; dual-side caps are price caps that widen on retry.
struct BigM {
  double reserve_price = 0.0;
  double energy_price = 0.0;

  static BigM derive(const CaseData& cs, double override_cap = 0.0);
  void escalate(double factor = 10.0) {
    reserve_price *= factor;
    energy_price *= factor;
  }
};

struct ReserveKkt {
  std::vector<solver::Var> r_up, r_dn;          // per generator, -1 when inflexible
  std::vector<solver::Var> x_up, x_dn;          // per link
  std::vector<solver::Var> price_up, price_dn;  // zonal requirement duals
  std::vector<solver::Var> xlo_up, xhi_up, xlo_dn, xhi_dn;  // exchange bound duals
  solver::LinExpr cost;
  std::vector<CompPair> pairs;
};

struct DayAheadKkt {
  std::vector<solver::Var> p, w, f, delta;  // gens, farms, lines, nodes
  std::vector<solver::Var> price;           // nodal balance duals (free)
  std::vector<solver::Var> flo, fhi;        // line limit duals
  solver::LinExpr cost;
  std::vector<CompPair> pairs;
};

// chi is given per link as an affine expression (a fixed value or a decision
// variable), so the same emitters serve fixed-share, preemptive and separation runs.
using ChiExpr = std::vector<solver::LinExpr>;

ReserveKkt emit_kkt_reserve(const CaseData& cs, solver::Model& m, const ChiExpr& chi,
                            const BigM& caps);
DayAheadKkt emit_kkt_day_ahead(const CaseData& cs, solver::Model& m, const ChiExpr& chi,
                               const ReserveKkt& res, const BigM& caps);

struct PreemptiveOptions {
  solver::SolveOptions solve;
  double price_cap = 0.0;    // 0: derive from data
  double comp_tol = 1e-4;    // max tolerated min(slack, dual) after solve
  int max_bigm_retries = 3;  // cap escalations on residual violations
};

struct PreemptiveSolution {
  Coalition coalition;
  std::vector<double> chi;  // chosen share per link
  double objective = 0.0;   // expected system cost at the optimum
  double reserve_cost = 0.0, day_ahead_cost = 0.0;
  std::vector<double> balancing_cost;  // per scenario
  double mip_gap = 0.0;
  double comp_residual = 0.0;  // worst complementarity violation
  int bigm_retries = 0;
  bool via_milp = false;  // false when the coalition cannot change anything

  // embedded lower-level outcome (primal values only)
  markets::ReserveOutcome reserve;
  markets::DayAheadOutcome day_ahead;
  std::vector<markets::BalancingOutcome> balancing;
};

// Optimal shares for the links internal to `coalition`; all other links keep the
// existing share, and real-time flows on share-less links that leave the
// coalition stay pinned to the day-ahead schedule. Coalitions that cannot
// renegotiate any link collapse to the plain sequential run.
PreemptiveSolution solve_preemptive(const CaseData& cs, Coalition coalition,
                                    const PreemptiveOptions& opt = {});

struct ConsistencyReport {
  bool consistent = false;
  double reserve_rel = 0.0, day_ahead_rel = 0.0, balancing_rel = 0.0;
  markets::SequentialOutcome recleared;
};

// Checks that each embedded stage attains its own market optimum given the
// previous stage as the model fixed it: the reserve floor is re-solved at the
// chosen shares, the day-ahead floor at the embedded reserve procurement, and
// each balancing scenario at the embedded day-ahead schedule. Values are
// compared, not dispatches, so equal-cost ties do not flag a mismatch. The
// conditional re-solves in `recleared` carry the prices and rents that the
// mixed-integer model cannot provide for the balancing stage.
ConsistencyReport verify_bilevel_consistency(const CaseData& cs, const PreemptiveSolution& sol,
                                             double rel_tol = 1e-4,
                                             const solver::SolveOptions& opt = {});

struct SeparationResult {
  Coalition coalition;   // most attractive deviation given the offered payments
  double eta = 0.0;      // its residual gain over the payments (max excess)
  double value = 0.0;    // v(coalition) recovered from the objective
  double objective = 0.0;
  double mip_gap = 0.0;
};

// Finds the coalition maximizing v(C) - sum of offered payments, in one MILP:
// binary area-selection variables switch link shares and flow pinning on or off.
// `cost_empty` is the expected cost under existing arrangements (J of the empty
// coalition), used to convert the objective into an excess.
SeparationResult solve_separation(const CaseData& cs, const std::vector<double>& payments,
                                  double cost_empty, const PreemptiveOptions& opt = {});

}  // namespace coalloc::preemptive

// Cooperative-game layer: coalition values from preemptive re-allocation runs,
// allocation mechanisms (Shapley, prenucleolus, least-core selection by
// constraint generation), per-scenario splits and structural diagnostics.
#pragma once

#include <map>
#include <mutex>

#include "coalloc/preemptive.hpp"

namespace coalloc::games {

struct GameError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OracleOptions {
  preemptive::PreemptiveOptions pre;
  double consistency_tol = 1e-4;
};

// Computes and caches J(C), the re-cleared sequential cost at the coalition's
// optimal shares, and the derived expected / per-scenario benefit values.
class ValueOracle {
 public:
  ValueOracle(const CaseData& cs, OracleOptions opt = {});

  const CaseData& data() const { return cs_; }
  const OracleOptions& options() const { return opt_; }
  int n_areas() const { return (int)cs_.areas.size(); }
  Coalition grand() const { return Coalition::all(n_areas()); }

  double cost_empty();                      // expected cost under existing arrangements
  double scenario_cost_empty(int s);
  double cost(Coalition c);                 // J(C)
  double scenario_cost(Coalition c, int s); // J^s(C)
  double value(Coalition c);                // v(C) = J(empty) - J(C)
  double scenario_value(Coalition c, int s);

  // Full preemptive solution / re-cleared outcome behind J(C) (solves on demand).
  const preemptive::PreemptiveSolution& solution(Coalition c);
  const markets::SequentialOutcome& outcome(Coalition c);

  // Record a value learned elsewhere (separation byproduct); first write wins.
  void put_value(Coalition c, double v);
  bool has_value(Coalition c) const;
  int milp_solves() const { return milp_solves_; }
  std::map<std::uint32_t, double> known_values() const;

 private:
  struct Entry {
    preemptive::PreemptiveSolution sol;
    markets::SequentialOutcome seq;
  };
  Entry& entry(Coalition c);  // caller must NOT hold the mutex

  const CaseData& cs_;
  OracleOptions opt_;
  std::map<std::uint32_t, Entry> entries_;
  std::map<std::uint32_t, double> values_;
  mutable std::mutex mu_;
  int milp_solves_ = 0;
};

// Complete characteristic function over all 2^n coalitions, v[mask].
struct ValueTable {
  int n = 0;
  std::vector<double> v;

  double operator()(Coalition c) const { return v[c.mask]; }
  double grand() const { return v[Coalition::all(n).mask]; }
};

ValueTable enumerate_expected(ValueOracle& o, int threads = 1);
ValueTable enumerate_scenario(ValueOracle& o, int s, int threads = 1);

// --- allocation mechanisms (all return one share per area, summing to v(A)) ---

std::vector<double> shapley(const ValueTable& t);
std::vector<double> equal_shares(const ValueTable& t);
std::vector<double> marginal_contributions(const ValueTable& t);  // v(A) - v(A\{a})

struct NucleolusResult {
  std::vector<double> beta;
  double max_excess = 0.0;  // first-stage optimum
  int stages = 0;
};
// Prenucleolus over the budget-balanced hyperplane (lexicographic excess
// minimization via the sequence of LPs with binding-set certification).
NucleolusResult nucleolus(const ValueTable& t, const solver::SolveOptions& lp = {});

// excess of C at beta: v(C) - sum of beta over C
double excess(const ValueTable& t, const std::vector<double>& beta, Coalition c);
// worst excess over proper nonempty coalitions (argmax optionally reported)
double max_excess(const ValueTable& t, const std::vector<double>& beta, Coalition* arg = nullptr);
bool in_core(const ValueTable& t, const std::vector<double>& beta, double tol = 1e-6);
// exact least-core radius (no sign clamps) from the complete table
double least_core_eps(const ValueTable& t, const solver::SolveOptions& lp = {});

struct LeastCoreOptions {
  double cg_tol = 1e-4;            // stop when eta <= eps + cg_tol  [€]
  int max_iters = 100;
  bool marginal_init = false;      // seed the family with the n coalitions A\{a}
  std::vector<double> reference;   // tie-break target; empty = equal shares
  solver::SolveOptions lp;         // master LP / QP settings
};

struct LeastCoreIteration {
  int k = 0;
  double eps = 0.0, eta = 0.0;
  Coalition generated;
  double value = 0.0;  // v(C_k) recovered from the separation objective
  std::vector<double> beta;
};

struct LeastCoreResult {
  bool converged = false;
  double eps = 0.0;
  std::vector<double> beta;
  std::vector<LeastCoreIteration> iterations;
};

// Constraint-generation least-core allocation: master (min eps over nonnegative
// budget-balanced allocations against the known family), quadratic tie-break
// toward the reference, then a separation MILP proposing the worst coalition.
LeastCoreResult least_core_select(ValueOracle& o, const LeastCoreOptions& opt = {});

// Same master + tie-break over the complete enumerated table (reference oracle).
LeastCoreResult least_core_master(const ValueTable& t, const std::vector<double>& reference = {},
                                  const solver::SolveOptions& lp = {});

// Scenario-s split proportional to the expected allocation: beta * v_s(A)/v(A).
std::vector<double> scenario_split(const std::vector<double>& beta, double v_all, double vs_all);

struct Diagnostics {
  std::vector<int> dummy_areas;  // zero marginal contribution to every coalition
  std::vector<int> veto_areas;   // v(C) = 0 whenever the area is missing
  bool monotone = true;
  bool supermodular = true;
  bool core_nonempty = false;
  double least_core_radius = 0.0;  // unclamped eps*
  // scenarios where some coalition beats the grand coalition (core provably empty)
  std::vector<int> blocking_scenarios;
};

Diagnostics diagnose(const ValueTable& expected, const std::vector<ValueTable>& per_scenario = {},
                     const solver::SolveOptions& lp = {});

}  // namespace coalloc::games

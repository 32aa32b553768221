// Sequential market clearing: reserve capacity auction, day-ahead energy
// auction (DC power flow), and per-scenario real-time balancing, plus the
// settlement decomposition into per-area consumer/producer surplus and
// congestion rents.
#pragma once

#include "coalloc/solver.hpp"
#include "coalloc/types.hpp"

namespace coalloc::markets {

struct MarketError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ReserveOutcome {
  double cost = 0.0;
  std::vector<double> r_up, r_dn;          // procured reserve per generator [MW]
  std::vector<double> x_up, x_dn;          // reserve exchange per link, + toward the link's "to" area [MW]
  std::vector<double> price_up, price_dn;  // zonal reserve prices per area [€/MW]
  std::vector<double> link_rent;           // scarcity rent of the shared capacity per link [€]
};

struct DayAheadOutcome {
  double cost = 0.0;
  std::vector<double> p;      // dispatch per generator [MW]
  std::vector<double> w;      // scheduled wind per farm [MW]
  std::vector<double> flow;   // per line [MW]
  std::vector<double> angle;  // per node [rad]
  std::vector<double> price;  // nodal price per node [€/MWh]
  std::vector<double> line_rent;  // congestion rent per line: capacity x cap dual [€]
};

struct BalancingOutcome {
  int scenario = 0;
  double cost = 0.0;
  std::vector<double> up, dn;  // redispatch per generator [MW]
  std::vector<double> spill;   // wind curtailment per farm [MW]
  std::vector<double> shed;    // lost load per node [MW]
  std::vector<double> flow;    // per line [MW]
  std::vector<double> price;   // balancing nodal price [€/MWh]
  std::vector<double> line_rent;  // rent on capacity left over after day-ahead use [€]

  // net deviation settled for farm j given realized output mw
  double wind_deviation(int j, double scheduled, double mw) const {
    return mw - scheduled - spill[j];
  }
};

struct SequentialOutcome {
  std::vector<double> chi;  // balancing share per link used for this run
  Coalition regime;         // coalition whose links trade freely in real time
  ReserveOutcome reserve;
  DayAheadOutcome day_ahead;
  std::vector<BalancingOutcome> balancing;  // one per scenario
  double expected_cost = 0.0;

  double scenario_cost(int s) const {
    return reserve.cost + day_ahead.cost + balancing[s].cost;
  }
};

ReserveOutcome clear_reserve(const CaseData& cs, const std::vector<double>& chi,
                             const solver::SolveOptions& opt = {});

DayAheadOutcome clear_day_ahead(const CaseData& cs, const std::vector<double>& chi,
                                const ReserveOutcome& res, const solver::SolveOptions& opt = {});

// Real-time re-dispatch for one scenario. Tie-line flows of links with no
// balancing share that touch an area outside `regime` stay at the day-ahead value.
BalancingOutcome clear_balancing(const CaseData& cs, const std::vector<double>& chi,
                                 Coalition regime, const ReserveOutcome& res,
                                 const DayAheadOutcome& da, int scenario,
                                 const solver::SolveOptions& opt = {});

// The three floors in sequence; expected_cost = reserve + day-ahead + E[balancing].
SequentialOutcome run_sequential(const CaseData& cs, const std::vector<double>& chi,
                                 Coalition regime, const solver::SolveOptions& opt = {});

// Convenience: existing arrangements, no coalition.
SequentialOutcome run_existing(const CaseData& cs, const solver::SolveOptions& opt = {});

// --- settlement decomposition ---

struct FloorSurplus {
  double floor_cost = 0.0;
  std::vector<double> cs, ps, cr;  // per area [€]
  double area_total(int a) const { return cs[a] + ps[a] + cr[a]; }
};

struct SurplusTable {
  FloorSurplus reserve, day_ahead;
  std::vector<FloorSurplus> balancing;

  // Area share of the scenario-s system cost (positive = net payment).
  double area_scenario_cost(int a, int s) const {
    return -(reserve.area_total(a) + day_ahead.area_total(a) + balancing[s].area_total(a));
  }
};

// Settles every floor at its clearing prices: consumers pay nodal/zonal prices,
// producers earn price minus offer, congestion rents go to the owning area
// (tie-lines half to each end). Shed demand is valued at the shedding cost.
SurplusTable decompose_surpluses(const CaseData& cs, const SequentialOutcome& out);

}  // namespace coalloc::markets

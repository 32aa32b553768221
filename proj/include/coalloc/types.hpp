// Core data model: areas, network, generators, wind, scenarios.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace coalloc {

struct CaseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Area {
  std::string id;
  double rr_up = 0.0;  // up reserve requirement [MW]
  double rr_dn = 0.0;  // down reserve requirement [MW]
};

struct Node {
  std::string id;
  int area = -1;
  double demand = 0.0;  // inelastic demand [MW]
};

// AC branch. link < 0: internal to one area; link >= 0: tie-line of that interconnection.
struct Line {
  std::string id;
  int from = -1;
  int to = -1;
  double capacity = 0.0;     // thermal limit [MW]
  double susceptance = 0.0;  // 1/reactance [p.u.]
  int link = -1;
};

// Interconnection between two areas; owns one or more parallel tie-lines.
struct Link {
  std::string id;
  int area_from = -1;  // exporting side in the zonal incidence (-1 entry)
  int area_to = -1;    // importing side (+1 entry)
  std::vector<int> lines;
};

struct Generator {
  std::string id;
  int node = -1;
  double pmax = 0.0;
  double cost = 0.0;  // energy offer [€/MWh]
  bool flexible = false;
  double rmax_up = 0.0;  // up reserve capacity offer [MW]
  double rmax_dn = 0.0;
  double rcost_up = 0.0;  // reserve capacity offer prices [€/MW]
  double rcost_dn = 0.0;
};

struct WindFarm {
  std::string id;
  int node = -1;
  double capacity = 0.0;  // installed [MW]
};

struct Scenario {
  std::string id;
  double probability = 0.0;
  std::vector<double> fraction;  // realized share of capacity per farm, aligned with CaseData::wind
};

// Set of areas, packed as a bitmask over area indices.
struct Coalition {
  std::uint32_t mask = 0;

  static Coalition empty() { return {0}; }
  static Coalition all(int n_areas) { return {(std::uint32_t(1) << n_areas) - 1}; }
  static Coalition of(std::initializer_list<int> areas) {
    Coalition c;
    for (int a : areas) c.mask |= std::uint32_t(1) << a;
    return c;
  }
  bool contains(int a) const { return mask >> a & 1; }
  Coalition with(int a) const { return {mask | std::uint32_t(1) << a}; }
  Coalition without(int a) const { return {mask & ~(std::uint32_t(1) << a)}; }
  int size() const { return __builtin_popcount(mask); }
  bool operator==(const Coalition&) const = default;
  bool operator<(const Coalition& o) const { return mask < o.mask; }
};

struct CaseData {
  std::string name;
  double shed_cost = 0.0;  // value of lost load [€/MWh]
  std::vector<Area> areas;
  std::vector<Node> nodes;
  std::vector<Line> lines;
  std::vector<Link> links;
  std::vector<Generator> gens;
  std::vector<WindFarm> wind;
  std::vector<Scenario> scenarios;
  std::vector<double> existing_chi;  // per link, share of tie capacity withheld for balancing
  int ref_node = 0;                  // angle reference

  // --- derived quantities ---

  // Realized production of farm j in scenario s [MW].
  double wind_mw(int j, int s) const { return wind[j].capacity * scenarios[s].fraction[j]; }
  // Day-ahead dispatchable expectation of farm j [MW].
  double wind_mean(int j) const;
  // Total transfer capacity of link e [MW].
  double link_capacity(int e) const;
  // Zonal incidence of link e on area a: +1 importing end, -1 exporting end, 0 otherwise.
  int link_incidence(int e, int a) const {
    return links[e].area_to == a ? 1 : links[e].area_from == a ? -1 : 0;
  }
  int area_of_line(int l) const { return nodes[lines[l].from].area; }  // intra-area lines only
  bool is_tie(int l) const { return lines[l].link >= 0; }

  int area_index(const std::string& id) const;
  int node_index(const std::string& id) const;
  int link_index(const std::string& id) const;

  // Fill Area::rr_up/rr_dn from aggregate wind spread when the input gave no requirements:
  // rr_up covers the worst shortfall below the mean, rr_dn the worst excess above it.
  void derive_reserve_requirements();

  // Links with both end areas inside the coalition; only these can have their
  // balancing share renegotiated by the coalition.
  std::vector<int> internal_links(Coalition c) const;
  // Links with no existing balancing share whose far end is outside the
  // coalition: their real-time flows stay pinned to the day-ahead schedule.
  std::vector<int> locked_links(const std::vector<double>& chi, Coalition c) const;

  std::string coalition_string(Coalition c) const;
  Coalition parse_coalition(const std::string& spec) const;  // "a1,a2" or "ALL" / ""
};

}  // namespace coalloc

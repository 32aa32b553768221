#include "coalloc/io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace coalloc {

using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CaseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double num(const json& j, const char* key, double dflt) {
  auto it = j.find(key);
  return it == j.end() ? dflt : it->get<double>();
}

double req_num(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) throw CaseError(ctx + ": missing \"" + key + "\"");
  return it->get<double>();
}

std::string req_str(const json& j, const char* key, const std::string& ctx) {
  auto it = j.find(key);
  if (it == j.end()) throw CaseError(ctx + ": missing \"" + key + "\"");
  return it->get<std::string>();
}

}  // namespace

CaseData parse_case(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw CaseError(std::string("JSON parse error: ") + e.what());
  }
  CaseData cs;
  cs.name = j.value("name", "");
  cs.shed_cost = req_num(j, "shed_cost", "case");

  for (const auto& ja : j.at("areas")) cs.areas.push_back({req_str(ja, "id", "area"), 0.0, 0.0});

  for (const auto& jn : j.at("nodes")) {
    Node n;
    n.id = req_str(jn, "id", "node");
    n.area = cs.area_index(req_str(jn, "area", "node " + n.id));
    n.demand = num(jn, "demand", 0.0);
    cs.nodes.push_back(n);
  }

  if (j.contains("links"))
    for (const auto& je : j.at("links")) {
      Link e;
      e.id = req_str(je, "id", "link");
      e.area_from = cs.area_index(req_str(je, "from", "link " + e.id));
      e.area_to = cs.area_index(req_str(je, "to", "link " + e.id));
      cs.links.push_back(e);
    }

  for (const auto& jl : j.at("lines")) {
    Line l;
    l.id = req_str(jl, "id", "line");
    l.from = cs.node_index(req_str(jl, "from", "line " + l.id));
    l.to = cs.node_index(req_str(jl, "to", "line " + l.id));
    l.capacity = req_num(jl, "capacity", "line " + l.id);
    if (jl.contains("susceptance"))
      l.susceptance = jl.at("susceptance").get<double>();
    else
      l.susceptance = 1.0 / req_num(jl, "reactance", "line " + l.id);
    if (jl.contains("link")) {
      l.link = cs.link_index(jl.at("link").get<std::string>());
      cs.links[l.link].lines.push_back((int)cs.lines.size());
    }
    cs.lines.push_back(l);
  }

  for (const auto& jg : j.at("generators")) {
    Generator g;
    g.id = req_str(jg, "id", "generator");
    g.node = cs.node_index(req_str(jg, "node", "generator " + g.id));
    g.pmax = req_num(jg, "pmax", "generator " + g.id);
    g.cost = req_num(jg, "cost", "generator " + g.id);
    g.flexible = jg.value("flexible", false);
    if (g.flexible) {
      g.rmax_up = req_num(jg, "reserve_max_up", "generator " + g.id);
      g.rmax_dn = req_num(jg, "reserve_max_dn", "generator " + g.id);
      g.rcost_up = req_num(jg, "reserve_cost_up", "generator " + g.id);
      g.rcost_dn = req_num(jg, "reserve_cost_dn", "generator " + g.id);
    }
    cs.gens.push_back(g);
  }

  if (j.contains("wind_farms"))
    for (const auto& jw : j.at("wind_farms")) {
      WindFarm w;
      w.id = req_str(jw, "id", "wind farm");
      w.node = cs.node_index(req_str(jw, "node", "wind farm " + w.id));
      w.capacity = req_num(jw, "capacity", "wind farm " + w.id);
      cs.wind.push_back(w);
    }

  for (const auto& js : j.at("scenarios")) {
    Scenario s;
    s.id = req_str(js, "id", "scenario");
    s.probability = req_num(js, "probability", "scenario " + s.id);
    s.fraction.assign(cs.wind.size(), 0.0);
    if (js.contains("production")) {
      const auto& pr = js.at("production");
      for (size_t k = 0; k < cs.wind.size(); ++k) {
        auto it = pr.find(cs.wind[k].id);
        if (it == pr.end())
          throw CaseError("scenario " + s.id + ": missing production for " + cs.wind[k].id);
        s.fraction[k] = it->get<double>();
      }
    } else if (!cs.wind.empty()) {
      throw CaseError("scenario " + s.id + ": missing \"production\"");
    }
    cs.scenarios.push_back(s);
  }

  cs.existing_chi.assign(cs.links.size(), 0.0);
  if (j.contains("existing_chi")) {
    const auto& jc = j.at("existing_chi");
    for (auto it = jc.begin(); it != jc.end(); ++it)
      cs.existing_chi[cs.link_index(it.key())] = it.value().get<double>();
  }

  if (j.contains("reserve_requirements")) {
    const auto& jr = j.at("reserve_requirements");
    for (auto it = jr.begin(); it != jr.end(); ++it) {
      Area& a = cs.areas[cs.area_index(it.key())];
      a.rr_up = req_num(it.value(), "up", "reserve_requirements " + it.key());
      a.rr_dn = req_num(it.value(), "dn", "reserve_requirements " + it.key());
    }
  } else {
    cs.derive_reserve_requirements();
  }

  if (j.contains("ref_node")) cs.ref_node = cs.node_index(j.at("ref_node").get<std::string>());
  return cs;
}

CaseData load_case(const std::string& path) { return parse_case(slurp(path)); }

std::string dump_case(const CaseData& cs) {
  json j;
  j["name"] = cs.name;
  j["shed_cost"] = cs.shed_cost;
  for (const auto& a : cs.areas) j["areas"].push_back({{"id", a.id}});
  for (const auto& n : cs.nodes)
    j["nodes"].push_back({{"id", n.id}, {"area", cs.areas[n.area].id}, {"demand", n.demand}});
  for (const auto& e : cs.links)
    j["links"].push_back(
        {{"id", e.id}, {"from", cs.areas[e.area_from].id}, {"to", cs.areas[e.area_to].id}});
  for (const auto& l : cs.lines) {
    json jl = {{"id", l.id},
               {"from", cs.nodes[l.from].id},
               {"to", cs.nodes[l.to].id},
               {"capacity", l.capacity},
               {"susceptance", l.susceptance}};
    if (l.link >= 0) jl["link"] = cs.links[l.link].id;
    j["lines"].push_back(jl);
  }
  for (const auto& g : cs.gens) {
    json jg = {{"id", g.id},
               {"node", cs.nodes[g.node].id},
               {"pmax", g.pmax},
               {"cost", g.cost},
               {"flexible", g.flexible}};
    if (g.flexible) {
      jg["reserve_max_up"] = g.rmax_up;
      jg["reserve_max_dn"] = g.rmax_dn;
      jg["reserve_cost_up"] = g.rcost_up;
      jg["reserve_cost_dn"] = g.rcost_dn;
    }
    j["generators"].push_back(jg);
  }
  for (const auto& w : cs.wind)
    j["wind_farms"].push_back(
        {{"id", w.id}, {"node", cs.nodes[w.node].id}, {"capacity", w.capacity}});
  for (const auto& s : cs.scenarios) {
    json pr = json::object();
    for (size_t k = 0; k < cs.wind.size(); ++k) pr[cs.wind[k].id] = s.fraction[k];
    j["scenarios"].push_back({{"id", s.id}, {"probability", s.probability}, {"production", pr}});
  }
  json jc = json::object();
  for (size_t e = 0; e < cs.links.size(); ++e) jc[cs.links[e].id] = cs.existing_chi[e];
  j["existing_chi"] = jc;
  json jr = json::object();
  for (const auto& a : cs.areas) jr[a.id] = {{"up", a.rr_up}, {"dn", a.rr_dn}};
  j["reserve_requirements"] = jr;
  j["ref_node"] = cs.nodes[cs.ref_node].id;
  return j.dump(2);
}

void load_scenarios_csv(CaseData& cs, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CaseError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw CaseError(path + ": empty file");
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(tok);
    return out;
  };
  auto hdr = split(line);
  if (hdr.size() < 2 || hdr[0] != "scenario" || hdr[1] != "probability")
    throw CaseError(path + ": header must start with scenario,probability");
  std::vector<int> farm(hdr.size() - 2);
  for (size_t k = 2; k < hdr.size(); ++k) {
    int j = -1;
    for (size_t w = 0; w < cs.wind.size(); ++w)
      if (cs.wind[w].id == hdr[k]) j = (int)w;
    if (j < 0) throw CaseError(path + ": unknown wind farm " + hdr[k]);
    farm[k - 2] = j;
  }
  if (farm.size() != cs.wind.size()) throw CaseError(path + ": wind farm columns incomplete");
  std::vector<Scenario> scen;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != hdr.size()) throw CaseError(path + ": ragged row \"" + line + "\"");
    Scenario s;
    s.id = f[0];
    s.probability = std::stod(f[1]);
    s.fraction.assign(cs.wind.size(), 0.0);
    for (size_t k = 2; k < f.size(); ++k) s.fraction[farm[k - 2]] = std::stod(f[k]);
    scen.push_back(std::move(s));
  }
  if (scen.empty()) throw CaseError(path + ": no scenario rows");
  cs.scenarios = std::move(scen);
  cs.derive_reserve_requirements();
}

void validate_case(const CaseData& cs) {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) bad.push_back(msg);
  };

  check(!cs.areas.empty(), "no areas");
  check(!cs.nodes.empty(), "no nodes");
  check(!cs.scenarios.empty(), "no scenarios");
  check(cs.shed_cost > 0, "shed_cost must be positive");

  auto unique_ids = [&](auto const& v, const char* kind) {
    std::set<std::string> seen;
    for (const auto& x : v)
      if (!seen.insert(x.id).second) bad.push_back(std::string("duplicate ") + kind + " id " + x.id);
  };
  unique_ids(cs.areas, "area");
  unique_ids(cs.nodes, "node");
  unique_ids(cs.lines, "line");
  unique_ids(cs.links, "link");
  unique_ids(cs.gens, "generator");
  unique_ids(cs.wind, "wind farm");
  unique_ids(cs.scenarios, "scenario");

  for (const auto& n : cs.nodes) check(n.demand >= 0, "node " + n.id + ": negative demand");

  for (const auto& l : cs.lines) {
    check(l.from != l.to, "line " + l.id + ": self loop");
    check(l.capacity > 0, "line " + l.id + ": capacity must be positive");
    check(l.susceptance > 0, "line " + l.id + ": susceptance must be positive");
    int af = cs.nodes[l.from].area, at = cs.nodes[l.to].area;
    if (l.link < 0) {
      check(af == at, "line " + l.id + ": crosses areas but is not assigned to a link");
    } else {
      const Link& e = cs.links[l.link];
      bool match = (af == e.area_from && at == e.area_to) || (af == e.area_to && at == e.area_from);
      check(match, "line " + l.id + ": endpoints do not match link " + e.id);
    }
  }
  for (const auto& e : cs.links) {
    check(e.area_from != e.area_to, "link " + e.id + ": joins an area to itself");
    check(!e.lines.empty(), "link " + e.id + ": has no tie-lines");
  }
  for (const auto& g : cs.gens) {
    check(g.pmax >= 0, "generator " + g.id + ": negative pmax");
    check(g.rmax_up >= 0 && g.rmax_dn >= 0, "generator " + g.id + ": negative reserve capacity");
    check(g.rmax_up <= g.pmax, "generator " + g.id + ": reserve_max_up exceeds pmax");
    if (!g.flexible)
      check(g.rmax_up == 0 && g.rmax_dn == 0,
            "generator " + g.id + ": inflexible but offers reserve");
  }
  for (const auto& w : cs.wind) check(w.capacity >= 0, "wind farm " + w.id + ": negative capacity");

  double ptot = 0.0;
  for (const auto& s : cs.scenarios) {
    check(s.probability >= 0, "scenario " + s.id + ": negative probability");
    ptot += s.probability;
    for (size_t k = 0; k < s.fraction.size(); ++k)
      check(s.fraction[k] >= 0 && s.fraction[k] <= 1.0 + 1e-9,
            "scenario " + s.id + ": production fraction for " + cs.wind[k].id + " outside [0,1]");
  }
  check(std::abs(ptot - 1.0) <= 1e-9, "scenario probabilities sum to " + std::to_string(ptot));

  check(cs.existing_chi.size() == cs.links.size(), "existing_chi size mismatch");
  for (size_t e = 0; e < cs.existing_chi.size(); ++e)
    check(cs.existing_chi[e] >= 0 && cs.existing_chi[e] <= 1,
          "existing_chi[" + cs.links[e].id + "] outside [0,1]");

  for (const auto& a : cs.areas) check(a.rr_up >= 0 && a.rr_dn >= 0, "area " + a.id + ": negative reserve requirement");

  // connectivity over all lines
  if (!cs.nodes.empty()) {
    std::vector<int> mark(cs.nodes.size(), 0);
    std::vector<int> stack{cs.ref_node};
    mark[cs.ref_node] = 1;
    while (!stack.empty()) {
      int n = stack.back();
      stack.pop_back();
      for (const auto& l : cs.lines) {
        int other = l.from == n ? l.to : l.to == n ? l.from : -1;
        if (other >= 0 && !mark[other]) {
          mark[other] = 1;
          stack.push_back(other);
        }
      }
    }
    for (size_t n = 0; n < cs.nodes.size(); ++n)
      check(mark[n] == 1, "node " + cs.nodes[n].id + " is disconnected from the reference node");
  }

  if (!bad.empty()) {
    std::string msg = "case validation failed:";
    for (const auto& m : bad) msg += "\n  - " + m;
    throw CaseError(msg);
  }
}

}  // namespace coalloc

#include "coalloc/types.hpp"

#include <algorithm>
#include <limits>

namespace coalloc {

double CaseData::wind_mean(int j) const {
  double m = 0.0;
  for (size_t s = 0; s < scenarios.size(); ++s)
    m += scenarios[s].probability * wind_mw(j, (int)s);
  return m;
}

double CaseData::link_capacity(int e) const {
  double t = 0.0;
  for (int l : links[e].lines) t += lines[l].capacity;
  return t;
}

namespace {
template <class T>
int find_id(const std::vector<T>& v, const std::string& id) {
  for (size_t k = 0; k < v.size(); ++k)
    if (v[k].id == id) return (int)k;
  return -1;
}
}  // namespace

int CaseData::area_index(const std::string& id) const {
  int k = find_id(areas, id);
  if (k < 0) throw CaseError("unknown area id: " + id);
  return k;
}

int CaseData::node_index(const std::string& id) const {
  int k = find_id(nodes, id);
  if (k < 0) throw CaseError("unknown node id: " + id);
  return k;
}

int CaseData::link_index(const std::string& id) const {
  int k = find_id(links, id);
  if (k < 0) throw CaseError("unknown link id: " + id);
  return k;
}

std::vector<int> CaseData::internal_links(Coalition c) const {
  std::vector<int> out;
  for (size_t e = 0; e < links.size(); ++e)
    if (c.contains(links[e].area_from) && c.contains(links[e].area_to)) out.push_back((int)e);
  return out;
}

std::vector<int> CaseData::locked_links(const std::vector<double>& chi, Coalition c) const {
  std::vector<int> out;
  for (size_t e = 0; e < links.size(); ++e) {
    bool outside = !c.contains(links[e].area_from) || !c.contains(links[e].area_to);
    if (chi[e] <= 1e-12 && outside) out.push_back((int)e);
  }
  return out;
}

std::string CaseData::coalition_string(Coalition c) const {
  if (c == Coalition::all((int)areas.size())) return "ALL";
  std::string s;
  for (size_t a = 0; a < areas.size(); ++a)
    if (c.contains((int)a)) {
      if (!s.empty()) s += ",";
      s += areas[a].id;
    }
  return s.empty() ? "-" : s;
}

Coalition CaseData::parse_coalition(const std::string& spec) const {
  if (spec == "ALL" || spec == "all") return Coalition::all((int)areas.size());
  Coalition c;
  if (spec.empty() || spec == "-") return c;
  size_t pos = 0;
  while (pos <= spec.size()) {
    size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    std::string tok = spec.substr(pos, comma - pos);
    if (!tok.empty()) c = c.with(area_index(tok));
    pos = comma + 1;
  }
  return c;
}

void CaseData::derive_reserve_requirements() {
  for (size_t a = 0; a < areas.size(); ++a) {
    double mean = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    bool any = false;
    for (size_t s = 0; s < scenarios.size(); ++s) {
      double tot = 0.0;
      for (size_t j = 0; j < wind.size(); ++j)
        if (nodes[wind[j].node].area == (int)a) {
          tot += wind_mw((int)j, (int)s);
          any = true;
        }
      lo = std::min(lo, tot);
      hi = std::max(hi, tot);
      mean += scenarios[s].probability * tot;
    }
    if (!any || scenarios.empty()) {
      areas[a].rr_up = areas[a].rr_dn = 0.0;
      continue;
    }
    areas[a].rr_up = std::max(0.0, mean - lo);
    areas[a].rr_dn = std::max(0.0, hi - mean);
  }
}

}  // namespace coalloc

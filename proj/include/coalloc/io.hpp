// Case ingestion: JSON case files, CSV scenario tables, round-trip serialization.
#pragma once

#include <iosfwd>
#include <string>

#include "coalloc/types.hpp"

namespace coalloc {

CaseData load_case(const std::string& path);
CaseData parse_case(const std::string& json_text);
std::string dump_case(const CaseData& cs);  // inverse of parse_case up to key order

// Replace cs.scenarios from a wide CSV: header "scenario,probability,<farm id>..."
// with one row per scenario; fractions of installed capacity.
void load_scenarios_csv(CaseData& cs, const std::string& path);

// Structural + numeric sanity checks; throws CaseError with all violations listed.
void validate_case(const CaseData& cs);

}  // namespace coalloc

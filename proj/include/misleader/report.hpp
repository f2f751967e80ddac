#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace misleader {

/// Loads one results file; schema problems name the file and field.
nlohmann::json load_results_file(const std::string& path);

/// Text tables from one or more results records: clone accuracy by defense,
/// serving utility, clone-arch x defense-arch matrix (when per-member attack
/// results exist), and a budget sweep series (when several budgets exist).
std::string render_report(const std::vector<nlohmann::json>& results,
                          const std::vector<std::string>& labels);

}  // namespace misleader

#include "misleader/report.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "misleader/core.hpp"

namespace misleader {

using nlohmann::json;

namespace {

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v << "%";
  return os.str();
}

void require(bool ok, const std::string& path, const std::string& field) {
  if (!ok) throw SchemaError("results file " + path + ": missing or malformed '" + field + "'");
}

struct TextTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::vector<std::size_t> width(header.size(), 0);
    auto widen = [&](const std::vector<std::string>& row) {
      for (std::size_t i = 0; i < row.size(); ++i)
        width[i] = std::max(width[i], row[i].size());
    };
    widen(header);
    for (const auto& r : rows) widen(r);

    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& row) {
      for (std::size_t i = 0; i < row.size(); ++i)
        os << (i ? "  " : "") << std::left << std::setw(int(width[i])) << row[i];
      os << "\n";
    };
    line(header);
    std::vector<std::string> rule;
    for (std::size_t w : width) rule.push_back(std::string(w, '-'));
    line(rule);
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

// "member0:mlp[...]" -> member arch id; plain conditions map to themselves
std::string condition_defense_arch(const std::string& condition) {
  const auto colon = condition.find(':');
  if (condition.rfind("member", 0) == 0 && colon != std::string::npos)
    return condition.substr(colon + 1);
  return condition;
}

}  // namespace

json load_results_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("report: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw SchemaError("results file " + path + ": invalid JSON: " + e.what());
  }
  require(j.contains("target") && j["target"].contains("test_accuracy"), path,
          "target.test_accuracy");
  require(j.contains("defense") && j["defense"].contains("ensemble_test_accuracy"), path,
          "defense.ensemble_test_accuracy");
  require(j.contains("attacks") && j["attacks"].is_array(), path, "attacks");
  for (const auto& a : j["attacks"]) {
    require(a.contains("name") && a.contains("conditions") && a["conditions"].is_object(),
            path, "attacks[].conditions");
    for (const auto& [cname, c] : a["conditions"].items())
      require(c.contains("clone_test_accuracy"), path,
              "attacks[].conditions." + cname + ".clone_test_accuracy");
  }
  return j;
}

std::string render_report(const std::vector<json>& results,
                          const std::vector<std::string>& labels) {
  if (results.empty()) throw InvalidArgument("report: no results records");
  std::ostringstream out;

  // ---- clone accuracy by defense -----------------------------------------
  {
    std::set<std::string> cond_names;
    for (const auto& r : results)
      for (const auto& a : r.at("attacks"))
        for (const auto& [cname, c] : a.at("conditions").items()) cond_names.insert(cname);

    TextTable t;
    t.header = {"run", "attack", "clone"};
    for (const auto& c : cond_names) t.header.push_back(c);
    for (std::size_t ri = 0; ri < results.size(); ++ri) {
      for (const auto& a : results[ri].at("attacks")) {
        std::vector<std::string> row = {labels[ri], a.at("name").get<std::string>(),
                                        a.value("clone_arch", std::string("?"))};
        for (const auto& c : cond_names) {
          if (a.at("conditions").contains(c))
            row.push_back(pct(a.at("conditions").at(c).at("clone_test_accuracy").get<double>()));
          else
            row.push_back("-");
        }
        t.rows.push_back(std::move(row));
      }
    }
    out << "Clone accuracy by defense (lower = stronger defense)\n" << t.render() << "\n";
  }

  // ---- serving utility ----------------------------------------------------
  {
    TextTable t;
    t.header = {"serving accuracy"};
    for (const auto& l : labels) t.header.push_back(l);
    std::vector<std::pair<std::string, std::string>> keys = {
        {"undefended target", "target_test_accuracy"},
        {"randp-wrapped target", "randp_test_accuracy"},
        {"misleader ensemble", "ensemble_test_accuracy"},
    };
    for (const auto& [label, key] : keys) {
      std::vector<std::string> row = {label};
      for (const auto& r : results) {
        const json& d = r.at("defense");
        const json& tgt = r.at("target");
        if (key == "target_test_accuracy")
          row.push_back(pct(tgt.at("test_accuracy").get<double>()));
        else if (d.contains(key))
          row.push_back(pct(d.at(key).get<double>()));
        else
          row.push_back("-");
      }
      t.rows.push_back(std::move(row));
    }
    // member rows, first record decides the member list
    const json& members = results.front().at("defense").value("members", json::array());
    for (std::size_t mi = 0; mi < members.size(); ++mi) {
      std::vector<std::string> row = {"member " + std::to_string(mi) + " (" +
                                      members[mi].value("arch", std::string("?")) + ")"};
      for (const auto& r : results) {
        const json& ms = r.at("defense").value("members", json::array());
        row.push_back(mi < ms.size() ? pct(ms[mi].at("test_accuracy").get<double>()) : "-");
      }
      t.rows.push_back(std::move(row));
    }
    out << "Serving utility on clean held-out data\n" << t.render() << "\n";
  }

  // ---- clone arch x defense arch matrix ----------------------------------
  {
    std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> cells;
    std::set<std::string> defense_archs;
    for (const auto& r : results)
      for (const auto& a : r.at("attacks"))
        for (const auto& [cname, c] : a.at("conditions").items()) {
          if (cname.rfind("member", 0) != 0) continue;
          const std::string clone = a.value("clone_arch", std::string("?"));
          const std::string darch = condition_defense_arch(cname);
          auto& cell = cells[clone][darch];
          cell.first += c.at("clone_test_accuracy").get<double>();
          cell.second += 1;
          defense_archs.insert(darch);
        }
    if (cells.empty()) {
      out << "Clone-arch x defense-arch matrix: no per-member attack results "
             "(enable attacks_vs_members)\n\n";
    } else {
      TextTable t;
      t.header = {"clone \\ defense"};
      for (const auto& d : defense_archs) t.header.push_back(d);
      for (const auto& [clone, row_map] : cells) {
        std::vector<std::string> row = {clone};
        for (const auto& d : defense_archs) {
          auto it = row_map.find(d);
          row.push_back(it == row_map.end()
                            ? "-"
                            : pct(it->second.first / double(it->second.second)));
        }
        t.rows.push_back(std::move(row));
      }
      out << "Clone accuracy by clone/defense architecture (single-model oracles)\n"
          << t.render() << "\n";
    }
  }

  // ---- budget sweep -------------------------------------------------------
  {
    // (kind, clone arch, condition) -> budget -> accuracy
    std::map<std::string, std::map<std::size_t, double>> series;
    for (const auto& r : results)
      for (const auto& a : r.at("attacks"))
        for (const auto& [cname, c] : a.at("conditions").items()) {
          if (cname.rfind("member", 0) == 0) continue;
          const std::string key = a.value("kind", std::string("?")) + "/" +
                                  a.value("clone_arch", std::string("?")) + "/" + cname;
          series[key][a.value("budget", std::size_t(0))] =
              c.at("clone_test_accuracy").get<double>();
        }
    bool any = false;
    for (const auto& [key, by_budget] : series) any = any || by_budget.size() > 1;
    if (!any) {
      out << "Budget sweep: single budget per attack, nothing to sweep\n";
    } else {
      TextTable t;
      t.header = {"attack/clone/defense", "budget", "clone accuracy"};
      for (const auto& [key, by_budget] : series) {
        if (by_budget.size() < 2) continue;
        for (const auto& [budget, acc] : by_budget)
          t.rows.push_back({key, std::to_string(budget), pct(acc)});
      }
      out << "Clone accuracy vs query budget\n" << t.render();
    }
  }

  return out.str();
}

}  // namespace misleader

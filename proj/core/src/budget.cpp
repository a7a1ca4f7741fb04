#include "geomine/budget.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "geomine/common.hpp"

namespace geomine {

BudgetVector allocate(std::span<const double> scores, double temperature) {
  if (scores.empty()) throw Error("cannot allocate a budget over zero clusters");
  if (!(temperature > 0.0)) throw Error("budget temperature must be positive");
  for (double s : scores) {
    if (!std::isfinite(s)) throw Error("budget scores must be finite");
  }
  const double peak = *std::max_element(scores.begin(), scores.end());
  BudgetVector b;
  b.r.resize(scores.size());
  double total = 0.0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    b.r[k] = std::exp((scores[k] - peak) / temperature);
    total += b.r[k];
  }
  for (auto& v : b.r) {
    // Keep every cluster strictly positive even when exp underflows.
    v = std::max(v / total, std::numeric_limits<double>::min());
  }
  return b;
}

BudgetVector uniform_budget(std::size_t k) {
  if (k == 0) throw Error("cannot allocate a budget over zero clusters");
  return BudgetVector{std::vector<double>(k, 1.0 / static_cast<double>(k))};
}

void write_budget_table(const std::filesystem::path& path, std::span<const double> scores, const BudgetVector& budget) {
  if (scores.size() != budget.size()) throw Error("score and budget lengths differ");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << "cluster_id,score,r_k\n";
  for (std::size_t k = 0; k < budget.size(); ++k) out << fmt::format("{},{:.17g},{:.17g}\n", k, scores[k], budget[k]);
}

BudgetVector read_budget_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open {}", path.string()));
  std::string line;
  std::getline(in, line);
  if (line != "cluster_id,score,r_k") throw Error(fmt::format("{}: not a budget table", path.string()));
  BudgetVector b;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    b.r.push_back(std::stod(line.substr(comma + 1)));
  }
  return b;
}

}  // namespace geomine

#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace geomine {

/// Mixing budget over macro clusters; sums to one.
struct BudgetVector {
  std::vector<double> r;

  std::size_t size() const { return r.size(); }
  double operator[](std::size_t k) const { return r[k]; }
};

/// r_k = exp(s_k / T) / sum_j exp(s_j / T). T = 1 is the canonical value.
BudgetVector allocate(std::span<const double> scores, double temperature = 1.0);

/// r_k = 1/K.
BudgetVector uniform_budget(std::size_t k);

void write_budget_table(const std::filesystem::path& path, std::span<const double> scores, const BudgetVector& budget);
BudgetVector read_budget_table(const std::filesystem::path& path);

}  // namespace geomine

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hidlr/problem.hpp"
#include "hidlr/rng.hpp"

namespace hidlr {

// Nonzero additive components of the synthetic NAM target, j = 1..6;
// j = 7..10 are zero functions.
double nam_component(int j, double x);

// 3000 x 10 design with X_ij ~ U(-2.5, 2.5) and y = sum_j f_j(X_j) + N(0, 1).
Dataset make_nam_synthetic(Rng& rng, std::size_t rows = 3000, std::size_t features = 10);

// Seeded shuffle then train_fraction / (1 - train_fraction) split.
TabularData split_train_test(const Dataset& all, Rng& rng, double train_fraction = 0.8);

// Z-scores features and targets of both splits with train-split statistics.
void standardize(TabularData& data);

// Reads a headered numeric CSV, holds out 20% by seeded shuffle and
// standardizes with train statistics. Throws ParseError with the offending
// row/column, MissingColumn when target_column is absent, IoError when the
// file cannot be opened.
TabularData load_csv_tabular(const std::filesystem::path& path, const std::string& target_column,
                             std::uint64_t seed, double train_fraction = 0.8);

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Mat& rows);

}  // namespace hidlr

#include "hidlr/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hidlr/errors.hpp"

namespace hidlr {

double nam_component(int j, double x) {
    switch (j) {
        case 1: return 2.0 * x * x * std::tanh(x);
        case 2: return std::sin(x) * std::cos(x) + x * x;
        case 3: return 20.0 / (1.0 + std::exp(-5.0 * std::sin(x)));
        case 4: {
            const double s = std::sin(2.0 * x);
            return 20.0 * s * s * s - 6.0 * std::cos(x) + x * x;
        }
        case 5: return x * x * x;
        case 6: return x;
        default: return 0.0;
    }
}

Dataset make_nam_synthetic(Rng& rng, std::size_t rows, std::size_t features) {
    Dataset d;
    d.features = Mat(rows, features);
    d.targets = Mat(rows, 1);
    for (std::size_t i = 0; i < rows; ++i) {
        double y = 0.0;
        for (std::size_t j = 0; j < features; ++j) {
            const double x = rng.uniform(-2.5, 2.5);
            d.features(i, j) = x;
            y += nam_component(static_cast<int>(j) + 1, x);
        }
        d.targets(i, 0) = y + rng.normal();
    }
    return d;
}

namespace {

Dataset take_rows(const Dataset& src, std::span<const std::size_t> idx, Split split) {
    Dataset out;
    out.split = split;
    out.features = Mat(idx.size(), src.features.cols);
    out.targets = Mat(idx.size(), src.targets.cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(src.features.row(idx[r]).begin(), src.features.cols, out.features.row(r).begin());
        std::copy_n(src.targets.row(idx[r]).begin(), src.targets.cols, out.targets.row(r).begin());
    }
    return out;
}

void zscore_columns(Mat& train, Mat& test) {
    const double n = static_cast<double>(train.rows);
    for (std::size_t j = 0; j < train.cols; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < train.rows; ++i) mean += train(i, j);
        mean /= n;
        double var = 0.0;
        for (std::size_t i = 0; i < train.rows; ++i) var += (train(i, j) - mean) * (train(i, j) - mean);
        double sd = std::sqrt(var / n);
        if (!(sd > 0.0)) sd = 1.0;
        for (std::size_t i = 0; i < train.rows; ++i) train(i, j) = (train(i, j) - mean) / sd;
        for (std::size_t i = 0; i < test.rows; ++i) test(i, j) = (test(i, j) - mean) / sd;
    }
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\"");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\"");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

}  // namespace

TabularData split_train_test(const Dataset& all, Rng& rng, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValidationError("split_train_test: train_fraction must lie in (0, 1)");
    }
    const auto perm = rng_permutation(rng, all.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(all.size())));
    TabularData out;
    out.train = take_rows(all, std::span(perm).first(n_train), Split::train);
    out.test = take_rows(all, std::span(perm).subspan(n_train), Split::test);
    return out;
}

void standardize(TabularData& data) {
    zscore_columns(data.train.features, data.test.features);
    zscore_columns(data.train.targets, data.test.targets);
}

TabularData load_csv_tabular(const std::filesystem::path& path, const std::string& target_column,
                             std::uint64_t seed, double train_fraction) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw ParseError("row 1", "missing header row");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = split_commas(line);

    std::size_t target = header.size();
    for (std::size_t j = 0; j < header.size(); ++j)
        if (header[j] == target_column) target = j;
    if (target == header.size()) throw MissingColumn("column '" + target_column + "' not in " + path.string());

    std::vector<Vec> feature_rows;
    Vec targets;
    std::size_t row_no = 1;
    while (std::getline(in, line)) {
        ++row_no;
        if (trim(line).empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != header.size()) {
            throw ParseError("row " + std::to_string(row_no),
                             "expected " + std::to_string(header.size()) + " cells, got " +
                                 std::to_string(cells.size()));
        }
        Vec feats;
        for (std::size_t j = 0; j < cells.size(); ++j) {
            double v = 0.0;
            const auto& c = cells[j];
            const auto [ptr, ec] = std::from_chars(c.data(), c.data() + c.size(), v);
            if (c.empty() || ec != std::errc() || ptr != c.data() + c.size() || !std::isfinite(v)) {
                throw ParseError("row " + std::to_string(row_no) + ", col " + std::to_string(j + 1),
                                 "not a finite number: '" + c + "'");
            }
            if (j == target) targets.push_back(v);
            else feats.push_back(v);
        }
        feature_rows.push_back(std::move(feats));
    }
    if (feature_rows.size() < 2) throw ParseError("", "need at least two data rows");

    Dataset all;
    all.features = Mat::from_rows(feature_rows);
    all.targets = Mat(targets.size(), 1, targets);

    Rng rng = Rng::for_stream(seed, 0x5eed'c5f0ULL);
    TabularData data = split_train_test(all, rng, train_fraction);
    standardize(data);
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != target) data.feature_names.push_back(header[j]);
    return data;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Mat& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
    out << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < rows.rows; ++i) {
        for (std::size_t j = 0; j < rows.cols; ++j) out << (j ? "," : "") << rows(i, j);
        out << '\n';
    }
}

}  // namespace hidlr

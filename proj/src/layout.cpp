#include <algorithm>
#include <numeric>
#include <string>

#include "hidlr/errors.hpp"
#include "hidlr/problem.hpp"

namespace hidlr {

bool is_valid_layout(std::span<const GroupSegment> segments, std::size_t dimension) {
    if (segments.empty()) return false;
    std::size_t next = 0;
    for (const auto& seg : segments) {
        if (seg.len == 0 || seg.offset != next) return false;
        next += seg.len;
    }
    return next == dimension;
}

GroupLayout::GroupLayout(std::vector<GroupSegment> segments, std::size_t dimension)
    : segments_(std::move(segments)), dimension_(dimension) {
    if (!is_valid_layout(segments_, dimension_)) {
        throw ValidationError("GroupLayout: segments must be nonempty, contiguous and cover [0, " +
                              std::to_string(dimension_) + ")");
    }
}

GroupLayout GroupLayout::from_sizes(const std::vector<std::string>& names,
                                    const std::vector<std::size_t>& sizes) {
    if (names.size() != sizes.size()) throw LengthMismatch("GroupLayout::from_sizes");
    std::vector<GroupSegment> segs;
    std::size_t offset = 0;
    for (std::size_t k = 0; k < names.size(); ++k) {
        segs.push_back({names[k], offset, sizes[k]});
        offset += sizes[k];
    }
    return GroupLayout(std::move(segs), offset);
}

GroupLayout GroupLayout::single(std::size_t dimension, std::string name) {
    return GroupLayout({{std::move(name), 0, dimension}}, dimension);
}

GroupLayout GroupLayout::per_coordinate(std::size_t dimension) {
    std::vector<GroupSegment> segs;
    for (std::size_t i = 0; i < dimension; ++i) segs.push_back({"w" + std::to_string(i), i, 1});
    return GroupLayout(std::move(segs), dimension);
}

std::vector<std::string> GroupLayout::names() const {
    std::vector<std::string> out;
    for (const auto& s : segments_) out.push_back(s.name);
    return out;
}

Batch Batch::all(Split split, std::size_t n) {
    Batch b;
    b.split = split;
    b.indices.resize(n);
    std::iota(b.indices.begin(), b.indices.end(), std::size_t{0});
    return b;
}

double LossProblem::value_and_grad(std::span<const double> w, const Batch& batch,
                                   std::span<double> grad_out) const {
    const Vec g = grad(w, batch);
    std::copy(g.begin(), g.end(), grad_out.begin());
    return loss(w, batch);
}

std::optional<Vec> LossProblem::group_line_losses(std::span<const double>, std::span<const double>,
                                                  const GroupLayout&, std::size_t,
                                                  std::span<const double>, const Batch&) const {
    return std::nullopt;
}

double CountingProblem::loss(std::span<const double> w, const Batch& batch) const {
    ++loss_calls_;
    return inner_.loss(w, batch);
}

Vec CountingProblem::grad(std::span<const double> w, const Batch& batch) const {
    ++grad_calls_;
    return inner_.grad(w, batch);
}

double CountingProblem::value_and_grad(std::span<const double> w, const Batch& batch,
                                       std::span<double> grad_out) const {
    ++loss_calls_;
    ++grad_calls_;
    return inner_.value_and_grad(w, batch, grad_out);
}

std::optional<Vec> CountingProblem::group_line_losses(std::span<const double> w,
                                                      std::span<const double> dir,
                                                      const GroupLayout& layout, std::size_t group,
                                                      std::span<const double> xis,
                                                      const Batch& batch) const {
    auto out = inner_.group_line_losses(w, dir, layout, group, xis, batch);
    if (out) loss_calls_ += xis.size();
    return out;
}

void check_batch(const LossProblem& problem, const Batch& batch) {
    if (batch.indices.empty()) throw ValidationError("batch is empty");
    const std::size_t n = problem.sample_count(batch.split);
    for (std::size_t i : batch.indices) {
        if (i >= n) {
            throw ValidationError("batch index " + std::to_string(i) + " out of range (n = " +
                                  std::to_string(n) + ")");
        }
    }
}

}  // namespace hidlr

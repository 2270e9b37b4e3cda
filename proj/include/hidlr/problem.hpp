#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hidlr/core_math.hpp"
#include "hidlr/rng.hpp"

namespace hidlr {

struct GroupSegment {
    std::string name;
    std::size_t offset = 0;
    std::size_t len = 0;

    bool operator==(const GroupSegment&) const = default;
};

// True iff the segments are nonempty, contiguous in listed order and cover
// exactly [0, dimension).
bool is_valid_layout(std::span<const GroupSegment> segments, std::size_t dimension);

// Disjoint partition of a flat parameter vector into K named groups.
class GroupLayout {
public:
    GroupLayout() = default;
    // Throws ValidationError unless is_valid_layout(segments, dimension).
    GroupLayout(std::vector<GroupSegment> segments, std::size_t dimension);

    static GroupLayout from_sizes(const std::vector<std::string>& names,
                                  const std::vector<std::size_t>& sizes);
    static GroupLayout single(std::size_t dimension, std::string name = "all");
    static GroupLayout per_coordinate(std::size_t dimension);

    std::size_t groups() const { return segments_.size(); }
    std::size_t dimension() const { return dimension_; }
    const GroupSegment& operator[](std::size_t k) const { return segments_[k]; }
    const std::vector<GroupSegment>& segments() const { return segments_; }
    std::vector<std::string> names() const;

    std::span<double> slice(std::span<double> w, std::size_t k) const {
        return w.subspan(segments_[k].offset, segments_[k].len);
    }
    std::span<const double> slice(std::span<const double> w, std::size_t k) const {
        return w.subspan(segments_[k].offset, segments_[k].len);
    }

    bool operator==(const GroupLayout&) const = default;

private:
    std::vector<GroupSegment> segments_;
    std::size_t dimension_ = 0;
};

enum class Split { train, test };

// Sample indices into one split of a problem's data. Pure functions without
// data use a single-index batch of their one pseudo-sample.
struct Batch {
    Split split = Split::train;
    std::vector<std::size_t> indices;

    static Batch all(Split split, std::size_t n);
};

struct Dataset {
    Mat features;  // n x d
    Mat targets;   // n x m
    Split split = Split::train;

    std::size_t size() const { return features.rows; }
};

struct TabularData {
    Dataset train;
    Dataset test;
    std::vector<std::string> feature_names;
};

// Differentiable loss with an analytic gradient. Implementations are
// immutable after construction and safe for concurrent calls.
class LossProblem {
public:
    virtual ~LossProblem() = default;

    virtual std::string id() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual GroupLayout default_layout() const = 0;
    // Coarse problem-specific partition used by the "named-split" strategy.
    virtual GroupLayout named_split_layout() const { return default_layout(); }
    virtual Vec initial_params(Rng& rng) const = 0;

    virtual double loss(std::span<const double> w, const Batch& batch) const = 0;
    virtual Vec grad(std::span<const double> w, const Batch& batch) const = 0;
    // Loss and gradient from one forward/backward sweep.
    virtual double value_and_grad(std::span<const double> w, const Batch& batch,
                                  std::span<double> grad_out) const;

    // Losses at w - xi * dir restricted to `group`, one per xi. Problems whose
    // loss separates over the given layout may override this with a cheaper
    // evaluation returning values identical to loss(); nullopt means "not
    // supported for this layout".
    virtual std::optional<Vec> group_line_losses(std::span<const double> w,
                                                 std::span<const double> dir,
                                                 const GroupLayout& layout, std::size_t group,
                                                 std::span<const double> xis,
                                                 const Batch& batch) const;

    // Number of samples in a split; pure functions report 1 train sample.
    virtual std::size_t sample_count(Split split) const = 0;
    virtual const Dataset* dataset(Split) const { return nullptr; }
    // Classification accuracy in [0, 1] for problems that have one.
    virtual std::optional<double> accuracy(std::span<const double>, const Batch&) const {
        return std::nullopt;
    }

    bool has_data() const { return dataset(Split::train) != nullptr; }
};

// Delegating wrapper that counts forward (loss) and backward (grad) calls.
class CountingProblem final : public LossProblem {
public:
    explicit CountingProblem(const LossProblem& inner) : inner_(inner) {}

    std::string id() const override { return inner_.id(); }
    std::size_t dimension() const override { return inner_.dimension(); }
    GroupLayout default_layout() const override { return inner_.default_layout(); }
    GroupLayout named_split_layout() const override { return inner_.named_split_layout(); }
    Vec initial_params(Rng& rng) const override { return inner_.initial_params(rng); }
    double loss(std::span<const double> w, const Batch& batch) const override;
    Vec grad(std::span<const double> w, const Batch& batch) const override;
    double value_and_grad(std::span<const double> w, const Batch& batch,
                          std::span<double> grad_out) const override;
    std::optional<Vec> group_line_losses(std::span<const double> w, std::span<const double> dir,
                                         const GroupLayout& layout, std::size_t group,
                                         std::span<const double> xis,
                                         const Batch& batch) const override;
    std::size_t sample_count(Split split) const override { return inner_.sample_count(split); }
    const Dataset* dataset(Split split) const override { return inner_.dataset(split); }
    std::optional<double> accuracy(std::span<const double> w, const Batch& b) const override {
        return inner_.accuracy(w, b);
    }

    std::size_t loss_calls() const { return loss_calls_; }
    std::size_t grad_calls() const { return grad_calls_; }
    void reset() { loss_calls_ = grad_calls_ = 0; }

private:
    const LossProblem& inner_;
    mutable std::size_t loss_calls_ = 0;
    mutable std::size_t grad_calls_ = 0;
};

// Throws ValidationError when the batch is empty or out of range.
void check_batch(const LossProblem& problem, const Batch& batch);

}  // namespace hidlr

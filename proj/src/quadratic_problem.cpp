#include <cmath>

#include "hidlr/errors.hpp"
#include "hidlr/problems.hpp"

namespace hidlr {
namespace {

class Quadratic final : public LossProblem {
public:
    Quadratic(Mat q, Vec c, GroupLayout layout, Vec init, std::string id)
        : q_(std::move(q)), c_(std::move(c)), layout_(std::move(layout)), init_(std::move(init)),
          id_(std::move(id)) {
        const std::size_t d = layout_.dimension();
        if (q_.rows != d || q_.cols != d || c_.size() != d || init_.size() != d) {
            throw DimensionMismatch("quadratic_problem: Q, c, init and layout disagree on dimension");
        }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < i; ++j)
                if (std::abs(q_(i, j) - q_(j, i)) > 1e-12 * (1.0 + std::abs(q_(i, j)))) {
                    throw ValidationError("quadratic_problem: Q must be symmetric");
                }
    }

    std::string id() const override { return id_; }
    std::size_t dimension() const override { return layout_.dimension(); }
    GroupLayout default_layout() const override { return layout_; }
    Vec initial_params(Rng&) const override { return init_; }
    std::size_t sample_count(Split split) const override { return split == Split::train ? 1 : 0; }

    double loss(std::span<const double> w, const Batch&) const override {
        const Vec qw = matvec(q_, w);
        return 0.5 * dot(w, qw) + dot(c_, w);
    }

    Vec grad(std::span<const double> w, const Batch&) const override {
        Vec g = matvec(q_, w);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c_[i];
        return g;
    }

private:
    Mat q_;
    Vec c_;
    GroupLayout layout_;
    Vec init_;
    std::string id_;
};

}  // namespace

std::unique_ptr<LossProblem> quadratic_problem(Mat q, Vec c, GroupLayout layout, Vec init, std::string id) {
    return std::make_unique<Quadratic>(std::move(q), std::move(c), std::move(layout), std::move(init),
                                       std::move(id));
}

}  // namespace hidlr

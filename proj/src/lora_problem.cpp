#include <cmath>

#include "hidlr/errors.hpp"
#include "hidlr/problems.hpp"

namespace hidlr {
namespace {

class LoraRegression final : public LossProblem {
public:
    LoraRegression(Rng& rng, const LoraOptions& o) : dim_(o.dim), rank_(o.rank), base_(o.dim, o.dim) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
        Mat teacher(dim_, dim_);
        for (auto& v : teacher.values) v = scale * rng.normal();
        train_ = sample(rng, teacher, o.n_train, Split::train);
        test_ = sample(rng, teacher, o.n_test, Split::test);
    }

    std::string id() const override { return "lora-synthetic"; }
    std::size_t dimension() const override { return 2 * dim_ * rank_; }
    GroupLayout default_layout() const override {
        return GroupLayout::from_sizes({"A", "B"}, {rank_ * dim_, dim_ * rank_});
    }

    // A ~ N(0, 1/dim), B = 0.
    Vec initial_params(Rng& rng) const override {
        Vec w(dimension(), 0.0);
        const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
        for (std::size_t i = 0; i < rank_ * dim_; ++i) w[i] = scale * rng.normal();
        return w;
    }

    std::size_t sample_count(Split split) const override { return set(split).size(); }
    const Dataset* dataset(Split split) const override { return &set(split); }

    double loss(std::span<const double> w, const Batch& batch) const override {
        return evaluate(w, batch, {});
    }

    Vec grad(std::span<const double> w, const Batch& batch) const override {
        Vec g(dimension(), 0.0);
        evaluate(w, batch, g);
        return g;
    }

    double value_and_grad(std::span<const double> w, const Batch& batch,
                          std::span<double> grad_out) const override {
        std::fill(grad_out.begin(), grad_out.end(), 0.0);
        return evaluate(w, batch, grad_out);
    }

private:
    Dataset sample(Rng& rng, const Mat& teacher, std::size_t n, Split split) const {
        Dataset d;
        d.split = split;
        d.features = Mat(n, dim_);
        for (auto& v : d.features.values) v = rng.normal();
        d.targets = Mat(n, dim_);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec y = matvec(teacher, d.features.row(i));
            std::copy(y.begin(), y.end(), d.targets.row(i).begin());
        }
        return d;
    }

    const Dataset& set(Split split) const { return split == Split::train ? train_ : test_; }

    double evaluate(std::span<const double> w, const Batch& batch, std::span<double> grad) const {
        if (w.size() != dimension()) throw LengthMismatch("lora: parameter length mismatch");
        check_batch(*this, batch);
        const Dataset& ds = set(batch.split);
        const double* a = w.data();                  // rank x dim
        const double* bm = w.data() + rank_ * dim_;  // dim x rank
        const double inv_b = 1.0 / static_cast<double>(batch.indices.size());
        Vec u(rank_), res(dim_), s(rank_);
        double total = 0.0;
        for (std::size_t idx : batch.indices) {
            const auto x = ds.features.row(idx);
            const auto y = ds.targets.row(idx);
            for (std::size_t q = 0; q < rank_; ++q) u[q] = dot(std::span(a + q * dim_, dim_), x);
            double sq = 0.0;
            for (std::size_t o = 0; o < dim_; ++o) {
                double p = dot(base_.row(o), x);
                for (std::size_t q = 0; q < rank_; ++q) p += bm[o * rank_ + q] * u[q];
                res[o] = p - y[o];
                sq += res[o] * res[o];
            }
            total += 0.5 * sq;
            if (grad.empty()) continue;
            double* ga = grad.data();
            double* gb = grad.data() + rank_ * dim_;
            std::fill(s.begin(), s.end(), 0.0);
            for (std::size_t o = 0; o < dim_; ++o) {
                const double r = res[o] * inv_b;
                for (std::size_t q = 0; q < rank_; ++q) {
                    gb[o * rank_ + q] += r * u[q];
                    s[q] += bm[o * rank_ + q] * r;
                }
            }
            for (std::size_t q = 0; q < rank_; ++q)
                for (std::size_t i = 0; i < dim_; ++i) ga[q * dim_ + i] += s[q] * x[i];
        }
        return total * inv_b;
    }

    std::size_t dim_;
    std::size_t rank_;
    Mat base_;  // frozen pretrained weight W0 (zero)
    Dataset train_;
    Dataset test_;
};

}  // namespace

std::unique_ptr<LossProblem> lora_regression_problem(Rng& rng, const LoraOptions& opts) {
    if (opts.dim == 0 || opts.rank < 1 || opts.rank > opts.dim) {
        throw ValidationError("lora_regression_problem: need 1 <= rank <= dim");
    }
    if (opts.n_train == 0) throw ValidationError("lora_regression_problem: n_train must be positive");
    return std::make_unique<LoraRegression>(rng, opts);
}

}  // namespace hidlr

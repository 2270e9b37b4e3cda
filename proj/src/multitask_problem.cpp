#include <algorithm>
#include <cmath>

#include "hidlr/errors.hpp"
#include "hidlr/problems.hpp"

namespace hidlr {
namespace {

double bce_with_logit(double z, double y) {
    return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

class MultitaskHead final : public MultitaskProblem {
public:
    MultitaskHead(Rng& rng, const MultitaskOptions& o) : tasks_(o.n_tasks), width_(o.width) {
        const std::size_t d = o.input_dim;
        const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
        Mat proj(width_, d);
        for (auto& v : proj.values) v = in_scale * rng.normal();
        Vec offset = rng_uniform(rng, width_, -0.5, 0.5);
        Mat teachers(tasks_, d);
        for (auto& v : teachers.values) v = in_scale * rng.normal();
        Vec noise(tasks_);
        for (std::size_t k = 0; k < tasks_; ++k) {
            const double frac = tasks_ > 1 ? static_cast<double>(k) / static_cast<double>(tasks_ - 1) : 0.0;
            noise[k] = o.noise_first + (o.noise_last - o.noise_first) * frac;
        }
        train_ = sample(rng, proj, offset, teachers, noise, o.n_train, Split::train);
        test_ = sample(rng, proj, offset, teachers, noise, o.n_test, Split::test);
    }

    std::string id() const override { return "multitask"; }
    std::size_t dimension() const override { return tasks_ * width_; }
    GroupLayout default_layout() const override {
        std::vector<std::string> names;
        for (std::size_t k = 0; k < tasks_; ++k) names.push_back("task" + std::to_string(k + 1));
        return GroupLayout::from_sizes(names, std::vector<std::size_t>(tasks_, width_));
    }
    Vec initial_params(Rng&) const override { return Vec(dimension(), 0.0); }
    std::size_t sample_count(Split split) const override { return set(split).size(); }
    const Dataset* dataset(Split split) const override { return &set(split); }
    std::size_t tasks() const override { return tasks_; }

    Vec task_losses(std::span<const double> w, const Batch& batch) const override {
        check(w, batch);
        Vec out(tasks_);
        for (std::size_t k = 0; k < tasks_; ++k) out[k] = task_loss(w.subspan(k * width_, width_), k, batch);
        return out;
    }

    double loss(std::span<const double> w, const Batch& batch) const override {
        return sum(task_losses(w, batch));
    }

    Vec grad(std::span<const double> w, const Batch& batch) const override {
        Vec g(dimension(), 0.0);
        value_and_grad(w, batch, g);
        return g;
    }

    double value_and_grad(std::span<const double> w, const Batch& batch,
                          std::span<double> grad_out) const override {
        check(w, batch);
        const Dataset& ds = set(batch.split);
        const double inv_b = 1.0 / static_cast<double>(batch.indices.size());
        std::fill(grad_out.begin(), grad_out.end(), 0.0);
        Vec losses(tasks_);
        for (std::size_t k = 0; k < tasks_; ++k) {
            const auto head = w.subspan(k * width_, width_);
            double* g = grad_out.data() + k * width_;
            double s = 0.0;
            for (std::size_t idx : batch.indices) {
                const auto phi = ds.features.row(idx);
                const double y = ds.targets(idx, k);
                const double z = dot(phi, head);
                s += bce_with_logit(z, y);
                const double dz = (sigmoid(z) - y) * inv_b;
                for (std::size_t i = 0; i < width_; ++i) g[i] += dz * phi[i];
            }
            losses[k] = s * inv_b;
        }
        return sum(losses);
    }

    // Only task `group`'s term changes along a one-group direction.
    std::optional<Vec> group_line_losses(std::span<const double> w, std::span<const double> dir,
                                         const GroupLayout& layout, std::size_t group,
                                         std::span<const double> xis,
                                         const Batch& batch) const override {
        if (layout != default_layout()) return std::nullopt;
        Vec losses = task_losses(w, batch);
        const std::size_t off = group * width_;
        Vec shifted(width_);
        Vec out;
        for (double xi : xis) {
            for (std::size_t i = 0; i < width_; ++i) shifted[i] = w[off + i] - xi * dir[off + i];
            Vec terms = losses;
            terms[group] = task_loss(shifted, group, batch);
            out.push_back(sum(terms));
        }
        return out;
    }

    std::optional<double> accuracy(std::span<const double> w, const Batch& batch) const override {
        check(w, batch);
        const Dataset& ds = set(batch.split);
        std::size_t correct = 0;
        for (std::size_t idx : batch.indices) {
            const auto phi = ds.features.row(idx);
            for (std::size_t k = 0; k < tasks_; ++k) {
                const double z = dot(phi, w.subspan(k * width_, width_));
                if ((z > 0.0) == (ds.targets(idx, k) > 0.5)) ++correct;
            }
        }
        return static_cast<double>(correct) / static_cast<double>(batch.indices.size() * tasks_);
    }

private:
    Dataset sample(Rng& rng, const Mat& proj, const Vec& offset, const Mat& teachers, const Vec& noise,
                   std::size_t n, Split split) const {
        const std::size_t d = proj.cols;
        Dataset ds;
        ds.split = split;
        ds.features = Mat(n, width_);
        ds.targets = Mat(n, tasks_);
        Vec x(d);
        for (std::size_t i = 0; i < n; ++i) {
            for (auto& v : x) v = rng.normal();
            for (std::size_t h = 0; h < width_; ++h) {
                const double a = dot(proj.row(h), x) + offset[h];
                ds.features(i, h) = a > 0.0 ? a : 0.0;
            }
            for (std::size_t k = 0; k < tasks_; ++k) {
                const double score = dot(teachers.row(k), x) + noise[k] * rng.normal();
                ds.targets(i, k) = score > 0.0 ? 1.0 : 0.0;
            }
        }
        return ds;
    }

    const Dataset& set(Split split) const { return split == Split::train ? train_ : test_; }

    void check(std::span<const double> w, const Batch& batch) const {
        if (w.size() != dimension()) throw LengthMismatch("multitask: parameter length mismatch");
        check_batch(*this, batch);
    }

    double task_loss(std::span<const double> head, std::size_t k, const Batch& batch) const {
        const Dataset& ds = set(batch.split);
        double s = 0.0;
        for (std::size_t idx : batch.indices) s += bce_with_logit(dot(ds.features.row(idx), head), ds.targets(idx, k));
        return s / static_cast<double>(batch.indices.size());
    }

    static double sum(const Vec& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }

    std::size_t tasks_;
    std::size_t width_;
    Dataset train_;
    Dataset test_;
};

}  // namespace

std::unique_ptr<MultitaskProblem> multitask_head_problem(Rng& rng, const MultitaskOptions& opts) {
    if (opts.n_tasks < 2) throw ValidationError("multitask_head_problem: need at least 2 tasks");
    if (opts.width == 0 || opts.input_dim == 0 || opts.n_train == 0) {
        throw ValidationError("multitask_head_problem: empty configuration");
    }
    return std::make_unique<MultitaskHead>(rng, opts);
}

}  // namespace hidlr

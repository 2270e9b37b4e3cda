#include <algorithm>
#include <cmath>

#include "hidlr/errors.hpp"
#include "hidlr/problems.hpp"
#include "mlp.hpp"

namespace hidlr {

bool moe_clean_label(double x1, double x2) { return std::sin(x1) + std::cos(x2) > 0.0; }

namespace {

using detail::Mlp;

// log(1 + e^z) - y z, stable for large |z|.
double bce_with_logit(double z, double y) {
    return std::max(z, 0.0) - y * z + std::log1p(std::exp(-std::abs(z)));
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

class Moe final : public MoeProblem {
public:
    Moe(Rng& rng, const MoeOptions& o)
        : experts_(o.experts), gate_({2, o.gate_hidden, o.experts}), expert_({2, o.expert_hidden, 1}) {
        std::size_t flips = 0;
        train_ = sample(rng, o, o.n_train, Split::train, flips);
        flipped_ = static_cast<double>(flips) / static_cast<double>(o.n_train);
        std::size_t unused = 0;
        test_ = sample(rng, o, o.n_test, Split::test, unused);
    }

    std::string id() const override { return "moe"; }
    std::size_t dimension() const override { return gate_.param_count() + experts_ * expert_.param_count(); }
    GroupLayout default_layout() const override {
        return GroupLayout::from_sizes({"gate", "experts"},
                                       {gate_.param_count(), experts_ * expert_.param_count()});
    }
    Vec initial_params(Rng& rng) const override {
        Vec w(dimension());
        gate_.init(std::span(w).first(gate_.param_count()), rng);
        for (std::size_t e = 0; e < experts_; ++e) expert_.init(expert_span(std::span<double>(w), e), rng);
        return w;
    }
    std::size_t sample_count(Split split) const override { return set(split).size(); }
    const Dataset* dataset(Split split) const override { return &set(split); }

    std::size_t gate_param_count() const override { return gate_.param_count(); }
    std::size_t expert_param_count() const override { return expert_.param_count(); }
    double flipped_fraction() const override { return flipped_; }

    double loss(std::span<const double> w, const Batch& batch) const override {
        Forward f;
        run(w, batch, f);
        return mean_bce(f.z, batch);
    }

    Vec grad(std::span<const double> w, const Batch& batch) const override {
        Vec g(dimension(), 0.0);
        value_and_grad(w, batch, g);
        return g;
    }

    double value_and_grad(std::span<const double> w, const Batch& batch,
                          std::span<double> grad_out) const override {
        Forward f;
        run(w, batch, f);
        const double value = mean_bce(f.z, batch);
        const Dataset& ds = set(batch.split);
        const std::size_t b = batch.indices.size();
        const std::size_t k = experts_;
        std::fill(grad_out.begin(), grad_out.end(), 0.0);

        Vec dgate(b * k);
        std::vector<Vec> dexpert(k, Vec(b));
        for (std::size_t n = 0; n < b; ++n) {
            const double dz = (sigmoid(f.z[n]) - ds.targets(batch.indices[n], 0)) / static_cast<double>(b);
            for (std::size_t e = 0; e < k; ++e) {
                const double p = f.probs[n * k + e];
                dexpert[e][n] = p * dz;
                dgate[n * k + e] = p * (f.expert_out[e][n] - f.z[n]) * dz;
            }
        }
        gate_.backward(w.first(gate_.param_count()), f.gate_ws, dgate, grad_out.first(gate_.param_count()));
        for (std::size_t e = 0; e < k; ++e) {
            expert_.backward(expert_span(w, e), f.expert_ws[e], dexpert[e], expert_span(grad_out, e));
        }
        return value;
    }

    std::optional<double> accuracy(std::span<const double> w, const Batch& batch) const override {
        const Vec z = logits(w, batch);
        const Dataset& ds = set(batch.split);
        std::size_t correct = 0;
        for (std::size_t n = 0; n < z.size(); ++n)
            if ((z[n] > 0.0) == (ds.targets(batch.indices[n], 0) > 0.5)) ++correct;
        return static_cast<double>(correct) / static_cast<double>(z.size());
    }

    Vec logits(std::span<const double> w, const Batch& batch) const override {
        Forward f;
        run(w, batch, f);
        return f.z;
    }

    Vec expert_logits(std::span<const double> w, std::size_t expert, const Batch& batch) const override {
        Forward f;
        run(w, batch, f);
        return f.expert_out.at(expert);
    }

private:
    struct Forward {
        Mlp::Workspace gate_ws;
        std::vector<Mlp::Workspace> expert_ws;
        std::vector<Vec> expert_out;
        Vec probs;
        Vec z;
    };

    template <typename T>
    std::span<T> expert_span(std::span<T> w, std::size_t e) const {
        return w.subspan(gate_.param_count() + e * expert_.param_count(), expert_.param_count());
    }

    Dataset sample(Rng& rng, const MoeOptions& o, std::size_t n, Split split, std::size_t& flips) const {
        Dataset d;
        d.split = split;
        d.features = Mat(n, 2);
        d.targets = Mat(n, 1);
        for (std::size_t i = 0; i < n; ++i) {
            const double x1 = rng.uniform(-o.input_range, o.input_range);
            const double x2 = rng.uniform(-o.input_range, o.input_range);
            bool label = moe_clean_label(x1, x2);
            if (rng.uniform() < o.label_noise) {
                label = !label;
                ++flips;
            }
            d.features(i, 0) = x1;
            d.features(i, 1) = x2;
            d.targets(i, 0) = label ? 1.0 : 0.0;
        }
        return d;
    }

    const Dataset& set(Split split) const { return split == Split::train ? train_ : test_; }

    void run(std::span<const double> w, const Batch& batch, Forward& f) const {
        if (w.size() != dimension()) throw LengthMismatch("moe: parameter length mismatch");
        check_batch(*this, batch);
        const Dataset& ds = set(batch.split);
        const std::size_t b = batch.indices.size();
        const std::size_t k = experts_;
        Vec input(b * 2);
        for (std::size_t n = 0; n < b; ++n) {
            input[2 * n] = ds.features(batch.indices[n], 0);
            input[2 * n + 1] = ds.features(batch.indices[n], 1);
        }
        gate_.forward(w.first(gate_.param_count()), input, b, f.gate_ws);
        const Vec& scores = f.gate_ws.acts.back();
        f.probs.resize(b * k);
        for (std::size_t n = 0; n < b; ++n) {
            double mx = scores[n * k];
            for (std::size_t e = 1; e < k; ++e) mx = std::max(mx, scores[n * k + e]);
            double sum = 0.0;
            for (std::size_t e = 0; e < k; ++e) {
                f.probs[n * k + e] = std::exp(scores[n * k + e] - mx);
                sum += f.probs[n * k + e];
            }
            for (std::size_t e = 0; e < k; ++e) f.probs[n * k + e] /= sum;
        }
        f.expert_ws.resize(k);
        f.expert_out.resize(k);
        for (std::size_t e = 0; e < k; ++e) {
            expert_.forward(expert_span(w, e), input, b, f.expert_ws[e]);
            f.expert_out[e] = f.expert_ws[e].acts.back();
        }
        f.z.assign(b, 0.0);
        for (std::size_t n = 0; n < b; ++n)
            for (std::size_t e = 0; e < k; ++e) f.z[n] += f.probs[n * k + e] * f.expert_out[e][n];
    }

    double mean_bce(const Vec& z, const Batch& batch) const {
        const Dataset& ds = set(batch.split);
        double s = 0.0;
        for (std::size_t n = 0; n < z.size(); ++n) s += bce_with_logit(z[n], ds.targets(batch.indices[n], 0));
        return s / static_cast<double>(z.size());
    }

    std::size_t experts_;
    Mlp gate_;
    Mlp expert_;
    Dataset train_;
    Dataset test_;
    double flipped_ = 0.0;
};

}  // namespace

std::unique_ptr<MoeProblem> moe_problem(Rng& rng, const MoeOptions& opts) {
    if (opts.experts == 0 || opts.n_train == 0) throw ValidationError("moe_problem: empty configuration");
    return std::make_unique<Moe>(rng, opts);
}

}  // namespace hidlr

#include <string>

#include "hidlr/errors.hpp"
#include "hidlr/problems.hpp"
#include "mlp.hpp"

namespace hidlr {
namespace {

using detail::Mlp;

class Nam final : public LossProblem {
public:
    Nam(TabularData data, std::vector<std::size_t> hidden, std::string id)
        : data_(std::move(data)), features_(data_.train.features.cols), net_(sizes(hidden)),
          per_net_(net_.param_count()), id_(std::move(id)) {
        if (data_.train.targets.cols != 1) throw DimensionMismatch("nam_problem: scalar target expected");
    }

    std::string id() const override { return id_; }
    std::size_t dimension() const override { return features_ * per_net_ + 1; }

    GroupLayout default_layout() const override {
        std::vector<std::string> names;
        std::vector<std::size_t> lens;
        for (std::size_t j = 0; j < features_; ++j) {
            names.push_back("f" + std::to_string(j + 1));
            lens.push_back(per_net_);
        }
        names.emplace_back("bias");
        lens.push_back(1);
        return GroupLayout::from_sizes(names, lens);
    }

    GroupLayout named_split_layout() const override {
        return GroupLayout::from_sizes({"subnets", "bias"}, {features_ * per_net_, 1});
    }

    Vec initial_params(Rng& rng) const override {
        Vec w(dimension(), 0.0);
        for (std::size_t j = 0; j < features_; ++j) net_.init(std::span(w).subspan(j * per_net_, per_net_), rng);
        return w;
    }

    std::size_t sample_count(Split split) const override { return set(split).size(); }
    const Dataset* dataset(Split split) const override { return &set(split); }

    double loss(std::span<const double> w, const Batch& batch) const override {
        check(w, batch);
        Vec outs;
        forward(w, batch, outs, nullptr);
        return mse(outs, w.back(), batch);
    }

    Vec grad(std::span<const double> w, const Batch& batch) const override {
        Vec g(dimension(), 0.0);
        value_and_grad(w, batch, g);
        return g;
    }

    double value_and_grad(std::span<const double> w, const Batch& batch,
                          std::span<double> grad_out) const override {
        check(w, batch);
        const std::size_t b = batch.indices.size();
        std::vector<Mlp::Workspace> ws(features_);
        Vec outs;
        forward(w, batch, outs, &ws);
        const double value = mse(outs, w.back(), batch);

        const Dataset& ds = set(batch.split);
        Vec dpred(b);
        double dbias = 0.0;
        for (std::size_t n = 0; n < b; ++n) {
            dpred[n] = 2.0 * (prediction(outs, w.back(), n, b) - ds.targets(batch.indices[n], 0)) /
                       static_cast<double>(b);
            dbias += dpred[n];
        }
        std::fill(grad_out.begin(), grad_out.end(), 0.0);
        for (std::size_t j = 0; j < features_; ++j) {
            net_.backward(w.subspan(j * per_net_, per_net_), ws[j], dpred,
                          grad_out.subspan(j * per_net_, per_net_));
        }
        grad_out[dimension() - 1] = dbias;
        return value;
    }

    std::optional<Vec> group_line_losses(std::span<const double> w, std::span<const double> dir,
                                         const GroupLayout& layout, std::size_t group,
                                         std::span<const double> xis,
                                         const Batch& batch) const override {
        if (layout != default_layout()) return std::nullopt;
        check(w, batch);
        const std::size_t b = batch.indices.size();
        Vec outs;
        forward(w, batch, outs, nullptr);
        Vec losses;
        losses.reserve(xis.size());
        if (group == features_) {
            for (double xi : xis) losses.push_back(mse(outs, w.back() - xi * dir.back(), batch));
            return losses;
        }
        const std::size_t off = group * per_net_;
        Vec shifted(per_net_);
        Vec input;
        Mlp::Workspace scratch;
        gather(group, batch, input);
        for (double xi : xis) {
            for (std::size_t i = 0; i < per_net_; ++i) shifted[i] = w[off + i] - xi * dir[off + i];
            net_.forward(shifted, input, b, scratch);
            std::copy(scratch.acts.back().begin(), scratch.acts.back().end(), outs.begin() + group * b);
            losses.push_back(mse(outs, w.back(), batch));
        }
        return losses;
    }

private:
    static std::vector<std::size_t> sizes(const std::vector<std::size_t>& hidden) {
        if (hidden.empty()) throw ValidationError("nam_problem: hidden_sizes must be nonempty");
        std::vector<std::size_t> s{1};
        s.insert(s.end(), hidden.begin(), hidden.end());
        s.push_back(1);
        return s;
    }

    const Dataset& set(Split split) const { return split == Split::train ? data_.train : data_.test; }

    void check(std::span<const double> w, const Batch& batch) const {
        if (w.size() != dimension()) throw LengthMismatch("nam: parameter length mismatch");
        check_batch(*this, batch);
    }

    void gather(std::size_t j, const Batch& batch, Vec& input) const {
        const Dataset& ds = set(batch.split);
        input.resize(batch.indices.size());
        for (std::size_t n = 0; n < input.size(); ++n) input[n] = ds.features(batch.indices[n], j);
    }

    // outs is features x batch: outs[j * b + n] = f_j(x_nj).
    void forward(std::span<const double> w, const Batch& batch, Vec& outs,
                 std::vector<Mlp::Workspace>* keep) const {
        const std::size_t b = batch.indices.size();
        outs.assign(features_ * b, 0.0);
        Vec input;
        Mlp::Workspace local;
        for (std::size_t j = 0; j < features_; ++j) {
            gather(j, batch, input);
            Mlp::Workspace& ws = keep ? (*keep)[j] : local;
            net_.forward(w.subspan(j * per_net_, per_net_), input, b, ws);
            std::copy(ws.acts.back().begin(), ws.acts.back().end(), outs.begin() + j * b);
        }
    }

    double prediction(const Vec& outs, double bias, std::size_t n, std::size_t b) const {
        double p = bias;
        for (std::size_t j = 0; j < features_; ++j) p += outs[j * b + n];
        return p;
    }

    double mse(const Vec& outs, double bias, const Batch& batch) const {
        const Dataset& ds = set(batch.split);
        const std::size_t b = batch.indices.size();
        double s = 0.0;
        for (std::size_t n = 0; n < b; ++n) {
            const double r = prediction(outs, bias, n, b) - ds.targets(batch.indices[n], 0);
            s += r * r;
        }
        return s / static_cast<double>(b);
    }

    TabularData data_;
    std::size_t features_;
    Mlp net_;
    std::size_t per_net_;
    std::string id_;
};

}  // namespace

std::unique_ptr<LossProblem> nam_problem(TabularData data, std::vector<std::size_t> hidden_sizes,
                                         std::size_t expected_features, std::string id) {
    if (expected_features != 0 && data.train.features.cols != expected_features) {
        throw DimensionMismatch("nam_problem: dataset has " + std::to_string(data.train.features.cols) +
                                " features but " + std::to_string(expected_features) +
                                " sub-networks were requested");
    }
    if (data.test.features.cols != data.train.features.cols) {
        throw DimensionMismatch("nam_problem: train/test feature counts differ");
    }
    return std::make_unique<Nam>(std::move(data), std::move(hidden_sizes), std::move(id));
}

}  // namespace hidlr

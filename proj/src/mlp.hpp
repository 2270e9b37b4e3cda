#pragma once

// Batched fully connected ReLU network over a flat parameter span. Internal
// to the problem zoo.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hidlr/core_math.hpp"
#include "hidlr/rng.hpp"

namespace hidlr::detail {

class Mlp {
public:
    // sizes = {in, hidden..., out}; hidden layers use ReLU, the output is linear.
    explicit Mlp(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            offsets_.push_back(count_);
            count_ += sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
        }
    }

    std::size_t param_count() const { return count_; }
    std::size_t inputs() const { return sizes_.front(); }
    std::size_t outputs() const { return sizes_.back(); }

    // Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    void init(std::span<double> params, Rng& rng) const {
        for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
            const std::size_t n = sizes_[l] * sizes_[l + 1] + sizes_[l + 1];
            for (std::size_t i = 0; i < n; ++i) params[offsets_[l] + i] = rng.uniform(-bound, bound);
        }
    }

    struct Workspace {
        std::vector<Vec> acts;  // acts[0] = input, acts.back() = output
        std::size_t batch = 0;
    };

    // input is batch x inputs(), row-major.
    void forward(std::span<const double> params, std::span<const double> input, std::size_t batch,
                 Workspace& ws) const {
        const std::size_t layers = sizes_.size() - 1;
        ws.batch = batch;
        ws.acts.resize(layers + 1);
        ws.acts[0].assign(input.begin(), input.end());
        for (std::size_t l = 0; l < layers; ++l) {
            const std::size_t nin = sizes_[l];
            const std::size_t nout = sizes_[l + 1];
            const double* wt = params.data() + offsets_[l];
            const double* bias = wt + nin * nout;
            const Vec& in = ws.acts[l];
            Vec& out = ws.acts[l + 1];
            out.resize(batch * nout);
            const bool hidden = l + 1 < layers;
            for (std::size_t n = 0; n < batch; ++n) {
                double* orow = out.data() + n * nout;
                for (std::size_t o = 0; o < nout; ++o) orow[o] = bias[o];
                const double* irow = in.data() + n * nin;
                for (std::size_t i = 0; i < nin; ++i) {
                    const double a = irow[i];
                    if (a == 0.0) continue;
                    const double* wrow = wt + i * nout;
                    for (std::size_t o = 0; o < nout; ++o) orow[o] += a * wrow[o];
                }
                if (hidden)
                    for (std::size_t o = 0; o < nout; ++o) orow[o] = orow[o] > 0.0 ? orow[o] : 0.0;
            }
        }
    }

    // Accumulates d(loss)/d(params) into grad given d(loss)/d(output)
    // (batch x outputs()). Optionally writes d(loss)/d(input) into dinput.
    void backward(std::span<const double> params, const Workspace& ws, std::span<const double> doutput,
                  std::span<double> grad, std::span<double> dinput = {}) const {
        const std::size_t layers = sizes_.size() - 1;
        const std::size_t batch = ws.batch;
        Vec delta(doutput.begin(), doutput.end());
        Vec prev;
        for (std::size_t l = layers; l-- > 0;) {
            const std::size_t nin = sizes_[l];
            const std::size_t nout = sizes_[l + 1];
            const double* wt = params.data() + offsets_[l];
            double* gw = grad.data() + offsets_[l];
            double* gb = gw + nin * nout;
            const Vec& in = ws.acts[l];
            const bool need_input = l > 0 || !dinput.empty();
            if (need_input) prev.assign(batch * nin, 0.0);
            for (std::size_t n = 0; n < batch; ++n) {
                const double* drow = delta.data() + n * nout;
                const double* irow = in.data() + n * nin;
                for (std::size_t o = 0; o < nout; ++o) gb[o] += drow[o];
                for (std::size_t i = 0; i < nin; ++i) {
                    const double a = irow[i];
                    const double* wrow = wt + i * nout;
                    if (a != 0.0) {
                        double* gwrow = gw + i * nout;
                        for (std::size_t o = 0; o < nout; ++o) gwrow[o] += a * drow[o];
                    }
                    if (need_input && (l == 0 || a > 0.0)) {
                        double s = 0.0;
                        for (std::size_t o = 0; o < nout; ++o) s += wrow[o] * drow[o];
                        prev[n * nin + i] = s;
                    }
                }
            }
            if (l == 0) {
                if (!dinput.empty()) std::copy(prev.begin(), prev.end(), dinput.begin());
            } else {
                delta.swap(prev);
            }
        }
    }

private:
    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;
    std::size_t count_ = 0;
};

}  // namespace hidlr::detail

#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "hidlr/core_math.hpp"
#include "hidlr/problem.hpp"
#include "hidlr/rng.hpp"

namespace hidlr {

double beale(double x, double y);
double rosenbrock(double x, double y);

// x^2 + 100 y^2 from (50, 1); groups {x}, {y}.
std::unique_ptr<LossProblem> ellipse_problem();

// Beale(x, 0.5) + Rosenbrock(1, y) from (4, 3); minimizer (3, 1).
std::unique_ptr<LossProblem> beale_rosenbrock_problem();

// 1/2 w^T Q w + c^T w with a caller-chosen layout and initial point. Used as
// the exact-curvature reference problem throughout the tests.
std::unique_ptr<LossProblem> quadratic_problem(Mat q, Vec c, GroupLayout layout, Vec init,
                                               std::string id = "quadratic");

// Neural additive model: one ReLU MLP 1 -> hidden... -> 1 per feature plus a
// scalar bias, mean squared error. Groups "f1".."fP" then "bias".
// `expected_features` (when nonzero) must equal the dataset's feature count.
std::unique_ptr<LossProblem> nam_problem(TabularData data, std::vector<std::size_t> hidden_sizes,
                                         std::size_t expected_features = 0,
                                         std::string id = "nam");

struct LoraOptions {
    std::size_t dim = 64;  // d_in = d_out
    std::size_t rank = 4;
    std::size_t n_train = 1000;
    std::size_t n_test = 200;
};

// Teacher-student regression y = W* x trained through W0 + B A with W0 = 0,
// B zero-initialized; loss 1/2 ||(W0 + B A) x - y||^2 averaged over the batch.
// Groups "A" (rank x dim) then "B" (dim x rank).
std::unique_ptr<LossProblem> lora_regression_problem(Rng& rng, const LoraOptions& opts = {});

struct MoeOptions {
    std::size_t n_train = 1000;
    std::size_t n_test = 200;
    std::size_t experts = 6;
    std::size_t expert_hidden = 64;
    std::size_t gate_hidden = 32;
    double label_noise = 0.10;
    double input_range = 3.0;  // inputs ~ U(-range, range)^2
};

bool moe_clean_label(double x1, double x2);

// Soft-routed mixture of experts for noisy 2D binary classification with
// binary cross-entropy on the gate-weighted expert logits. Groups "gate",
// "experts".
class MoeProblem;
std::unique_ptr<MoeProblem> moe_problem(Rng& rng, const MoeOptions& opts = {});

struct MultitaskOptions {
    std::size_t n_tasks = 40;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    std::size_t input_dim = 16;
    std::size_t width = 512;
    double noise_first = 0.1;
    double noise_last = 2.0;
};

// Frozen random ReLU features -> trainable linear head, one sigmoid task per
// output column; loss is the sum over tasks of each task's mean BCE.
class MultitaskProblem;
std::unique_ptr<MultitaskProblem> multitask_head_problem(Rng& rng, const MultitaskOptions& opts = {});

class MoeProblem : public LossProblem {
public:
    virtual std::size_t gate_param_count() const = 0;
    virtual std::size_t expert_param_count() const = 0;  // per expert
    // Gate-weighted logits for each sample of the batch.
    virtual Vec logits(std::span<const double> w, const Batch& batch) const = 0;
    // Logits of one expert alone.
    virtual Vec expert_logits(std::span<const double> w, std::size_t expert, const Batch& batch) const = 0;
    // Fraction of train labels that differ from the clean rule.
    virtual double flipped_fraction() const = 0;
};

class MultitaskProblem : public LossProblem {
public:
    virtual std::size_t tasks() const = 0;
    virtual Vec task_losses(std::span<const double> w, const Batch& batch) const = 0;
};

// Strategies: "default", "single" (K = 1), "per-coordinate", "named-split".
// Throws UnknownStrategy otherwise.
GroupLayout group_params(const LossProblem& problem, std::string_view strategy);

}  // namespace hidlr

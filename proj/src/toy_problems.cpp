#include <array>

#include "hidlr/errors.hpp"
#include "hidlr/problems.hpp"

namespace hidlr {

double beale(double x, double y) {
    const double t1 = 1.5 - x + x * y;
    const double t2 = 2.25 - x + x * y * y;
    const double t3 = 2.625 - x + x * y * y * y;
    return t1 * t1 + t2 * t2 + t3 * t3;
}

double rosenbrock(double x, double y) { return 100.0 * (y - x * x) * (y - x * x) + (1.0 - x) * (1.0 - x); }

namespace {

// Two-variable deterministic function; the batch is ignored.
class TwoDimProblem : public LossProblem {
public:
    TwoDimProblem(std::string id, std::array<double, 2> init) : id_(std::move(id)), init_(init) {}

    std::string id() const override { return id_; }
    std::size_t dimension() const override { return 2; }
    GroupLayout default_layout() const override {
        return GroupLayout({{"x", 0, 1}, {"y", 1, 1}}, 2);
    }
    Vec initial_params(Rng&) const override { return {init_[0], init_[1]}; }
    std::size_t sample_count(Split split) const override { return split == Split::train ? 1 : 0; }

    double loss(std::span<const double> w, const Batch&) const override {
        check(w);
        return value(w[0], w[1]);
    }
    Vec grad(std::span<const double> w, const Batch&) const override {
        check(w);
        const auto g = gradient(w[0], w[1]);
        return {g[0], g[1]};
    }

protected:
    virtual double value(double x, double y) const = 0;
    virtual std::array<double, 2> gradient(double x, double y) const = 0;

private:
    static void check(std::span<const double> w) {
        if (w.size() != 2) throw LengthMismatch("2D problem expects 2 parameters");
    }

    std::string id_;
    std::array<double, 2> init_;
};

class Ellipse final : public TwoDimProblem {
public:
    Ellipse() : TwoDimProblem("ellipse", {50.0, 1.0}) {}

protected:
    double value(double x, double y) const override { return x * x + 100.0 * y * y; }
    std::array<double, 2> gradient(double x, double y) const override { return {2.0 * x, 200.0 * y}; }
};

class BealeRosenbrock final : public TwoDimProblem {
public:
    BealeRosenbrock() : TwoDimProblem("beale-rosenbrock", {4.0, 3.0}) {}

protected:
    double value(double x, double y) const override { return beale(x, 0.5) + rosenbrock(1.0, y); }

    std::array<double, 2> gradient(double x, double y) const override {
        constexpr double by = 0.5;
        const double t1 = 1.5 - x + x * by;
        const double t2 = 2.25 - x + x * by * by;
        const double t3 = 2.625 - x + x * by * by * by;
        const double dx = 2.0 * t1 * (by - 1.0) + 2.0 * t2 * (by * by - 1.0) + 2.0 * t3 * (by * by * by - 1.0);
        // d/dy of Rosenbrock(1, y) = 200 (y - 1)
        const double dy = 200.0 * (y - 1.0);
        return {dx, dy};
    }
};

}  // namespace

std::unique_ptr<LossProblem> ellipse_problem() { return std::make_unique<Ellipse>(); }
std::unique_ptr<LossProblem> beale_rosenbrock_problem() { return std::make_unique<BealeRosenbrock>(); }

}  // namespace hidlr

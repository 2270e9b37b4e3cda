#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fd_check.hpp"
#include "hidlr/data.hpp"
#include "hidlr/errors.hpp"
#include "hidlr/problems.hpp"

using namespace hidlr;

namespace {

Batch one() { return Batch::all(Split::train, 1); }

TabularData small_nam_data(std::uint64_t seed, std::size_t rows = 200, std::size_t features = 10) {
    Rng rng(seed);
    Dataset all = make_nam_synthetic(rng, rows, features);
    return split_train_test(all, rng, 0.8);
}

Batch random_batch(const LossProblem& p, Rng& rng, std::size_t size) {
    Batch b;
    const auto perm = rng_permutation(rng, p.sample_count(Split::train));
    b.indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(size));
    return b;
}

std::vector<std::size_t> random_coords(Rng& rng, std::size_t dim, std::size_t count) {
    const auto perm = rng_permutation(rng, dim);
    return {perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(std::min(count, dim))};
}

// Random point near the problem's initialization, so every parameter is
// generic (no exact zeros that sit on a ReLU kink).
Vec jittered_init(const LossProblem& p, Rng& rng, double scale) {
    Vec w = p.initial_params(rng);
    for (auto& v : w) v += scale * rng.normal();
    return w;
}

std::filesystem::path temp_file(const std::string& name, const std::string& body) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream(path) << body;
    return path;
}

}  // namespace

TEST_CASE("ellipse values") {
    const auto p = ellipse_problem();
    CHECK(p->loss(Vec{50, 1}, one()) == 2600.0);
    CHECK(p->loss(Vec{0, 0}, one()) == 0.0);
    CHECK(p->grad(Vec{0, 0}, one()) == Vec{0, 0});
    CHECK(p->grad(Vec{50, 1}, one()) == Vec{100, 200});
    Rng rng(0);
    CHECK(p->initial_params(rng) == Vec{50, 1});
    CHECK(p->default_layout().groups() == 2);
}

TEST_CASE("beale plus rosenbrock values") {
    const auto p = beale_rosenbrock_problem();
    CHECK(p->loss(Vec{3, 1}, one()) == 0.0);
    CHECK(rosenbrock(1, 1) == 0.0);
    CHECK(p->loss(Vec{4, 3}, one()) == doctest::Approx(401.578125).epsilon(1e-15));
    CHECK(beale(4, 0.5) == doctest::Approx(0.25 + 0.5625 + 0.765625));
    Rng rng(0);
    CHECK(p->initial_params(rng) == Vec{4, 3});
}

TEST_CASE("nam target components") {
    CHECK(nam_component(6, 1.7) == 1.7);
    CHECK(nam_component(5, -2.0) == -8.0);
    CHECK(nam_component(1, 1.0) == doctest::Approx(1.523188).epsilon(1e-6));
    for (int j = 7; j <= 10; ++j) CHECK(nam_component(j, 0.3) == 0.0);
}

TEST_CASE("nam synthetic design") {
    Rng a(4), b(4);
    const Dataset d1 = make_nam_synthetic(a);
    const Dataset d2 = make_nam_synthetic(b);
    CHECK(d1.size() == 3000);
    CHECK(d1.features.cols == 10);
    CHECK(d1.features.values == d2.features.values);
    CHECK(d1.targets.values == d2.targets.values);
    for (double v : d1.features.values) {
        REQUIRE(v >= -2.5);
        REQUIRE(v < 2.5);
    }
}

TEST_CASE("nam constant predictor gives the target variance") {
    const auto p = nam_problem(small_nam_data(1), {32, 32});
    Vec w(p->dimension(), 0.0);
    const Dataset& train = *p->dataset(Split::train);
    const std::size_t n = train.size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += train.targets(i, 0);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (train.targets(i, 0) - mean) * (train.targets(i, 0) - mean);
    var /= static_cast<double>(n);
    w.back() = mean;
    CHECK(p->loss(w, Batch::all(Split::train, n)) == doctest::Approx(var).epsilon(1e-12));
}

TEST_CASE("nam layout and feature check") {
    const auto p = nam_problem(small_nam_data(2), {32, 32}, 10);
    const GroupLayout layout = p->default_layout();
    CHECK(layout.groups() == 11);
    CHECK(layout[10].name == "bias");
    CHECK(layout[10].len == 1);
    CHECK(layout[0].name == "f1");
    CHECK(layout[0].len == 2 * 32 + 33 * 32 + 33);
    CHECK_THROWS_AS(nam_problem(small_nam_data(2), {32, 32}, 8), DimensionMismatch);
    CHECK(group_params(*p, "named-split").groups() == 2);
}

TEST_CASE("lora zero-initialized B") {
    Rng rng(5);
    LoraOptions opts;
    opts.dim = 8;
    opts.rank = 2;
    opts.n_train = 50;
    opts.n_test = 10;
    const auto p = lora_regression_problem(rng, opts);
    const GroupLayout layout = p->default_layout();
    CHECK(layout.names() == std::vector<std::string>{"A", "B"});
    CHECK(group_params(*p, "default") == layout);

    const Batch all = Batch::all(Split::train, 50);
    const Dataset& train = *p->dataset(Split::train);
    double residual = 0.0;
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < train.targets.cols; ++j) residual += train.targets(i, j) * train.targets(i, j);
    residual = 0.5 * residual / 50.0;

    Vec w1 = p->initial_params(rng);
    Vec w2 = p->initial_params(rng);
    for (std::size_t i = layout[1].offset; i < w1.size(); ++i) CHECK(w1[i] == 0.0);
    CHECK(p->loss(w1, all) == doctest::Approx(residual).epsilon(1e-12));
    CHECK(p->loss(w2, all) == doctest::Approx(residual).epsilon(1e-12));

    Vec w = jittered_init(*p, rng, 0.3);
    std::fill(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(layout[0].len), 0.0);
    const Vec g = p->grad(w, all);
    for (std::size_t i = layout[1].offset; i < g.size(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("moe labels and degenerate mixture") {
    CHECK(moe_clean_label(0.0, 0.0));
    CHECK_FALSE(moe_clean_label(-1.5707963, 3.14159));

    Rng rng(6);
    const auto p = moe_problem(rng);
    CHECK(p->flipped_fraction() > 0.07);
    CHECK(p->flipped_fraction() < 0.13);
    CHECK(p->default_layout().names() == std::vector<std::string>{"gate", "experts"});

    Vec w = p->initial_params(rng);
    std::fill(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(p->gate_param_count()), 0.0);
    const std::size_t g = p->gate_param_count();
    const std::size_t e = p->expert_param_count();
    for (std::size_t k = 1; k < 6; ++k)
        std::copy(w.begin() + static_cast<std::ptrdiff_t>(g), w.begin() + static_cast<std::ptrdiff_t>(g + e),
                  w.begin() + static_cast<std::ptrdiff_t>(g + k * e));
    const Batch b = Batch::all(Split::train, 100);
    const Vec mixed = p->logits(w, b);
    const Vec single = p->expert_logits(w, 0, b);
    for (std::size_t n = 0; n < mixed.size(); ++n) CHECK(mixed[n] == doctest::Approx(single[n]).epsilon(1e-12));
}

TEST_CASE("moe flip fraction across seeds") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(seed);
        const auto p = moe_problem(rng);
        CHECK(std::abs(p->flipped_fraction() - 0.10) <= 0.03);
    }
}

TEST_CASE("multitask head at zero") {
    Rng rng(7);
    const auto p = multitask_head_problem(rng);
    const GroupLayout layout = p->default_layout();
    CHECK(layout.groups() == 40);
    for (const auto& s : layout.segments()) CHECK(s.len == 512);
    const Vec w(p->dimension(), 0.0);
    const Batch b = Batch::all(Split::train, 64);
    for (double l : p->task_losses(w, b)) CHECK(l == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    CHECK(p->loss(w, b) == doctest::Approx(40.0 * std::log(2.0)).epsilon(1e-13));
}

TEST_CASE("csv loading and standardization") {
    std::string body = "a,b,y\n";
    Rng rng(8);
    for (int i = 0; i < 200; ++i) {
        const double a = rng.uniform(0, 10), b = rng.normal() * 3 + 1;
        body += std::to_string(a) + "," + std::to_string(b) + "," + std::to_string(a - b) + "\n";
    }
    const auto path = temp_file("hidlr_test_table.csv", body);
    const TabularData d1 = load_csv_tabular(path, "y", 3);
    const TabularData d2 = load_csv_tabular(path, "y", 3);
    CHECK(d1.train.size() + d1.test.size() == 200);
    CHECK(d1.train.size() == 160);
    CHECK(d1.feature_names == std::vector<std::string>{"a", "b"});
    CHECK(d1.train.features.values == d2.train.features.values);
    CHECK(d1.test.targets.values == d2.test.targets.values);
    for (std::size_t j = 0; j < 2; ++j) {
        double m = 0.0, s = 0.0;
        const auto n = static_cast<double>(d1.train.size());
        for (std::size_t i = 0; i < d1.train.size(); ++i) m += d1.train.features(i, j);
        m /= n;
        for (std::size_t i = 0; i < d1.train.size(); ++i)
            s += (d1.train.features(i, j) - m) * (d1.train.features(i, j) - m);
        const double sd = std::sqrt(s / n);
        CHECK(std::abs(m) < 1e-9);
        CHECK(sd > 0.999);
        CHECK(sd < 1.001);
    }
    const TabularData other = load_csv_tabular(path, "y", 4);
    CHECK(other.train.features.values != d1.train.features.values);
}

TEST_CASE("csv errors") {
    const auto bad = temp_file("hidlr_test_bad.csv", "a,y\n1,2\n3,oops\n4,5\n");
    try {
        load_csv_tabular(bad, "y", 0);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.where() == "row 3, col 2");
    }
    const auto ok = temp_file("hidlr_test_ok.csv", "a,y\n1,2\n3,4\n4,5\n");
    CHECK_THROWS_AS(load_csv_tabular(ok, "target", 0), MissingColumn);
    CHECK_THROWS_AS(load_csv_tabular("/nonexistent/file.csv", "y", 0), IoError);
}

TEST_CASE("bundled housing table") {
    const TabularData d = load_csv_tabular(std::filesystem::path(HIDLR_SOURCE_DIR) / "data/california_housing.csv",
                                           "MedHouseVal", 0);
    CHECK(d.train.size() + d.test.size() == 20640);
    CHECK(d.train.features.cols == 8);
}

TEST_CASE("grouping strategies") {
    const auto e = ellipse_problem();
    const GroupLayout pc = group_params(*e, "per-coordinate");
    CHECK(pc.groups() == 2);
    CHECK(pc[0].len == 1);
    CHECK(pc[1].len == 1);
    CHECK_THROWS_AS(group_params(*e, "per-layer"), UnknownStrategy);

    Rng rng(9);
    std::vector<std::unique_ptr<LossProblem>> zoo;
    zoo.push_back(ellipse_problem());
    zoo.push_back(beale_rosenbrock_problem());
    zoo.push_back(nam_problem(small_nam_data(3), {8, 8}));
    zoo.push_back(lora_regression_problem(rng));
    zoo.push_back(moe_problem(rng));
    zoo.push_back(multitask_head_problem(rng));
    for (const auto& p : zoo) {
        for (const char* s : {"default", "single", "per-coordinate", "named-split"}) {
            const GroupLayout l = group_params(*p, s);
            CHECK(is_valid_layout(l.segments(), p->dimension()));
        }
        const GroupLayout single = group_params(*p, "single");
        CHECK(single.groups() == 1);
        CHECK(single[0].len == p->dimension());
    }
}

TEST_CASE("layout validation") {
    CHECK(is_valid_layout(std::vector<GroupSegment>{{"a", 0, 2}, {"b", 2, 3}}, 5));
    CHECK_FALSE(is_valid_layout(std::vector<GroupSegment>{{"a", 0, 2}, {"b", 3, 2}}, 5));
    CHECK_FALSE(is_valid_layout(std::vector<GroupSegment>{{"a", 0, 2}, {"b", 1, 4}}, 5));
    CHECK_FALSE(is_valid_layout(std::vector<GroupSegment>{{"a", 0, 0}, {"b", 0, 5}}, 5));
    CHECK_FALSE(is_valid_layout(std::vector<GroupSegment>{{"a", 0, 4}}, 5));
    CHECK_THROWS_AS(GroupLayout({{"a", 0, 2}}, 3), ValidationError);
    const GroupLayout l = GroupLayout::from_sizes({"x", "y"}, {2, 3});
    Vec w{1, 2, 3, 4, 5};
    CHECK(l.slice(std::span<const double>(w), 1).size() == 3);
    CHECK(l.slice(std::span<const double>(w), 1)[0] == 3.0);
}

TEST_CASE("loss is deterministic") {
    Rng rng(10);
    const auto nam = nam_problem(small_nam_data(4), {32, 32});
    const auto moe = moe_problem(rng);
    const Vec wn = nam->initial_params(rng);
    const Vec wm = moe->initial_params(rng);
    const Batch b = random_batch(*nam, rng, 64);
    CHECK(nam->loss(wn, b) == nam->loss(wn, b));
    CHECK(moe->loss(wm, b) == moe->loss(wm, b));
}

TEST_CASE("synthetic generators are seed-deterministic") {
    Rng a(12), b(12);
    const auto m1 = moe_problem(a);
    const auto m2 = moe_problem(b);
    CHECK(m1->dataset(Split::train)->features.values == m2->dataset(Split::train)->features.values);
    CHECK(m1->dataset(Split::test)->targets.values == m2->dataset(Split::test)->targets.values);
    const auto t1 = multitask_head_problem(a);
    const auto t2 = multitask_head_problem(b);
    CHECK(t1->dataset(Split::train)->targets.values == t2->dataset(Split::train)->targets.values);
    const auto l1 = lora_regression_problem(a);
    const auto l2 = lora_regression_problem(b);
    CHECK(l1->dataset(Split::train)->targets.values == l2->dataset(Split::train)->targets.values);
}

TEST_CASE("gradient suite: toy functions") {
    Rng rng(13);
    const auto e = ellipse_problem();
    const auto br = beale_rosenbrock_problem();
    for (int i = 0; i < 20; ++i) {
        const Vec w{rng.uniform(-5, 5), rng.uniform(-5, 5)};
        CHECK(fdcheck::max_rel_error(*e, w, one()) < 1e-5);
        CHECK(fdcheck::max_rel_error(*br, w, one()) < 1e-5);
    }
}

TEST_CASE("gradient suite: quadratic") {
    Rng rng(14);
    Mat q(4, 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j <= i; ++j) q(i, j) = q(j, i) = rng.normal() + (i == j ? 4.0 : 0.0);
    const auto p = quadratic_problem(q, rng_normal(rng, 4), GroupLayout::from_sizes({"a", "b"}, {1, 3}), Vec(4, 1.0));
    for (int i = 0; i < 20; ++i) CHECK(fdcheck::max_rel_error(*p, rng_normal(rng, 4), one()) < 1e-5);
}

// ReLU models: kinks inside the difference stencil are tallied and must stay rare.
void check_piecewise(const fdcheck::Report& r, std::size_t& checked, std::size_t& kinks) {
    CHECK(r.worst < 1e-5);
    checked += r.checked;
    kinks += r.kinks;
}

TEST_CASE("gradient suite: nam") {
    Rng rng(15);
    const auto small = nam_problem(small_nam_data(5, 200, 3), {8, 8});
    const auto full = nam_problem(small_nam_data(6, 400, 10), {32, 32});
    std::size_t checked = 0, kinks = 0;
    for (int i = 0; i < 20; ++i) {
        const Batch bs = random_batch(*small, rng, 32);
        check_piecewise(fdcheck::compare(*small, jittered_init(*small, rng, 0.05), bs), checked, kinks);
        const Batch bf = random_batch(*full, rng, 32);
        const Vec w = jittered_init(*full, rng, 0.05);
        check_piecewise(fdcheck::compare(*full, w, bf, random_coords(rng, w.size(), 60)), checked, kinks);
    }
    MESSAGE("nam: " << checked << " coordinates compared, " << kinks << " on a kink");
    CHECK(kinks * 100 <= checked);
}

TEST_CASE("gradient suite: lora") {
    Rng rng(16);
    LoraOptions opts;
    opts.dim = 12;
    opts.rank = 3;
    opts.n_train = 80;
    const auto p = lora_regression_problem(rng, opts);
    for (int i = 0; i < 20; ++i) {
        const Batch b = random_batch(*p, rng, 16);
        CHECK(fdcheck::max_rel_error(*p, jittered_init(*p, rng, 0.3), b) < 1e-5);
    }
}

TEST_CASE("gradient suite: moe") {
    Rng rng(17);
    MoeOptions opts;
    opts.n_train = 100;
    opts.n_test = 20;
    opts.expert_hidden = 8;
    opts.gate_hidden = 6;
    opts.experts = 3;
    const auto small = moe_problem(rng, opts);
    const auto full = moe_problem(rng);
    std::size_t checked = 0, kinks = 0;
    for (int i = 0; i < 20; ++i) {
        const Batch bs = random_batch(*small, rng, 16);
        check_piecewise(fdcheck::compare(*small, jittered_init(*small, rng, 0.05), bs), checked, kinks);
        const Batch bf = random_batch(*full, rng, 32);
        const Vec w = jittered_init(*full, rng, 0.05);
        check_piecewise(fdcheck::compare(*full, w, bf, random_coords(rng, w.size(), 60)), checked, kinks);
    }
    MESSAGE("moe: " << checked << " coordinates compared, " << kinks << " on a kink");
    CHECK(kinks * 100 <= checked);
}

TEST_CASE("gradient suite: multitask") {
    Rng rng(18);
    MultitaskOptions opts;
    opts.n_tasks = 3;
    opts.width = 16;
    opts.n_train = 60;
    opts.n_test = 10;
    const auto small = multitask_head_problem(rng, opts);
    const auto full = multitask_head_problem(rng);
    for (int i = 0; i < 20; ++i) {
        const Batch bs = random_batch(*small, rng, 16);
        CHECK(fdcheck::max_rel_error(*small, rng_normal(rng, small->dimension()), bs) < 1e-5);
        const Batch bf = random_batch(*full, rng, 16);
        Vec w = rng_normal(rng, full->dimension());
        for (auto& v : w) v *= 0.05;
        CHECK(fdcheck::max_rel_error(*full, w, bf, random_coords(rng, w.size(), 60)) < 1e-5);
    }
}

TEST_CASE("value_and_grad agrees with loss and grad") {
    Rng rng(19);
    const auto p = nam_problem(small_nam_data(7), {8, 8});
    const Vec w = jittered_init(*p, rng, 0.05);
    const Batch b = random_batch(*p, rng, 40);
    Vec g(p->dimension());
    const double v = p->value_and_grad(w, b, g);
    CHECK(v == p->loss(w, b));
    CHECK(g == p->grad(w, b));
}

TEST_CASE("line-loss fast path matches loss bit for bit") {
    Rng rng(20);
    std::vector<std::unique_ptr<LossProblem>> zoo;
    zoo.push_back(nam_problem(small_nam_data(8), {8, 8}));
    zoo.push_back(multitask_head_problem(rng));
    for (const auto& p : zoo) {
        const GroupLayout layout = p->default_layout();
        Vec w = p->initial_params(rng);
        for (auto& v : w) v += 0.01 * rng.normal();
        const Vec dir = rng_normal(rng, p->dimension());
        const Batch b = random_batch(*p, rng, 50);
        const Vec xis{-2e-3, -1e-3, 1e-3, 2e-3};
        for (std::size_t k = 0; k < layout.groups(); ++k) {
            const auto fast = p->group_line_losses(w, dir, layout, k, xis, b);
            REQUIRE(fast.has_value());
            for (std::size_t j = 0; j < xis.size(); ++j) {
                Vec x = w;
                const auto seg = layout[k];
                for (std::size_t i = seg.offset; i < seg.offset + seg.len; ++i) x[i] -= xis[j] * dir[i];
                CHECK((*fast)[j] == p->loss(x, b));
            }
        }
        CHECK_FALSE(p->group_line_losses(w, dir, group_params(*p, "single"), 0, xis, b).has_value());
    }
}

TEST_CASE("counting wrapper") {
    const auto inner = ellipse_problem();
    CountingProblem p(*inner);
    const Vec w{1, 2};
    (void)p.loss(w, one());
    (void)p.loss(w, one());
    (void)p.grad(w, one());
    Vec g(2);
    CHECK(p.value_and_grad(w, one(), g) == inner->loss(w, one()));
    CHECK(p.loss_calls() == 3);
    CHECK(p.grad_calls() == 2);
    p.reset();
    CHECK(p.loss_calls() == 0);
    CHECK(p.id() == inner->id());
}

TEST_CASE("batch validation") {
    const auto p = nam_problem(small_nam_data(9), {8, 8});
    Rng rng(0);
    const Vec w = p->initial_params(rng);
    CHECK_THROWS_AS(p->loss(w, Batch{}), ValidationError);
    Batch out_of_range;
    out_of_range.indices = {p->sample_count(Split::train)};
    CHECK_THROWS_AS(p->loss(w, out_of_range), ValidationError);
    CHECK_THROWS_AS(p->loss(Vec(3, 0.0), Batch::all(Split::train, 4)), LengthMismatch);
}

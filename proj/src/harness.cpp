#include "hidlr/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "hidlr/data.hpp"
#include "hidlr/errors.hpp"
#include "hidlr/optim.hpp"
#include "hidlr/problems.hpp"
#include "hidlr/rng.hpp"

namespace hidlr {

using nlohmann::ordered_json;

std::vector<std::string> problem_ids() { return preset_names(); }

std::unique_ptr<LossProblem> make_problem(const ProblemSpec& spec, std::uint64_t seed) {
    Rng rng = Rng::for_stream(seed, kDataStream);
    if (spec.id == "ellipse") return ellipse_problem();
    if (spec.id == "beale-rosenbrock") return beale_rosenbrock_problem();
    if (spec.id == "lora-synthetic") {
        LoraOptions o;
        o.dim = spec.dim;
        o.rank = spec.rank;
        if (spec.n_train) o.n_train = spec.n_train;
        if (spec.n_test) o.n_test = spec.n_test;
        return lora_regression_problem(rng, o);
    }
    if (spec.id == "nam-synthetic") {
        const std::size_t n_train = spec.n_train ? spec.n_train : 2400;
        const std::size_t n_test = spec.n_test ? spec.n_test : 600;
        const Dataset all = make_nam_synthetic(rng, n_train + n_test, 10);
        TabularData data =
            split_train_test(all, rng, static_cast<double>(n_train) / static_cast<double>(n_train + n_test));
        return nam_problem(std::move(data), spec.hidden, 10, "nam-synthetic");
    }
    if (spec.id == "california-housing") {
        TabularData data = load_csv_tabular(spec.csv, spec.target, seed);
        return nam_problem(std::move(data), spec.hidden, 8, "california-housing");
    }
    if (spec.id == "moe") {
        MoeOptions o;
        if (spec.n_train) o.n_train = spec.n_train;
        if (spec.n_test) o.n_test = spec.n_test;
        return moe_problem(rng, o);
    }
    if (spec.id == "multitask") {
        MultitaskOptions o;
        o.n_tasks = spec.n_tasks;
        if (spec.n_train) o.n_train = spec.n_train;
        if (spec.n_test) o.n_test = spec.n_test;
        return multitask_head_problem(rng, o);
    }
    throw ValidationError("unknown problem '" + spec.id + "'");
}

namespace {

double nan_to_inf(double v) { return std::isnan(v) ? std::numeric_limits<double>::infinity() : v; }

Vec broadcast(const Vec& v, std::size_t k, const char* what) {
    if (v.size() == k) return v;
    if (v.size() == 1) return Vec(k, v.front());
    throw ValidationError(std::string(what) + " has " + std::to_string(v.size()) + " entries for " +
                          std::to_string(k) + " groups");
}

// Seeded epoch-wise shuffling into consecutive batches; the last batch of an
// epoch may be short.
class BatchStream {
public:
    BatchStream(const LossProblem& problem, std::size_t batch_size, std::uint64_t seed, std::uint64_t stream)
        : rng_(Rng::for_stream(seed, stream)), data_(problem.has_data()) {
        n_ = problem.sample_count(Split::train);
        if (!data_) {
            size_ = n_;
        } else {
            if (batch_size > n_) {
                throw ValidationError("batch_size " + std::to_string(batch_size) + " exceeds the " +
                                      std::to_string(n_) + " training samples");
            }
            size_ = batch_size == 0 ? n_ : batch_size;
        }
    }

    std::size_t steps_per_epoch() const { return (n_ + size_ - 1) / size_; }
    std::size_t batch_size() const { return size_; }

    Batch next() {
        if (!data_) return Batch::all(Split::train, n_);
        if (pos_ == perm_.size()) {
            perm_ = rng_permutation(rng_, n_);
            pos_ = 0;
        }
        const std::size_t end = std::min(perm_.size(), pos_ + size_);
        Batch b{Split::train, {perm_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               perm_.begin() + static_cast<std::ptrdiff_t>(end)}};
        pos_ = end;
        return b;
    }

    // An independent random subset of batch_size samples.
    Batch sample() {
        if (!data_) return Batch::all(Split::train, n_);
        auto p = rng_permutation(rng_, n_);
        p.resize(size_);
        return Batch{Split::train, std::move(p)};
    }

private:
    Rng rng_;
    bool data_;
    std::size_t n_ = 0;
    std::size_t size_ = 0;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
};

enum class Mode { hidlr, scheduled };

struct RunSetup {
    Mode mode = Mode::hidlr;
    Schedule schedule = Schedule::constant;
    GroupLayout layout;
    Vec rates;  // eta0 for hidlr, base lr for scheduled runs
};

// Resumable training loop shared by every method.
class Trainer {
public:
    Trainer(const ExperimentConfig& cfg, const LossProblem& problem, RunSetup setup)
        : cfg_(cfg),
          problem_(problem),
          counted_(problem),
          setup_(std::move(setup)),
          batches_(problem, cfg.batch_size, cfg.seed, kBatchStream),
          probes_(problem, cfg.batch_size, cfg.seed, kProbeStream) {
        Rng init = Rng::for_stream(cfg.seed, kInitStream);
        w_ = problem.initial_params(init);
        if (w_.size() != setup_.layout.dimension()) throw LengthMismatch("layout does not cover the parameters");
        opt_ = OptimizerState::make(cfg.optimizer, w_.size(), cfg.hyper);
        hcfg_ = cfg.hidlr;
        hcfg_.eta0 = setup_.rates;
        if (setup_.mode == Mode::hidlr) hcfg_.validate(setup_.layout.groups());
        state_.eta = setup_.rates;
        spe_ = batches_.steps_per_epoch();
        total_ = cfg.iterations > 0 ? cfg.iterations : cfg.epochs * spe_;
        if (total_ == 0) throw ValidationError("run has zero iterations");
        record_.summary.groups = setup_.layout.groups();
        record_.summary.group_names = setup_.layout.names();
        record_.summary.iterations = total_;
    }

    std::size_t total() const { return total_; }
    std::size_t t() const { return t_; }

    void step() {
        const Batch batch = batches_.next();
        StepRow row;
        row.iteration = t_;
        row.epoch = t_ / spe_;
        if (setup_.mode == Mode::hidlr) {
            std::optional<Batch> pb;
            if (hcfg_.fresh_probe_batch && t_ % hcfg_.phi == 0) pb = probes_.sample();
            StepResult r = hidlr_step(counted_, w_, state_, opt_, hcfg_, setup_.layout, batch, t_,
                                      pb ? &*pb : nullptr);
            row.train_loss = r.loss;
            row.eta = state_.eta;
            if (r.refresh) {
                ++record_.summary.refreshes;
                if (r.refresh->accepted) ++record_.summary.accepted_refreshes;
                record_.refreshes.push_back(std::move(*r.refresh));
            }
        } else {
            Vec g(w_.size());
            row.train_loss = counted_.value_and_grad(w_, batch, g);
            const Vec dir = direction(opt_, g, w_);
            Vec lr(setup_.rates.size());
            for (std::size_t k = 0; k < lr.size(); ++k) lr[k] = scheduler_lr(setup_.schedule, t_, total_, setup_.rates[k]);
            if (opt_.kind == OptimizerKind::adamw && !opt_.hyper.decay_in_direction && opt_.hyper.weight_decay != 0.0) {
                apply_decoupled_decay(w_, setup_.layout, lr, opt_.hyper.weight_decay);
            }
            apply_update(w_, setup_.layout, lr, dir);
            row.eta = lr;
        }
        row.loss_calls = counted_.loss_calls();
        epoch_sum_ += row.train_loss;
        ++epoch_steps_;
        ++t_;
        if (t_ % spe_ == 0 || t_ == total_) {
            row.epoch_train_loss = epoch_sum_ / static_cast<double>(epoch_steps_);
            epoch_sum_ = 0.0;
            epoch_steps_ = 0;
            if (problem_.sample_count(Split::test) > 0) {
                const Batch test = Batch::all(Split::test, problem_.sample_count(Split::test));
                row.test_loss = problem_.loss(w_, test);
                ++record_.summary.eval_loss_calls;
                row.test_accuracy = problem_.accuracy(w_, test);
                if (row.test_accuracy) ++record_.summary.eval_loss_calls;
            }
        }
        record_.steps.push_back(std::move(row));
    }

    // Direction and rates the next step would use, without advancing any state.
    std::pair<Vec, Batch> peek_direction() {
        BatchStream copy = batches_;
        Batch batch = copy.next();
        OptimizerState opt = opt_;
        Vec g(w_.size());
        problem_.value_and_grad(w_, batch, g);
        return {direction(opt, g, w_), batch};
    }

    const Vec& params() const { return w_; }
    const Vec& eta() const { return state_.eta; }
    const GroupLayout& layout() const { return setup_.layout; }

    RunRecord finish() {
        RunSummary& s = record_.summary;
        s.epochs = (total_ + spe_ - 1) / spe_;
        s.loss_calls = counted_.loss_calls();
        s.grad_calls = counted_.grad_calls();
        s.final_eta = record_.steps.empty() ? state_.eta : record_.steps.back().eta;
        s.final_train_loss = problem_.loss(w_, Batch::all(Split::train, problem_.sample_count(Split::train)));
        ++s.eval_loss_calls;
        if (!record_.steps.empty()) {
            s.final_test_loss = record_.steps.back().test_loss;
            s.final_test_accuracy = record_.steps.back().test_accuracy;
        }
        if (setup_.mode == Mode::hidlr) {
            std::size_t expected = forward_pass_budget(total_, setup_.layout.groups(), hcfg_.phi);
            if (hcfg_.fresh_probe_batch) expected += (total_ + hcfg_.phi - 1) / hcfg_.phi;
            s.expected_loss_calls = expected;
            if (s.loss_calls != expected) {
                throw Error("loss-call audit failed: counted " + std::to_string(s.loss_calls) + ", expected " +
                            std::to_string(expected));
            }
        }
        record_.final_params = w_;
        return std::move(record_);
    }

private:
    const ExperimentConfig& cfg_;
    const LossProblem& problem_;
    CountingProblem counted_;
    RunSetup setup_;
    BatchStream batches_;
    BatchStream probes_;
    HiDlrConfig hcfg_;
    LrState state_;
    OptimizerState opt_;
    Vec w_;
    std::size_t spe_ = 1;
    std::size_t total_ = 0;
    std::size_t t_ = 0;
    double epoch_sum_ = 0.0;
    std::size_t epoch_steps_ = 0;
    RunRecord record_;
};

RunSetup setup_for(const ExperimentConfig& cfg, const LossProblem& problem) {
    RunSetup s;
    switch (cfg.method) {
        case Method::hidlr:
        case Method::hiulr: {
            s.mode = Mode::hidlr;
            s.layout = cfg.method == Method::hiulr ? group_params(problem, "single")
                                                   : group_params(problem, cfg.grouping);
            const Vec eta0 = cfg.hidlr.eta0.empty() ? Vec{cfg.eta0_default} : cfg.hidlr.eta0;
            s.rates = broadcast(eta0, s.layout.groups(), "hidlr.eta0");
            break;
        }
        case Method::constant:
        case Method::linear:
        case Method::cosine:
        case Method::grid:
            s.mode = Mode::scheduled;
            s.schedule = cfg.method == Method::linear   ? Schedule::linear
                         : cfg.method == Method::cosine ? Schedule::cosine
                                                        : Schedule::constant;
            s.layout = group_params(problem, cfg.grouping);
            s.rates = broadcast(cfg.lr, s.layout.groups(), "lr");
            break;
    }
    return s;
}

RunRecord train(const ExperimentConfig& cfg, const LossProblem& problem, RunSetup setup) {
    Trainer trainer(cfg, problem, std::move(setup));
    while (trainer.t() < trainer.total()) trainer.step();
    return trainer.finish();
}

RunRecord run_grid(const ExperimentConfig& cfg, const LossProblem& problem) {
    Vec grid = cfg.grid.empty() ? default_toy_grid() : cfg.grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    std::optional<RunRecord> best;
    double best_loss = std::numeric_limits<double>::infinity();
    double best_lr = grid.front();
    std::vector<GridEntry> entries;
    for (double lr : grid) {
        RunSetup s = setup_for(cfg, problem);
        s.rates.assign(s.layout.groups(), lr);
        RunRecord r = train(cfg, problem, std::move(s));
        const double score = nan_to_inf(r.summary.final_train_loss);
        entries.push_back({lr, score});
        if (!best || score < best_loss) {
            best_loss = score;
            best_lr = lr;
            best = std::move(r);
        }
    }
    best->summary.grid = std::move(entries);
    best->summary.grid_best_lr = best_lr;
    return std::move(*best);
}

}  // namespace

RunRecord run_experiment(const ExperimentConfig& cfg) {
    const std::string context = cfg.problem.id + "/" + to_string(cfg.method) + ": ";
    try {
        const auto problem = make_problem(cfg.problem, cfg.seed);
        if (cfg.method == Method::grid) return run_grid(cfg, *problem);
        return train(cfg, *problem, setup_for(cfg, *problem));
    } catch (const ValidationError&) {
        throw;
    } catch (const ParseError&) {
        throw;
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw Error(context + e.what());
    }
}

namespace {

ordered_json opt_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

ordered_json num(double v) { return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr); }

ordered_json vec_json(const Vec& v) {
    ordered_json a = ordered_json::array();
    for (double x : v) a.push_back(num(x));
    return a;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::string metrics_jsonl(const RunRecord& record) {
    std::string out;
    for (const auto& r : record.steps) {
        ordered_json j;
        j["iteration"] = r.iteration;
        j["epoch"] = r.epoch;
        j["train_loss"] = num(r.train_loss);
        j["epoch_train_loss"] = r.epoch_train_loss ? num(*r.epoch_train_loss) : ordered_json(nullptr);
        j["test_loss"] = r.test_loss ? num(*r.test_loss) : ordered_json(nullptr);
        j["test_accuracy"] = opt_json(r.test_accuracy);
        j["eta"] = vec_json(r.eta);
        j["loss_calls"] = r.loss_calls;
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::string probes_jsonl(const RunRecord& record) {
    std::string out;
    const auto& names = record.summary.group_names;
    for (const auto& d : record.refreshes) {
        const bool fitted = !d.fit.a.empty();
        for (std::size_t j = 0; j < d.xi.size(); ++j) {
            const std::size_t k = d.group[j];
            ordered_json r;
            r["t"] = d.t;
            r["row"] = j;
            r["group"] = k < names.size() ? names[k] : std::to_string(k);
            r["xi"] = num(d.xi[j]);
            r["delta_loss"] = j < d.delta_loss.size() ? num(d.delta_loss[j]) : ordered_json(nullptr);
            r["predicted"] = fitted ? num(d.fit.predicted[j]) : ordered_json(nullptr);
            r["a"] = fitted ? num(d.fit.a[k]) : ordered_json(nullptr);
            r["b"] = fitted ? num(d.fit.b[k]) : ordered_json(nullptr);
            r["r2"] = fitted ? num(d.fit.r2[k]) : ordered_json(nullptr);
            r["pooled_r2"] = fitted ? num(d.fit.pooled_r2) : ordered_json(nullptr);
            r["eta_star"] = fitted ? num(d.optimal.eta[k]) : ordered_json(nullptr);
            r["valid"] = fitted ? ordered_json(bool(d.optimal.valid[k])) : ordered_json(nullptr);
            r["floored"] = bool(d.floored[k]);
            r["eta_before"] = num(d.eta_before[k]);
            r["eta_after"] = num(d.eta_after[k]);
            r["accepted"] = d.accepted;
            r["reason"] = d.reason;
            out += r.dump();
            out += '\n';
        }
    }
    return out;
}

std::string summary_json(const RunRecord& record) {
    const RunSummary& s = record.summary;
    ordered_json j;
    j["iterations"] = s.iterations;
    j["epochs"] = s.epochs;
    j["groups"] = s.groups;
    j["group_names"] = s.group_names;
    j["final_train_loss"] = num(s.final_train_loss);
    j["final_test_loss"] = s.final_test_loss ? num(*s.final_test_loss) : ordered_json(nullptr);
    j["final_test_accuracy"] = opt_json(s.final_test_accuracy);
    j["loss_calls"] = s.loss_calls;
    j["grad_calls"] = s.grad_calls;
    j["eval_loss_calls"] = s.eval_loss_calls;
    j["total_loss_calls"] = s.loss_calls + s.eval_loss_calls;
    j["expected_loss_calls"] = s.expected_loss_calls ? ordered_json(*s.expected_loss_calls) : ordered_json(nullptr);
    j["refreshes"] = s.refreshes;
    j["accepted_refreshes"] = s.accepted_refreshes;
    j["final_eta"] = vec_json(s.final_eta);
    if (!s.grid.empty()) {
        ordered_json g = ordered_json::array();
        for (const auto& e : s.grid) g.push_back({{"lr", e.lr}, {"final_train_loss", num(e.final_train_loss)}});
        j["grid"] = std::move(g);
        j["grid_best_lr"] = opt_json(s.grid_best_lr);
    }
    return j.dump(2) + "\n";
}

void emit_metrics(const RunRecord& record, const std::filesystem::path& dir, const ExperimentConfig* cfg) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_file(dir / "metrics.jsonl", metrics_jsonl(record));
    write_file(dir / "probes.jsonl", probes_jsonl(record));
    write_file(dir / "summary.json", summary_json(record));
    if (cfg) write_file(dir / "config.json", to_json(*cfg).dump(2) + "\n");
}

TaylorTable taylor_diagnostics(const LossProblem& problem, std::span<const double> w, std::span<const double> dir,
                               const GroupLayout& layout, std::span<const double> eta,
                               const std::vector<Vec>& xi_grid, const Batch& batch) {
    const std::size_t k_groups = layout.groups();
    if (xi_grid.empty()) throw ValidationError("taylor_diagnostics: empty grid");
    if (xi_grid.size() != 1 && xi_grid.size() != k_groups) {
        throw LengthMismatch("taylor_diagnostics: need one grid or one per group");
    }
    for (const auto& g : xi_grid)
        if (g.empty()) throw ValidationError("taylor_diagnostics: empty grid");
    if (eta.size() != k_groups) throw LengthMismatch("taylor_diagnostics: one rate per group");

    const double loss0 = problem.loss(w, batch);
    const ProbeMatrix probes = build_probe_matrix(eta);
    const Vec dl = evaluate_probes(problem, w, dir, layout, probes, batch, loss0);
    const QuadraticFit fit = fit_diag_quadratic(probes, dl);

    TaylorTable table;
    table.eta.assign(eta.begin(), eta.end());
    table.a = fit.a;
    table.b = fit.b;
    table.r2.assign(k_groups, 0.0);
    Vec scratch(w.begin(), w.end());
    Vec all_measured;
    Vec all_predicted;
    for (std::size_t k = 0; k < k_groups; ++k) {
        const Vec& grid = xi_grid.size() == 1 ? xi_grid.front() : xi_grid[k];
        Vec measured;
        if (auto fast = problem.group_line_losses(w, dir, layout, k, grid, batch)) {
            measured = std::move(*fast);
        } else {
            const auto& seg = layout[k];
            for (double xi : grid) {
                for (std::size_t i = seg.offset; i < seg.offset + seg.len; ++i) scratch[i] = w[i] - xi * dir[i];
                measured.push_back(problem.loss(scratch, batch));
            }
            std::copy(w.begin() + seg.offset, w.begin() + seg.offset + seg.len, scratch.begin() + seg.offset);
        }
        Vec m_k;
        Vec p_k;
        for (std::size_t i = 0; i < grid.size(); ++i) {
            TaylorRow row{k, grid[i], measured[i] - loss0, 0.5 * fit.a[k] * grid[i] * grid[i] - fit.b[k] * grid[i]};
            m_k.push_back(row.measured);
            p_k.push_back(row.predicted);
            table.rows.push_back(row);
        }
        table.r2[k] = m_k.size() >= 2 ? r2_score(m_k, p_k) : 0.0;
        all_measured.insert(all_measured.end(), m_k.begin(), m_k.end());
        all_predicted.insert(all_predicted.end(), p_k.begin(), p_k.end());
    }
    table.pooled_r2 = all_measured.size() >= 2 ? r2_score(all_measured, all_predicted) : 0.0;
    return table;
}

TaylorTable taylor_at_iteration(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    if (c.method != Method::hiulr) c.method = Method::hidlr;
    c.iterations = cfg.diag.iteration + 1;
    const auto problem = make_problem(c.problem, c.seed);
    Trainer trainer(c, *problem, setup_for(c, *problem));
    while (trainer.t() < cfg.diag.iteration) trainer.step();
    auto [dir, batch] = trainer.peek_direction();
    const Vec& eta = trainer.eta();
    std::vector<Vec> grids;
    for (std::size_t k = 0; k < eta.size(); ++k) {
        Vec g;
        for (double m : cfg.diag.multipliers) g.push_back(m * eta[k]);
        grids.push_back(std::move(g));
    }
    return taylor_diagnostics(*problem, trainer.params(), dir, trainer.layout(), eta, grids, batch);
}

}  // namespace hidlr

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "pitn/adversarial.hpp"
#include "pitn/io.hpp"
#include "pitn/losses.hpp"
#include "pitn/metrics.hpp"
#include "pitn/synth.hpp"
#include "pitn/train.hpp"
#include "pitn/workflow.hpp"
#include "support/affine_regressor.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace pitn;
using pitn::testing::AffineRegressor;
using pitn::testing::numeric_gradient;
using pitn::testing::random_tensor;
using pitn::testing::relative_error;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int precision = 4)
{
    std::ostringstream s;
    s << std::setprecision(precision) << v;
    return s.str();
}

double scalar(const ad::Var& v)
{
    return v.value().item();
}

std::vector<ad::Var> constants(ad::Tape& tape, const std::vector<Tensor>& ts)
{
    std::vector<ad::Var> out;
    for (const Tensor& t : ts)
        out.push_back(tape.constant(t));
    return out;
}

// 1. Every parameter gradient and both input gradients of the total loss
// against central differences on 20 random d_model=8, 2-block instances.
Outcome gradient_correctness()
{
    const auto t0 = Clock::now();
    const double tolerance = 1e-4;
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
    for (std::uint64_t instance = 0; instance < 20; ++instance) {
        std::mt19937_64 rng(1000 + instance);
        ModelHyper h;
        h.d_model = 8;
        h.num_blocks = 2;
        h.seq_len = 16;
        h.channels = 1 + instance % 2;
        ModelState s = init_model(h, instance);
        for (BlockParams& b : s.blocks)
            for (LayerNormParams* ln : {&b.primary, &b.auxiliary}) {
                ln->gain = random_tensor({8}, rng, 0.5, 1.5);
                ln->bias = random_tensor({8}, rng, -0.2, 0.2);
            }
        s.head_b = Tensor::scalar(std::uniform_real_distribution<double>(-0.5, 0.5)(rng));

        const std::size_t n = 3;
        std::vector<Tensor> xs, xa, us;
        for (std::size_t i = 0; i < n; ++i) {
            xs.push_back(random_tensor({h.seq_len, h.channels}, rng));
            xa.push_back(random_tensor({h.seq_len, h.channels}, rng));
            us.push_back(random_tensor({3}, rng));
        }
        const std::vector<double> y_raw{100.0, 101.0, 104.5};
        const Tensor target = random_tensor({n}, rng);
        const std::vector<std::int64_t> idx{0, 1, 2};

        PeriodTrace trace;
        const auto build = [&](ad::Tape& tape, bool trainable, std::vector<ad::Var>* leaves) {
            PitnModel model(tape, s, trainable, {false, &trace});
            const auto leaf = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
            std::vector<ad::Var> vx, va, vu;
            for (std::size_t i = 0; i < n; ++i) {
                vx.push_back(leaf(xs[i]));
                va.push_back(leaf(xa[i]));
                vu.push_back(leaf(us[i]));
            }
            std::vector<DifferentiableRegressor::Output> clean;
            std::vector<ad::Var> yc, ya, zc, za;
            for (std::size_t i = 0; i < n; ++i) {
                clean.push_back(model.forward(vx[i], vu[i], LnRoute::Primary));
                yc.push_back(clean.back().y);
                zc.push_back(clean.back().embedding);
                const auto adv = model.forward(va[i], vu[i], LnRoute::Auxiliary);
                ya.push_back(adv.y);
                za.push_back(adv.embedding);
            }
            const ad::Var t = tape.constant(target);
            const LossTerms terms{mse(ad::stack(yc), t), mse(ad::stack(ya), t),
                                  contrastive(tape, zc, za, y_raw, y_raw, {2.0, 0.07, true}),
                                  physics_residual(clean, vu, idx)};
            if (leaves) {
                *leaves = model.params();
                for (auto* group : {&vx, &va, &vu})
                    leaves->insert(leaves->end(), group->begin(), group->end());
            }
            return total_loss(terms, 1.0).total;
        };

        ad::Tape tape;
        std::vector<ad::Var> leaves;
        const ad::Var loss = build(tape, true, &leaves);
        const ad::Gradients g = tape.backward(loss);
        const auto f = [&] {
            trace.rewind(PeriodTrace::Mode::Replay);
            ad::Tape t;
            return scalar(build(t, false, nullptr));
        };

        std::vector<Tensor*> targets = s.parameters();
        std::vector<std::string> names = s.parameter_names();
        for (std::size_t i = 0; i < n; ++i) {
            targets.push_back(&xs[i]);
            names.push_back("x[" + std::to_string(i) + "]");
        }
        for (std::size_t i = 0; i < n; ++i) {
            targets.push_back(&xa[i]);
            names.push_back("x_adv[" + std::to_string(i) + "]");
        }
        for (std::size_t i = 0; i < n; ++i) {
            targets.push_back(&us[i]);
            names.push_back("u[" + std::to_string(i) + "]");
        }
        for (std::size_t k = 0; k < targets.size(); ++k) {
            const double err = relative_error(g[leaves[k]], numeric_gradient(f, *targets[k]));
            ++checked;
            if (!(err <= worst)) {
                worst = err;
                worst_name = "instance " + std::to_string(instance) + " " + names[k];
            }
        }
    }
    const double elapsed = seconds_since(t0);
    return {worst < tolerance && elapsed < 60.0,
            "max relative error " + fmt(worst, 3) + " (" + worst_name + ") over " + std::to_string(checked) +
                " gradient tensors, tolerance 1e-4; " + fmt(elapsed, 3) + " s, limit 60 s"};
}

// 2. Affine head is exact; explicit loop with finite-difference grad_u
// matches the module on random nonlinear models.
Outcome physics_exactness()
{
    std::mt19937_64 rng(2);
    double worst_affine = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        ad::Tape tape;
        const double scale = std::pow(10.0, static_cast<int>(rng() % 5) - 2);
        AffineRegressor model(tape, random_tensor({3}, rng, -scale, scale), random_tensor({1}, rng)[0] * 100.0);
        const std::size_t n = 2 + rng() % 30;
        std::vector<Tensor> xs, us;
        std::vector<std::int64_t> idx;
        std::int64_t next = 0;
        for (std::size_t i = 0; i < n; ++i) {
            xs.push_back(random_tensor({16, 1}, rng));
            us.push_back(random_tensor({3}, rng, -scale, scale));
            next += 1 + static_cast<std::int64_t>(rng() % 4);
            idx.push_back(next);
        }
        worst_affine = std::max(
            worst_affine,
            scalar(physics_residual(model, constants(tape, xs), constants(tape, us), idx, LnRoute::Primary)));
    }

    double worst_loop = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        ModelHyper h;
        h.d_model = 4 + 4 * (trial % 2);
        h.num_blocks = 1 + trial % 2;
        h.seq_len = 16;
        const ModelState s = init_model(h, 50 + trial);
        const std::size_t n = 4;
        std::vector<Tensor> xs, us;
        for (std::size_t i = 0; i < n; ++i) {
            xs.push_back(random_tensor({16, 1}, rng));
            us.push_back(random_tensor({3}, rng));
        }
        double expected = 0.0;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            Tensor u = us[i];
            const Tensor grad = numeric_gradient([&] { return predict_one(s, xs[i], u); }, u, 1e-5);
            double taylor = predict_one(s, xs[i], us[i]);
            for (std::size_t j = 0; j < 3; ++j)
                taylor += grad[j] * (us[i + 1][j] - us[i][j]);
            const double r = taylor - predict_one(s, xs[i + 1], us[i + 1]);
            expected += r * r;
        }
        expected /= static_cast<double>(n - 1);
        ad::Tape tape;
        PitnModel model(tape, s, false);
        const double got = scalar(
            physics_residual(model, constants(tape, xs), constants(tape, us), {{0, 1, 2, 3}}, LnRoute::Primary));
        worst_loop = std::max(worst_loop, std::abs(got - expected) / expected);
    }
    return {worst_affine < 1e-20 && worst_loop < 1e-3,
            "affine max residual " + fmt(worst_affine, 3) + " (limit 1e-20); loop oracle max relative error " +
                fmt(worst_loop, 3) + " (limit 1e-3)"};
}

// 3. PGD output stays inside the domain and the budget; reruns are identical.
Outcome pgd_constraints()
{
    ModelHyper h;
    h.d_model = 8;
    h.num_blocks = 1;
    h.seq_len = 32;
    h.channels = 2;
    std::vector<ModelState> models;
    for (std::uint64_t k = 0; k < 4; ++k)
        models.push_back(init_model(h, k));

    PgdConfig cfg;
    cfg.epsilon = 0.2;
    const auto run_all = [&] {
        std::vector<Tensor> outs;
        std::mt19937_64 rng(3);
        std::size_t violations = 0;
        double max_excess = 0.0;
        for (int g = 0; g < 1000; ++g) {
            DomainBounds domain;
            for (std::size_t c = 0; c < h.channels; ++c) {
                const double a = random_tensor({1}, rng, -2.0, 0.0)[0];
                domain.lo.push_back(a);
                domain.hi.push_back(a + random_tensor({1}, rng, 0.05, 3.0)[0]);
            }
            Tensor x({h.seq_len, h.channels});
            for (std::size_t t = 0; t < h.seq_len; ++t)
                for (std::size_t c = 0; c < h.channels; ++c)
                    x.at(t, c) = domain.lo[c] + (domain.hi[c] - domain.lo[c]) * random_tensor({1}, rng, 0.0, 1.0)[0];
            const Tensor u = random_tensor({3}, rng);
            PgdConfig c = cfg;
            c.steps = 1 + g % 4;
            c.sigma = g % 3 == 0 ? 0.0 : 0.01 * (1 + g % 5);
            c.grad_at_adversarial = g % 2 == 1;
            std::mt19937_64 stream = beat_stream(7, 0, g);
            Tensor adv = pgd_generate(x, u, models[g % models.size()], domain, c, stream);
            for (std::size_t t = 0; t < h.seq_len; ++t)
                for (std::size_t ch = 0; ch < h.channels; ++ch) {
                    const double v = adv.at(t, ch);
                    const double excess = std::abs(v - x.at(t, ch)) - cfg.epsilon;
                    max_excess = std::max(max_excess, excess);
                    if (v < domain.lo[ch] || v > domain.hi[ch] || excess > 1e-12)
                        ++violations;
                }
            outs.push_back(std::move(adv));
        }
        return std::make_tuple(outs, violations, max_excess);
    };
    const auto [first, violations, excess] = run_all();
    const auto [second, v2, e2] = run_all();
    const bool identical = first == second;
    return {violations == 0 && identical,
            "1000 generations at epsilon 0.2: " + std::to_string(violations) +
                " domain or budget violations, max |x_adv - x| - epsilon = " + fmt(excess, 3) +
                "; seeded rerun " + (identical ? "bit-identical" : "differs")};
}

// 4. Closed-form contrastive fixture and empty-positive batches.
Outcome contrastive_oracle()
{
    const double per_anchor = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
    double worst = 0.0;
    for (std::size_t dim : {2u, 3u, 8u}) {
        const auto unit = [&](std::size_t axis) {
            Tensor t(Shape{dim});
            t[axis] = 1.0;
            return t;
        };
        ad::Tape tape;
        const std::vector<ad::Var> anchors{tape.constant(unit(0)), tape.constant(unit(1))};
        const std::vector<ad::Var> adv{tape.constant(unit(0)), tape.constant(unit(1))};
        const std::vector<double> y{100.0, 110.0};
        for (bool normalize : {true, false}) {
            const double got = scalar(contrastive(tape, anchors, adv, y, y, {2.0, 1.0, normalize})) / 2.0;
            worst = std::max(worst, std::abs(got - per_anchor));
        }
    }
    std::mt19937_64 rng(4);
    bool zero = true;
    for (int trial = 0; trial < 100; ++trial) {
        ad::Tape tape;
        const std::size_t n = 1 + rng() % 6;
        std::vector<ad::Var> a, b;
        std::vector<double> yc, ya;
        for (std::size_t i = 0; i < n; ++i) {
            a.push_back(tape.constant(random_tensor({4}, rng)));
            b.push_back(tape.constant(random_tensor({4}, rng)));
            yc.push_back(100.0 + 10.0 * static_cast<double>(i));
            ya.push_back(200.0 + 10.0 * static_cast<double>(i));
        }
        zero = zero && scalar(contrastive(tape, a, b, yc, ya, {2.0, 0.07, true})) == 0.0;
    }
    return {worst < 1e-9 && zero, "closed-form per-anchor error " + fmt(worst, 3) + " (limit 1e-9, target " +
                                      fmt(per_anchor, 10) + "); empty-positive batches " +
                                      (zero ? "exactly 0" : "non-zero")};
}

// 5. Period detection on pure sines and fold/unfold round trips.
Outcome period_detection()
{
    std::string failures;
    for (std::size_t k : {2u, 4u, 8u, 16u}) {
        for (std::size_t d : {1u, 4u}) {
            Tensor x({128, d});
            for (std::size_t t = 0; t < 128; ++t)
                for (std::size_t c = 0; c < d; ++c)
                    x.at(t, c) = std::sin(2.0 * M_PI * static_cast<double>(k * t) / 128.0 + 0.3 * static_cast<double>(c));
            const PeriodInfo p = detect_period(x);
            const std::size_t expected_p = (128 + k - 1) / k;
            if (p.frequency != k || p.period != expected_p)
                failures += " k=" + std::to_string(k) + " got f=" + std::to_string(p.frequency) +
                            " p=" + std::to_string(p.period);
        }
    }
    std::mt19937_64 rng(5);
    std::size_t round_trip_failures = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t T = 2 + rng() % 255;
        const std::size_t f = 1 + rng() % T;
        const std::size_t p = (T + f - 1) / f;
        const std::size_t d = 1 + rng() % 5;
        const Tensor x = random_tensor({T, d}, rng);
        ad::Tape tape;
        const ad::Var folded = fold(tape.constant(x), f, p);
        if (folded.shape() != Shape{f, p, d} || unfold(folded, T).value() != x)
            ++round_trip_failures;
    }
    return {failures.empty() && round_trip_failures == 0,
            "sines k in {2,4,8,16} over T=128: " + (failures.empty() ? std::string("all exact") : failures) +
                "; fold/unfold round trip failures " + std::to_string(round_trip_failures) + "/500"};
}

// 6. Metric identities and naive-loop oracles.
Outcome metrics_identities()
{
    std::mt19937_64 rng(6);
    double identity = 0.0, affine = 0.0, oracle = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng() % 300;
        std::normal_distribution<double> nd(120.0, 10.0);
        std::vector<double> p(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = nd(rng);
            p[i] = t[i] + nd(rng) / 5.0 - 24.0 + 0.2 * t[i];
        }
        const double r = rmse(p, t);
        const auto [me, sde] = me_sde(p, t);
        identity = std::max(identity, std::abs(r * r - (me * me + sde * sde)) / std::max(1.0, r * r));

        const double a = random_tensor({1}, rng, -5.0, 5.0)[0];
        const double b = random_tensor({1}, rng, -100.0, 100.0)[0];
        std::vector<double> q(n);
        for (std::size_t i = 0; i < n; ++i)
            q[i] = a * p[i] + b;
        const auto r0 = pearson(p, t);
        const auto r1 = pearson(q, t);
        if (r0 && r1)
            affine = std::max(affine, std::abs(*r1 - (a > 0 ? 1.0 : -1.0) * *r0));

        double se = 0.0, sum_e = 0.0, mp = 0.0, mt = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            se += (p[i] - t[i]) * (p[i] - t[i]);
            sum_e += p[i] - t[i];
            mp += p[i];
            mt += t[i];
        }
        mp /= static_cast<double>(n);
        mt /= static_cast<double>(n);
        const double naive_me = sum_e / static_cast<double>(n);
        double var_e = 0.0, cov = 0.0, vp = 0.0, vt = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            var_e += (p[i] - t[i] - naive_me) * (p[i] - t[i] - naive_me);
            cov += (p[i] - mp) * (t[i] - mt);
            vp += (p[i] - mp) * (p[i] - mp);
            vt += (t[i] - mt) * (t[i] - mt);
        }
        const double naive_rmse = std::sqrt(se / static_cast<double>(n));
        const double naive_sde = std::sqrt(var_e / static_cast<double>(n));
        const double naive_r = cov / std::sqrt(vp * vt);
        oracle = std::max({oracle, std::abs(r - naive_rmse), std::abs(me - naive_me), std::abs(sde - naive_sde),
                           r0 ? std::abs(*r0 - naive_r) : 0.0});
    }
    return {identity <= 1e-10 && affine <= 1e-10 && oracle <= 1e-10,
            "rmse^2 - (me^2 + sde^2) max " + fmt(identity, 3) + ", pearson affine invariance max " + fmt(affine, 3) +
                ", naive-loop max " + fmt(oracle, 3) + " (each limit 1e-10)"};
}

struct SubjectRun {
    MetricsReport metrics;
    double seconds = 0.0;
    std::size_t epochs = 0;
    std::size_t n_train = 0;
};

SubjectRun run_synthetic_subject(std::uint64_t seed, bool full)
{
    SynthConfig sc;
    sc.n_beats = 500;
    sc.bp_map = BpMap{}.affine();
    sc.seed = seed;
    const std::vector<BeatRecord> beats = preprocess_recording(generate(sc).recording, SegmentConfig{});
    const SplitPlan split = minimal_split(beats, BpType::Sbp, 0.5, seed);
    TrainConfig tc;
    tc.seed = seed;
    if (!full)
        tc = tc.base();
    const auto t0 = Clock::now();
    const TrainResult r = train_subject(beats, split, tc);
    SubjectRun out;
    out.seconds = seconds_since(t0);
    out.epochs = r.log.size();
    out.n_train = split.train.size();
    std::vector<BeatRecord> test;
    std::vector<double> truth;
    for (std::size_t i : split.test) {
        test.push_back(beats[i]);
        truth.push_back(beats[i].sbp);
    }
    out.metrics = evaluate_metrics(predict(test, r.model, r.standardizer), truth);
    return out;
}

std::map<std::uint64_t, SubjectRun> full_runs;

const SubjectRun& full_run(std::uint64_t seed)
{
    auto it = full_runs.find(seed);
    if (it == full_runs.end())
        it = full_runs.emplace(seed, run_synthetic_subject(seed, true)).first;
    return it->second;
}

// 7. 500-beat affine subject with the default configuration.
Outcome synthetic_end_to_end()
{
    const SubjectRun& r = full_run(1);
    const double pr = r.metrics.pearson_r.value_or(-1.0);
    return {pr >= 0.9 && r.metrics.rmse <= 3.0 && r.epochs <= 200 && r.seconds <= 300.0,
            "SBP test r " + fmt(pr) + " (>= 0.9), RMSE " + fmt(r.metrics.rmse) + " mmHg (<= 3), " +
                std::to_string(r.epochs) + " epochs on " + std::to_string(r.n_train) + " training beats, " +
                std::to_string(r.metrics.n_test) + " test beats, " + fmt(r.seconds, 3) + " s (<= 300)"};
}

// 8. Full versus base over 10 seeds.
Outcome ablation_direction()
{
    std::vector<double> full, base;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        full.push_back(full_run(seed).metrics.pearson_r.value_or(0.0));
        base.push_back(run_synthetic_subject(seed, false).metrics.pearson_r.value_or(0.0));
        std::cout << "  seed " << seed << ": full r " << fmt(full.back()) << ", base r " << fmt(base.back()) << '\n'
                  << std::flush;
    }
    const double mf = std::accumulate(full.begin(), full.end(), 0.0) / 10.0;
    const double mb = std::accumulate(base.begin(), base.end(), 0.0) / 10.0;
    const TTestResult t = paired_ttest(full, base);
    return {mf >= mb, "mean Pearson r full " + fmt(mf) + " vs base " + fmt(mb) + "; paired t-test t(" +
                          fmt(t.dof, 3) + ") = " + fmt(t.statistic) + ", p = " + fmt(t.p_value) +
                          (t.significant_at_05 ? " (significant at 0.05)" : " (not significant at 0.05)")};
}

// 9. CSV pipeline end to end. Uses PITN_REAL_DATA_DIR when set, otherwise
// an export of synthetic recordings in the same bare-CSV layout.
Outcome real_data_track()
{
    pitn::testing::TempDir work;
    std::ostringstream log;
    const char* env = std::getenv("PITN_REAL_DATA_DIR");
    std::filesystem::path input;
    AppConfig cfg = parse_config("");
    std::string source;
    if (env && *env) {
        input = env;
        source = "user data in " + input.string();
    } else {
        const AppConfig synth = parse_config("[synth]\nn_subjects = 2\nn_beats = 200\n");
        workflow::run_synth(synth, work / "synth", log);
        input = work / "csv";
        std::filesystem::create_directories(input);
        for (const auto& e : std::filesystem::directory_iterator(work / "synth"))
            if (e.path().extension() == ".csv")
                std::filesystem::copy_file(e.path(), input / e.path().filename());
        cfg = parse_config("[train]\nepochs = 20\n");
        source = "no PITN_REAL_DATA_DIR supplied; ran on a 2-subject synthetic CSV export with 20 epochs";
    }
    workflow::run_preprocess(cfg, input, work / "beats", log);
    workflow::run_split(cfg, work / "beats", work / "split", log);
    workflow::run_train(cfg, work / "split", work / "models", log);
    workflow::run_eval(cfg, work / "split", work / "models", work / "eval", log);
    workflow::run_report(cfg, work / "eval", work / "report", log);
    const std::string csv = io::read_text(work / "report" / "report.csv");
    const auto rows = static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n'));
    const bool shaped = csv.rfind("subject,sbp_rmse,sbp_pearson_r", 0) == 0 && csv.find("\nmean,") != std::string::npos;
    return {shaped && rows >= 3,
            source + "; report with " + std::to_string(rows - 2) + " subject rows, SBP and DBP column groups"};
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"physics-residual exactness", physics_exactness},
        {"PGD constraints", pgd_constraints},
        {"contrastive oracle", contrastive_oracle},
        {"period detection", period_detection},
        {"metrics identities", metrics_identities},
        {"synthetic end-to-end", synthetic_end_to_end},
        {"ablation direction", ablation_direction},
        {"real-data track", real_data_track},
    };
    std::set<std::size_t> selected;
    for (int i = 1; i < argc; ++i)
        selected.insert(static_cast<std::size_t>(std::atoi(argv[i])));

    bool all = true;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        if (!selected.empty() && !selected.count(k + 1))
            continue;
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << "criterion " << k + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[k].first << ": "
                  << o.detail << '\n'
                  << std::flush;
    }
    return all ? 0 : 1;
}

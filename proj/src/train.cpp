#include "pitn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <nlohmann/json.hpp>

#include "pitn/optim.hpp"

namespace pitn {

std::string to_string(Augmentation a)
{
    return a == Augmentation::Pgd ? "pgd" : "flip";
}

Augmentation parse_augmentation(const std::string& text)
{
    if (text == "pgd")
        return Augmentation::Pgd;
    if (text == "flip")
        return Augmentation::Flip;
    throw ConfigError("unknown augmentation '" + text + "' (expected pgd or flip)");
}

void TrainConfig::validate() const
{
    const auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    const auto non_negative = [](double v) { return v >= 0.0 && std::isfinite(v); };
    if (!positive(learning_rate))
        throw ConfigError("learning_rate must be positive");
    if (epochs == 0)
        throw ConfigError("epochs must be at least 1");
    if (!non_negative(gamma))
        throw ConfigError("gamma must be >= 0");
    if (!non_negative(y_shift))
        throw ConfigError("y_shift must be >= 0");
    if (!positive(tau))
        throw ConfigError("tau must be positive");
    pgd.validate();
}

TrainConfig TrainConfig::base() const
{
    TrainConfig b = *this;
    b.gamma = 0.0;
    b.adversarial = false;
    b.contrastive = false;
    return b;
}

namespace {

struct Prepared {
    std::vector<Tensor> x;
    std::vector<Tensor> u;
    std::vector<double> y;      // standardized
    std::vector<double> y_raw;  // mmHg, used for contrastive pairing
    std::vector<std::int64_t> beat_index;
};

DomainBounds domain_of(const std::vector<Tensor>& xs)
{
    const std::size_t C = xs.front().dim(1);
    DomainBounds d{std::vector<double>(C, std::numeric_limits<double>::infinity()),
                   std::vector<double>(C, -std::numeric_limits<double>::infinity())};
    for (const Tensor& x : xs)
        for (std::size_t t = 0; t < x.dim(0); ++t)
            for (std::size_t c = 0; c < C; ++c) {
                d.lo[c] = std::min(d.lo[c], x.at(t, c));
                d.hi[c] = std::max(d.hi[c], x.at(t, c));
            }
    return d;
}

ad::Var zero(ad::Tape& tape)
{
    return tape.constant(Tensor::scalar(0.0));
}

}  // namespace

TrainResult train_subject(std::span<const BeatRecord> beats, const SplitPlan& split, const TrainConfig& cfg,
                          Diagnostics* diag)
{
    cfg.validate();
    if (split.train.empty())
        throw std::invalid_argument("training split is empty");
    std::vector<BeatRecord> train;
    for (std::size_t i : split.train) {
        if (i >= beats.size())
            throw std::invalid_argument("split index " + std::to_string(i) + " out of range for " +
                                        std::to_string(beats.size()) + " beats");
        train.push_back(beats[i]);
    }
    std::sort(train.begin(), train.end(),
              [](const BeatRecord& a, const BeatRecord& b) { return a.beat_index < b.beat_index; });
    for (std::size_t i = 1; i < train.size(); ++i)
        if (train[i].beat_index == train[i - 1].beat_index)
            throw std::invalid_argument("duplicate beat index " + std::to_string(train[i].beat_index) +
                                        " in training split");
    if (train.size() < 2)
        warn(diag, "only one training beat; the physics term is skipped");

    TrainResult result;
    result.standardizer = Standardizer::fit(train, cfg.bp_type);
    const Standardizer& sc = result.standardizer;

    Prepared data;
    for (const BeatRecord& b : train) {
        data.x.push_back(sc.x(b.x));
        data.u.push_back(sc.u(b.u));
        data.y_raw.push_back(b.label(cfg.bp_type));
        data.y.push_back(sc.y(b.label(cfg.bp_type)));
        data.beat_index.push_back(b.beat_index);
    }
    const DomainBounds domain = domain_of(data.x);
    const std::size_t n = train.size();

    ModelHyper hyper = cfg.model;
    hyper.seq_len = data.x.front().dim(0);
    hyper.channels = data.x.front().dim(1);
    hyper.n_features = data.u.front().size();
    result.model = init_model(hyper, cfg.seed);
    ModelState& state = result.model;

    Adam adam(AdamConfig{.learning_rate = cfg.learning_rate});
    const ContrastiveOptions con_opts{cfg.y_shift, cfg.tau, cfg.normalize_embeddings};
    const Tensor target = Tensor::vector(data.y);

    double best = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();

        std::vector<Tensor> adv;
        if (cfg.adversarial) {
            adv.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                if (cfg.augmentation == Augmentation::Pgd) {
                    auto rng = beat_stream(cfg.seed, epoch, data.beat_index[i]);
                    try {
                        adv.push_back(pgd_generate(data.x[i], data.u[i], state, domain, cfg.pgd, rng));
                    } catch (const NonFiniteError& e) {
                        throw NonFiniteError("adversarial generation for beat " +
                                             std::to_string(data.beat_index[i]) + ": " + e.what());
                    }
                } else {
                    adv.push_back(flip_waveform(data.x[i]));
                }
            }
        }

        ad::Tape tape;
        PitnModel model(tape, state, true, ForwardOptions{.detach_grad_u = cfg.detach_grad_u});
        std::vector<DifferentiableRegressor::Output> clean;
        std::vector<ad::Var> u_vars, y_clean, z_clean;
        const ad::Var y_target = tape.constant(target);

        LossTerms terms;
        terms.clean = loss_term("l_clean", [&] {
            for (std::size_t i = 0; i < n; ++i) {
                u_vars.push_back(tape.constant(data.u[i]));
                clean.push_back(model.forward(tape.constant(data.x[i]), u_vars.back(), LnRoute::Primary));
                y_clean.push_back(clean.back().y);
                z_clean.push_back(clean.back().embedding);
            }
            return mse(ad::stack(y_clean), y_target);
        });
        terms.adv = zero(tape);
        terms.con = zero(tape);
        if (cfg.adversarial) {
            std::vector<ad::Var> y_adv, z_adv;
            terms.adv = loss_term("l_adv", [&] {
                for (std::size_t i = 0; i < n; ++i) {
                    const auto out = model.forward(tape.constant(adv[i]), u_vars[i], LnRoute::Auxiliary);
                    y_adv.push_back(out.y);
                    z_adv.push_back(out.embedding);
                }
                return mse(ad::stack(y_adv), y_target);
            });
            if (cfg.contrastive)
                terms.con = loss_term("l_con", [&] {
                    return contrastive(tape, z_clean, z_adv, data.y_raw, data.y_raw, con_opts);
                });
        }
        terms.physics = loss_term("l_physics", [&] {
            return n >= 2 ? physics_residual(clean, u_vars, data.beat_index) : zero(tape);
        });

        const TotalLoss loss = total_loss(terms, cfg.gamma, cfg.y_shift, cfg.tau);
        const ad::Gradients grads = tape.backward(loss.total);
        std::vector<Tensor> g;
        for (const ad::Var& p : model.params())
            g.push_back(grads[p]);
        adam.step(state.parameters(), g);

        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        result.log.push_back(EpochLog{epoch, loss.breakdown, ms});

        if (loss.breakdown.l_total < best) {
            best = loss.breakdown.l_total;
            since_best = 0;
        } else if (cfg.patience > 0 && ++since_best == cfg.patience) {
            warn(diag, "training loss did not improve for " + std::to_string(cfg.patience) + " epochs (epoch " +
                           std::to_string(epoch) + ")");
            if (cfg.early_stop) {
                result.early_stopped = true;
                break;
            }
        }
    }
    state.aux_reads.reset();
    return result;
}

std::vector<double> predict(std::span<const BeatRecord> beats, const ModelState& model, const Standardizer& scaler)
{
    std::vector<double> out;
    out.reserve(beats.size());
    for (const BeatRecord& b : beats)
        out.push_back(scaler.y_inverse(predict_one(model, scaler.x(b.x), scaler.u(b.u), LnRoute::Primary)));
    return out;
}

std::string to_json_line(const EpochLog& log)
{
    const LossBreakdown& l = log.loss;
    nlohmann::json j = {{"epoch", log.epoch},     {"l_clean", l.l_clean}, {"l_adv", l.l_adv},
                        {"l_con", l.l_con},       {"l_physics", l.l_physics}, {"l_total", l.l_total},
                        {"gamma", l.gamma},       {"y_shift", l.y_shift}, {"tau", l.tau},
                        {"wall_ms", log.wall_ms}};
    return j.dump();
}

}  // namespace pitn

#include "pitn/losses.hpp"

#include <cmath>
#include <string>

namespace pitn {

using ad::Var;

Var mse(const Var& pred, const Var& target)
{
    if (pred.shape() != target.shape())
        throw DimensionError("mse: prediction " + shape_string(pred.shape()) + " and target " +
                             shape_string(target.shape()) + " differ");
    if (pred.size() == 0)
        throw DimensionError("mse of zero samples");
    return ad::mean(ad::square(ad::sub(pred, target)));
}

Var physics_residual(std::span<const DifferentiableRegressor::Output> outputs, std::span<const Var> u,
                     std::span<const std::int64_t> beat_index)
{
    if (outputs.size() != u.size() || outputs.size() != beat_index.size())
        throw std::invalid_argument("physics_residual: outputs, features and beat indices differ in length");
    for (std::size_t i = 1; i < beat_index.size(); ++i)
        if (beat_index[i] <= beat_index[i - 1])
            throw std::invalid_argument("physics_residual: batch is not ordered by beat index");
    if (outputs.size() < 2) {
        if (outputs.empty())
            throw std::invalid_argument("physics_residual: empty batch");
        return outputs.front().y.tape()->constant(Tensor::scalar(0.0));
    }

    std::vector<Var> residuals;
    for (std::size_t i = 0; i + 1 < outputs.size(); ++i) {
        const Var taylor = ad::add(outputs[i].y, ad::dot(outputs[i].grad_u, ad::sub(u[i + 1], u[i])));
        residuals.push_back(ad::sub(taylor, outputs[i + 1].y));
    }
    const Var h = ad::stack(residuals);
    return ad::scale(ad::sum(ad::square(h)), 1.0 / static_cast<double>(residuals.size()));
}

Var physics_residual(DifferentiableRegressor& model, std::span<const Var> x, std::span<const Var> u,
                     std::span<const std::int64_t> beat_index, LnRoute route)
{
    if (x.size() != u.size())
        throw std::invalid_argument("physics_residual: waveform and feature counts differ");
    std::vector<DifferentiableRegressor::Output> outs;
    for (std::size_t i = 0; i < x.size(); ++i)
        outs.push_back(model.forward(x[i], u[i], route));
    return physics_residual(outs, u, beat_index);
}

std::vector<std::vector<std::size_t>> positive_sets(std::span<const double> y_clean, std::span<const double> y_adv,
                                                    double y_shift)
{
    std::vector<std::vector<std::size_t>> sets(y_clean.size());
    for (std::size_t i = 0; i < y_clean.size(); ++i)
        for (std::size_t p = 0; p < y_adv.size(); ++p)
            if (std::abs(y_adv[p] - y_clean[i]) < y_shift)
                sets[i].push_back(p);
    return sets;
}

namespace {

Var l2_normalize(ad::Tape& tape, const Var& z)
{
    const Var norm = ad::sqrt(ad::add_scalar(ad::dot(z, z), 1e-12));
    return ad::mul_scalar(z, ad::div(tape.constant(Tensor::scalar(1.0)), norm));
}

}  // namespace

Var contrastive(ad::Tape& tape, std::span<const Var> anchors, std::span<const Var> adversarial,
                std::span<const double> y_clean, std::span<const double> y_adv, const ContrastiveOptions& opts)
{
    if (!(opts.tau > 0.0))
        throw ConfigError("contrastive temperature tau must be positive, got " + std::to_string(opts.tau));
    if (anchors.size() != y_clean.size() || adversarial.size() != y_adv.size())
        throw std::invalid_argument("contrastive: embeddings and labels differ in count");

    const auto positives = positive_sets(y_clean, y_adv, opts.y_shift);
    std::vector<Var> adv;
    for (const Var& z : adversarial)
        adv.push_back(opts.normalize ? l2_normalize(tape, z) : z);

    const double inv_tau = 1.0 / opts.tau;
    Var total;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (positives[i].empty())
            continue;
        const Var zi = opts.normalize ? l2_normalize(tape, anchors[i]) : anchors[i];
        std::vector<Var> logits;
        for (const Var& za : adv)
            logits.push_back(ad::scale(ad::dot(zi, za), inv_tau));
        const Var lse = ad::logsumexp(ad::stack(logits));
        std::vector<Var> pos;
        for (std::size_t p : positives[i])
            pos.push_back(logits[p]);
        // -(1/|P|) sum_p (logit_p - lse) = lse - mean_p logit_p
        const Var term = ad::sub(lse, ad::mean(ad::stack(pos)));
        total = total.valid() ? ad::add(total, term) : term;
    }
    return total.valid() ? total : tape.constant(Tensor::scalar(0.0));
}

Var loss_term(const std::string& name, const std::function<Var()>& compute)
{
    try {
        return compute();
    } catch (const NonFiniteError& e) {
        throw NonFiniteError("loss term " + name + ": " + e.what());
    }
}

TotalLoss total_loss(const LossTerms& terms, double gamma, double y_shift, double tau)
{
    const std::pair<const char*, const Var*> named[] = {
        {"l_clean", &terms.clean}, {"l_adv", &terms.adv}, {"l_con", &terms.con}, {"l_physics", &terms.physics}};
    for (const auto& [name, v] : named) {
        if (!v->valid() || v->size() != 1)
            throw std::invalid_argument(std::string("total_loss: term ") + name + " must be a scalar");
        if (!std::isfinite(v->value()[0]))
            throw NonFiniteError(std::string("loss term ") + name + " is not finite");
    }
    if (!std::isfinite(gamma))
        throw NonFiniteError("loss weight gamma is not finite");

    TotalLoss out;
    const Var total = loss_term("l_total", [&] {
        Var sum = ad::add(ad::add(terms.clean, terms.adv), terms.con);
        return gamma != 0.0 ? ad::add(sum, ad::scale(terms.physics, gamma)) : sum;
    });
    out.total = total;

    LossBreakdown& b = out.breakdown;
    b.l_clean = terms.clean.value()[0];
    b.l_adv = terms.adv.value()[0];
    b.l_con = terms.con.value()[0];
    b.l_physics = terms.physics.value()[0];
    b.l_total = total.value()[0];
    b.gamma = gamma;
    b.y_shift = y_shift;
    b.tau = tau;
    return out;
}

}  // namespace pitn

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pitn/autodiff.hpp"
#include "pitn/model.hpp"

namespace pitn {

struct LossBreakdown {
    double l_clean = 0.0;
    double l_adv = 0.0;
    double l_con = 0.0;
    double l_physics = 0.0;
    double l_total = 0.0;
    double gamma = 1.0;
    double y_shift = 2.0;
    double tau = 0.07;
};

/// Mean squared error between two equal-length vectors.
ad::Var mse(const ad::Var& pred, const ad::Var& target);

/// Taylor residual over consecutive beats, given each beat's model output
/// and features: h_i = y_i + g_i . (u_{i+1} - u_i) - y_{i+1}, averaged as
/// sum(h_i^2) / (N - 1). Beat indices must be strictly increasing
/// (std::invalid_argument otherwise). Fewer than two beats give 0.
ad::Var physics_residual(std::span<const DifferentiableRegressor::Output> outputs, std::span<const ad::Var> u,
                         std::span<const std::int64_t> beat_index);

/// Same residual, running the model on each (x_i, u_i) first.
ad::Var physics_residual(DifferentiableRegressor& model, std::span<const ad::Var> x, std::span<const ad::Var> u,
                         std::span<const std::int64_t> beat_index, LnRoute route);

struct ContrastiveOptions {
    double y_shift = 2.0;
    double tau = 0.07;
    bool normalize = true;  // L2-normalize embeddings before the dot products
};

/// Threshold-based contrastive loss. Positives of anchor i are the
/// adversarial samples p with |y_adv[p] - y_clean[i]| < y_shift; the
/// denominator runs over all adversarial samples. Anchors without positives
/// contribute 0. Throws ConfigError for tau <= 0.
ad::Var contrastive(ad::Tape& tape, std::span<const ad::Var> anchors, std::span<const ad::Var> adversarial,
                    std::span<const double> y_clean, std::span<const double> y_adv, const ContrastiveOptions& opts);

/// Positive sets P(i) for the given labels and threshold.
std::vector<std::vector<std::size_t>> positive_sets(std::span<const double> y_clean, std::span<const double> y_adv,
                                                    double y_shift);

struct LossTerms {
    ad::Var clean;
    ad::Var adv;
    ad::Var con;
    ad::Var physics;
};

struct TotalLoss {
    ad::Var total;
    LossBreakdown breakdown;
};

/// Runs `compute`, prefixing any NonFiniteError it raises with `name`.
ad::Var loss_term(const std::string& name, const std::function<ad::Var()>& compute);

/// total = clean + adv + con + gamma * physics. Throws NonFiniteError naming
/// the first non-finite term.
TotalLoss total_loss(const LossTerms& terms, double gamma, double y_shift = 2.0, double tau = 0.07);

}  // namespace pitn

#pragma once

#include "pitn/model.hpp"

namespace pitn::testing {

/// y = w . u + b, independent of x.
class AffineRegressor final : public DifferentiableRegressor {
public:
    AffineRegressor(ad::Tape& tape, Tensor w, double b) : tape_(&tape), w_(tape.constant(std::move(w))), b_(b) {}

    Output forward(const ad::Var& x, const ad::Var& u, LnRoute) override
    {
        return {ad::add_scalar(ad::dot(w_, u), b_), w_, ad::mean_rows(x)};
    }
    ad::Tape& tape() override { return *tape_; }

private:
    ad::Tape* tape_;
    ad::Var w_;
    double b_;
};

}  // namespace pitn::testing

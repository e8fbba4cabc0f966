#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "pitn/autodiff.hpp"
#include "pitn/diagnostics.hpp"
#include "pitn/tensor.hpp"

namespace pitn {

enum class LnRoute { Primary, Auxiliary };

struct ModelHyper {
    std::size_t d_model = 32;
    std::size_t num_blocks = 2;
    std::vector<std::size_t> kernel_sizes{1, 3, 5};
    std::size_t seq_len = 128;
    std::size_t channels = 1;
    std::size_t n_features = 3;

    void validate() const;
    bool operator==(const ModelHyper&) const = default;
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
};

struct BlockParams {
    std::vector<Tensor> kernels;  // one [k x k x d x d] kernel per kernel size
    LayerNormParams primary;
    LayerNormParams auxiliary;
};

/// Counts reads of auxiliary layer-norm parameters. Copying snapshots the count.
class AccessCounter {
public:
    AccessCounter() = default;
    AccessCounter(const AccessCounter& other) : count_(other.load()) {}
    AccessCounter& operator=(const AccessCounter& other)
    {
        count_.store(other.load());
        return *this;
    }

    void bump() const { count_.fetch_add(1, std::memory_order_relaxed); }
    std::size_t load() const { return count_.load(std::memory_order_relaxed); }
    void reset() const { count_.store(0); }

private:
    mutable std::atomic<std::size_t> count_{0};
};

struct ModelState {
    ModelHyper hyper;
    Tensor embed;  // [C x d]
    std::vector<BlockParams> blocks;
    Tensor head_w;  // [d + M]
    Tensor head_b;  // rank 0
    AccessCounter aux_reads;

    /// Every learnable tensor in a fixed order, matching parameter_names().
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::vector<std::string> parameter_names() const;
    std::size_t parameter_count() const;
};

/// Closed-form number of learnable scalars for the given hyperparameters.
std::size_t parameter_count(const ModelHyper& hyper);

/// Uniform(+-sqrt(1/fan_in)) weights, unit LN gains, zero LN and head biases.
ModelState init_model(const ModelHyper& hyper, std::uint64_t seed);

struct PeriodInfo {
    std::vector<double> amplitudes;  // channel-averaged spectrum of the centered signal, bins 0..T/2
    std::size_t frequency = 1;
    std::size_t period = 1;
    bool fallback = false;

    bool operator==(const PeriodInfo&) const = default;
};

/// Dominant non-DC frequency f of a [T x d] signal and p = ceil(T / f).
/// A signal without any non-DC energy falls back to f = 1, p = T.
PeriodInfo detect_period(const Tensor& x, Diagnostics* diag = nullptr);

/// Records the periods chosen during a forward pass, or replays them so that
/// perturbed inputs reuse the same fold.
struct PeriodTrace {
    enum class Mode { Record, Replay };
    Mode mode = Mode::Record;
    std::vector<PeriodInfo> entries;
    std::size_t cursor = 0;

    void rewind(Mode m)
    {
        mode = m;
        cursor = 0;
    }
};

/// Zero-pads [T x d] to p*f rows and lays it out as [f x p x d]:
/// row = cycle, column = position within the cycle.
ad::Var fold(const ad::Var& x, std::size_t frequency, std::size_t period);
/// Inverse of fold, truncated back to `length` rows.
ad::Var unfold(const ad::Var& folded, std::size_t length);

/// A regressor f(x, u) on a tape, exposing its input-feature gradient as a
/// tape value so that losses can differentiate through it.
class DifferentiableRegressor {
public:
    struct Output {
        ad::Var y;          // rank 0
        ad::Var grad_u;     // [M], d y / d u
        ad::Var embedding;  // pooled representation before the head
    };

    virtual ~DifferentiableRegressor() = default;
    virtual Output forward(const ad::Var& x, const ad::Var& u, LnRoute route) = 0;
    virtual ad::Tape& tape() = 0;
};

struct ForwardOptions {
    bool detach_grad_u = false;
    PeriodTrace* trace = nullptr;
    Diagnostics* diag = nullptr;
};

/// ModelState bound to a tape. With trainable = true every parameter is a
/// gradient-tracked leaf, listed by params() in ModelState order.
class PitnModel final : public DifferentiableRegressor {
public:
    PitnModel(ad::Tape& tape, const ModelState& state, bool trainable, ForwardOptions options = {});

    Output forward(const ad::Var& x, const ad::Var& u, LnRoute route) override;
    ad::Tape& tape() override { return *tape_; }

    const std::vector<ad::Var>& params() const { return params_; }
    /// Output of temporal block `block` for input h (exposed for tests).
    ad::Var temporal_block(std::size_t block, const ad::Var& h, LnRoute route);

private:
    struct BlockVars {
        ad::Var kernel;  // branches merged into one [S x S x d x d] kernel
        ad::Var gain[2];
        ad::Var bias[2];
    };

    ad::Tape* tape_;
    const ModelState* state_;
    ForwardOptions options_;
    std::vector<ad::Var> params_;
    ad::Var embed_;
    std::vector<BlockVars> blocks_;
    ad::Var head_w_;
    ad::Var head_b_;
};

struct InputGradients {
    double y = 0.0;
    Tensor grad_x;
    Tensor grad_u;
};

/// y for a single beat under the given route.
double predict_one(const ModelState& state, const Tensor& x, const Tensor& u, LnRoute route = LnRoute::Primary);

/// y together with dy/dx and dy/du from one backward pass.
InputGradients grad_wrt_inputs(const ModelState& state, const Tensor& x, const Tensor& u, LnRoute route);

}  // namespace pitn

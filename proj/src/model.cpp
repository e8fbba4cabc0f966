#include "pitn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pitn/fft.hpp"

namespace pitn {

using ad::Var;

void ModelHyper::validate() const
{
    if (d_model == 0 || num_blocks == 0 || channels == 0 || n_features == 0)
        throw ConfigError("model: d_model, num_blocks, channels and n_features must be positive");
    if (seq_len < 4)
        throw ConfigError("model: seq_len must be at least 4");
    if (kernel_sizes.empty())
        throw ConfigError("model: at least one inception kernel size is required");
    for (std::size_t k : kernel_sizes)
        if (k == 0 || k % 2 == 0)
            throw ConfigError("model: inception kernel sizes must be odd, got " + std::to_string(k));
}

std::vector<Tensor*> ModelState::parameters()
{
    std::vector<Tensor*> out{&embed};
    for (BlockParams& b : blocks) {
        for (Tensor& k : b.kernels)
            out.push_back(&k);
        out.insert(out.end(), {&b.primary.gain, &b.primary.bias, &b.auxiliary.gain, &b.auxiliary.bias});
    }
    out.insert(out.end(), {&head_w, &head_b});
    return out;
}

std::vector<const Tensor*> ModelState::parameters() const
{
    auto mut = const_cast<ModelState*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::vector<std::string> ModelState::parameter_names() const
{
    std::vector<std::string> names{"embed"};
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b) + ".";
        for (std::size_t k : hyper.kernel_sizes)
            names.push_back(prefix + "kernel" + std::to_string(k));
        for (const char* p : {"ln_primary.gain", "ln_primary.bias", "ln_aux.gain", "ln_aux.bias"})
            names.push_back(prefix + p);
    }
    names.insert(names.end(), {"head.w", "head.b"});
    return names;
}

std::size_t ModelState::parameter_count() const
{
    std::size_t n = 0;
    for (const Tensor* t : parameters())
        n += t->size();
    return n;
}

std::size_t parameter_count(const ModelHyper& h)
{
    std::size_t kernel_taps = 0;
    for (std::size_t k : h.kernel_sizes)
        kernel_taps += k * k;
    const std::size_t d = h.d_model;
    return h.channels * d + h.num_blocks * (kernel_taps * d * d + 4 * d) + (d + h.n_features) + 1;
}

ModelState init_model(const ModelHyper& hyper, std::uint64_t seed)
{
    hyper.validate();
    std::mt19937_64 rng(seed);
    const auto uniform = [&rng](Shape shape, std::size_t fan_in) {
        const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor t(std::move(shape));
        for (double& v : t.data())
            v = dist(rng);
        return t;
    };

    const std::size_t d = hyper.d_model;
    ModelState s;
    s.hyper = hyper;
    s.embed = uniform({hyper.channels, d}, hyper.channels);
    for (std::size_t b = 0; b < hyper.num_blocks; ++b) {
        BlockParams block;
        for (std::size_t k : hyper.kernel_sizes)
            block.kernels.push_back(uniform({k, k, d, d}, k * k * d));
        block.primary = {Tensor(Shape{d}, 1.0), Tensor(Shape{d}, 0.0)};
        block.auxiliary = block.primary;
        s.blocks.push_back(std::move(block));
    }
    s.head_w = uniform({d + hyper.n_features}, d + hyper.n_features);
    s.head_b = Tensor::scalar(0.0);
    return s;
}

PeriodInfo detect_period(const Tensor& x, Diagnostics* diag)
{
    if (x.rank() != 2 || x.dim(0) < 4)
        throw std::invalid_argument("detect_period needs a [T x d] input with T >= 4, got " + shape_string(x.shape()));
    const std::size_t T = x.dim(0), d = x.dim(1);
    // Removing each column's mean keeps the zero-padded DC step from leaking
    // into the low bins.
    Tensor centered = x;
    double scale = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t t = 0; t < T; ++t)
            mean += x.at(t, c);
        mean /= static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t) {
            centered.at(t, c) -= mean;
            scale = std::max(scale, std::abs(x.at(t, c)));
        }
    }
    const Tensor amp = rfft_amplitude(centered);

    PeriodInfo info;
    info.amplitudes.assign(amp.dim(0), 0.0);
    for (std::size_t k = 0; k < amp.dim(0); ++k) {
        for (std::size_t c = 0; c < d; ++c)
            info.amplitudes[k] += amp.at(k, c);
        info.amplitudes[k] /= static_cast<double>(d);
    }

    std::size_t best = 1;
    for (std::size_t k = 2; k <= T / 2; ++k)
        if (info.amplitudes[k] > info.amplitudes[best])
            best = k;
    if (!(info.amplitudes[best] > 1e-12 * static_cast<double>(T) * std::max(1.0, scale))) {
        warn(diag, "constant input to period detection; using a single cycle");
        info.frequency = 1;
        info.period = T;
        info.fallback = true;
        return info;
    }
    info.frequency = best;
    info.period = (T + best - 1) / best;
    return info;
}

Var fold(const Var& x, std::size_t frequency, std::size_t period)
{
    const std::size_t d = x.value().dim(1);
    return ad::reshape(ad::pad_rows(x, frequency * period), {frequency, period, d});
}

Var unfold(const Var& folded, std::size_t length)
{
    const Tensor& v = folded.value();
    return ad::slice_rows(ad::reshape(folded, {v.dim(0) * v.dim(1), v.dim(2)}), 0, length);
}

PitnModel::PitnModel(ad::Tape& tape, const ModelState& state, bool trainable, ForwardOptions options)
    : tape_(&tape), state_(&state), options_(options)
{
    state.hyper.validate();
    const auto bind = [&](const Tensor& t) {
        Var v = trainable ? tape.variable(t) : tape.constant(t);
        params_.push_back(v);
        return v;
    };

    std::size_t widest = 0;
    for (std::size_t k : state.hyper.kernel_sizes)
        widest = std::max(widest, k);

    embed_ = bind(state.embed);
    for (const BlockParams& b : state.blocks) {
        BlockVars vars;
        const double inv = 1.0 / static_cast<double>(b.kernels.size());
        if (trainable) {
            Var merged;
            for (const Tensor& k : b.kernels) {
                const Var padded = ad::pad_kernel(bind(k), widest);
                merged = merged.valid() ? ad::add(merged, padded) : padded;
            }
            vars.kernel = ad::scale(merged, inv);
        } else {
            // Same arithmetic as the recorded path, without taping the parts.
            const Tensor& first = b.kernels.front();
            const std::size_t ci = first.dim(2), co = first.dim(3), block = ci * co;
            Tensor merged(Shape{widest, widest, ci, co});
            for (const Tensor& k : b.kernels) {
                params_.push_back(tape.constant(k));
                const std::size_t kh = k.dim(0), kw = k.dim(1), oh = (widest - kh) / 2, ow = (widest - kw) / 2;
                for (std::size_t a = 0; a < kh; ++a)
                    for (std::size_t c = 0; c < kw; ++c)
                        for (std::size_t t = 0; t < block; ++t)
                            merged[((a + oh) * widest + (c + ow)) * block + t] += k[(a * kw + c) * block + t];
            }
            for (double& v : merged.data())
                v *= inv;
            vars.kernel = tape.constant(std::move(merged));
        }
        vars.gain[0] = bind(b.primary.gain);
        vars.bias[0] = bind(b.primary.bias);
        vars.gain[1] = bind(b.auxiliary.gain);
        vars.bias[1] = bind(b.auxiliary.bias);
        blocks_.push_back(vars);
    }
    head_w_ = bind(state.head_w);
    head_b_ = bind(state.head_b);
}

Var PitnModel::temporal_block(std::size_t block, const Var& h, LnRoute route)
{
    const std::size_t T = h.value().dim(0);
    PeriodInfo info;
    PeriodTrace* trace = options_.trace;
    if (trace && trace->mode == PeriodTrace::Mode::Replay) {
        if (trace->cursor >= trace->entries.size())
            throw std::logic_error("period trace exhausted during replay");
        info = trace->entries[trace->cursor++];
    } else {
        info = detect_period(h.value(), options_.diag);
        if (trace)
            trace->entries.push_back(info);
    }

    const int r = route == LnRoute::Primary ? 0 : 1;
    if (route == LnRoute::Auxiliary)
        state_->aux_reads.bump();
    const BlockVars& b = blocks_.at(block);
    const Var normed = ad::layer_norm(h, b.gain[r], b.bias[r]);
    const Var mixed = ad::gelu(ad::conv2d(fold(normed, info.frequency, info.period), b.kernel));
    return ad::add(h, unfold(mixed, T));
}

PitnModel::Output PitnModel::forward(const Var& x, const Var& u, LnRoute route)
{
    const ModelHyper& hp = state_->hyper;
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || xv.dim(1) != hp.channels || xv.dim(0) < 4)
        throw DimensionError("model input must be [T x " + std::to_string(hp.channels) + "] with T >= 4, got " +
                             shape_string(xv.shape()));
    if (u.shape() != Shape{hp.n_features})
        throw DimensionError("model features must have shape [" + std::to_string(hp.n_features) + "], got " +
                             shape_string(u.shape()));

    Var h;
    try {
        h = ad::matmul(x, embed_);
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string("embedding: ") + e.what());
    }
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        try {
            h = temporal_block(b, h, route);
        } catch (const NonFiniteError& e) {
            throw NonFiniteError("temporal block " + std::to_string(b) + ": " + e.what());
        }
    }

    Output out;
    try {
        out.embedding = ad::mean_rows(h);
        out.y = ad::add(ad::dot(head_w_, ad::concat(out.embedding, u)), head_b_);
    } catch (const NonFiniteError& e) {
        throw NonFiniteError(std::string("regression head: ") + e.what());
    }
    out.grad_u = ad::slice(head_w_, hp.d_model, hp.d_model + hp.n_features);
    if (options_.detach_grad_u)
        out.grad_u = ad::detach(out.grad_u);
    return out;
}

double predict_one(const ModelState& state, const Tensor& x, const Tensor& u, LnRoute route)
{
    ad::Tape tape;
    PitnModel model(tape, state, false);
    return model.forward(tape.constant(x), tape.constant(u), route).y.value().item();
}

InputGradients grad_wrt_inputs(const ModelState& state, const Tensor& x, const Tensor& u, LnRoute route)
{
    ad::Tape tape;
    PitnModel model(tape, state, false);
    const Var xv = tape.variable(x);
    const Var uv = tape.variable(u);
    const Var y = model.forward(xv, uv, route).y;
    const ad::Gradients g = tape.backward(y);
    return {y.value().item(), g[xv], g[uv]};
}

}  // namespace pitn

#include "pitn/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace pitn::ad {

const Tensor& Var::value() const
{
    return tape_->value(id_);
}

bool Var::requires_grad() const
{
    return tape_->requires_grad(id_);
}

const Tensor& Gradients::at(std::size_t id) const
{
    Tensor& g = grads_.at(id);
    if (g.size() == 0 && tape_->value(id).size() != 0)
        g = Tensor::zeros_like(tape_->value(id));
    return g;
}

Var Tape::push(Node node)
{
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value)
{
    if (!value.all_finite())
        throw NonFiniteError("non-finite value in constant leaf");
    return push(Node{"constant", std::move(value), {}, {}, false});
}

Var Tape::variable(Tensor value)
{
    if (!value.all_finite())
        throw NonFiniteError("non-finite value in variable leaf");
    return push(Node{"variable", std::move(value), {}, {}, true});
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward)
{
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn backward)
{
    if (!value.all_finite())
        throw NonFiniteError(std::string("non-finite value produced by ") + op);
    Node node{op, std::move(value), {}, {}, false};
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
        if (in.tape() != this)
            throw std::logic_error(std::string(op) + ": operand belongs to a different tape");
        node.inputs.push_back(in.id());
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad)
        node.backward = std::move(backward);
    return push(std::move(node));
}

Gradients Tape::backward(const Var& loss) const
{
    if (loss.tape() != this)
        throw std::logic_error("backward: loss is not on this tape");
    if (loss.size() != 1)
        throw std::logic_error("backward: loss must be a scalar, got shape " +
                               shape_string(loss.shape()));

    Gradients out;
    out.tape_ = this;
    out.grads_.resize(nodes_.size());
    auto& grads = out.grads_;
    if (nodes_[loss.id()].requires_grad)
        grads[loss.id()] = Tensor(loss.shape(), 1.0);

    std::vector<Tensor*> input_grads;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        const Node& node = nodes_[i];
        if (!node.backward || grads[i].size() == 0)
            continue;
        input_grads.assign(node.inputs.size(), nullptr);
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            const std::size_t in = node.inputs[k];
            if (!nodes_[in].requires_grad)
                continue;
            if (grads[in].size() == 0)
                grads[in] = Tensor::zeros_like(nodes_[in].value);
            input_grads[k] = &grads[in];
        }
        node.backward(grads[i], input_grads);
    }
    return out;
}

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b)
{
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
}

void require_rank(const char* op, const Var& a, std::size_t rank)
{
    if (a.value().rank() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + shape_string(a.shape()));
}

Tape& tape_of(const Var& a)
{
    if (!a.valid())
        throw std::logic_error("operation on an unbound Var");
    return *a.tape();
}

}  // namespace

Var add(const Var& a, const Var& b)
{
    require_same_shape("add", a, b);
    Tensor y = a.value();
    y += b.value();
    return tape_of(a).record("add", std::move(y), {a, b}, [](const Tensor& g, std::span<Tensor* const> ig) {
        if (ig[0])
            *ig[0] += g;
        if (ig[1])
            *ig[1] += g;
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same_shape("sub", a, b);
    const Tensor& x = a.value();
    const Tensor& z = b.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = x[i] - z[i];
    return tape_of(a).record("sub", std::move(y), {a, b}, [](const Tensor& g, std::span<Tensor* const> ig) {
        if (ig[0])
            *ig[0] += g;
        if (ig[1])
            for (std::size_t i = 0; i < g.size(); ++i)
                (*ig[1])[i] -= g[i];
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same_shape("mul", a, b);
    const Tensor& x = a.value();
    const Tensor& z = b.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = x[i] * z[i];
    return tape_of(a).record("mul", std::move(y), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        const Tensor& z = b.value();
        if (ig[0])
            for (std::size_t i = 0; i < g.size(); ++i)
                (*ig[0])[i] += g[i] * z[i];
        if (ig[1])
            for (std::size_t i = 0; i < g.size(); ++i)
                (*ig[1])[i] += g[i] * x[i];
    });
}

Var div(const Var& a, const Var& b)
{
    require_same_shape("div", a, b);
    const Tensor& x = a.value();
    const Tensor& z = b.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < y.size(); ++i)
        y[i] = x[i] / z[i];
    return tape_of(a).record("div", std::move(y), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        const Tensor& z = b.value();
        if (ig[0])
            for (std::size_t i = 0; i < g.size(); ++i)
                (*ig[0])[i] += g[i] / z[i];
        if (ig[1])
            for (std::size_t i = 0; i < g.size(); ++i)
                (*ig[1])[i] -= g[i] * x[i] / (z[i] * z[i]);
    });
}

Var neg(const Var& a)
{
    return scale(a, -1.0);
}

Var scale(const Var& a, double factor)
{
    Tensor y = a.value();
    for (double& v : y.data())
        v *= factor;
    return tape_of(a).record("scale", std::move(y), {a}, [factor](const Tensor& g, std::span<Tensor* const> ig) {
        for (std::size_t i = 0; i < g.size(); ++i)
            (*ig[0])[i] += g[i] * factor;
    });
}

Var add_scalar(const Var& a, double offset)
{
    Tensor y = a.value();
    for (double& v : y.data())
        v += offset;
    return tape_of(a).record("add_scalar", std::move(y), {a}, [](const Tensor& g, std::span<Tensor* const> ig) {
        *ig[0] += g;
    });
}

Var mul_scalar(const Var& a, const Var& s)
{
    if (s.size() != 1)
        throw DimensionError("mul_scalar: scale factor must be a scalar, got " + shape_string(s.shape()));
    const double k = s.value()[0];
    Tensor y = a.value();
    for (double& v : y.data())
        v *= k;
    return tape_of(a).record("mul_scalar", std::move(y), {a, s}, [a, s](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        const double k = s.value()[0];
        if (ig[0])
            for (std::size_t i = 0; i < g.size(); ++i)
                (*ig[0])[i] += g[i] * k;
        if (ig[1]) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i)
                acc += g[i] * x[i];
            (*ig[1])[0] += acc;
        }
    });
}

Var exp(const Var& a)
{
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = std::exp(x[i]);
    Tape& tape = tape_of(a);
    const std::size_t out_id = tape.size();
    return tape.record("exp", std::move(y), {a}, [&tape, out_id](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& y = tape.value(out_id);
        for (std::size_t i = 0; i < g.size(); ++i)
            (*ig[0])[i] += g[i] * y[i];
    });
}

Var log(const Var& a)
{
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = std::log(x[i]);
    return tape_of(a).record("log", std::move(y), {a}, [a](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            (*ig[0])[i] += g[i] / x[i];
    });
}

Var sqrt(const Var& a)
{
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = std::sqrt(x[i]);
    Tape& tape = tape_of(a);
    const std::size_t out_id = tape.size();
    return tape.record("sqrt", std::move(y), {a}, [&tape, out_id](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& y = tape.value(out_id);
        for (std::size_t i = 0; i < g.size(); ++i)
            (*ig[0])[i] += g[i] * 0.5 / y[i];
    });
}

Var square(const Var& a)
{
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = x[i] * x[i];
    return tape_of(a).record("square", std::move(y), {a}, [a](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            (*ig[0])[i] += 2.0 * g[i] * x[i];
    });
}

Var relu(const Var& a)
{
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return tape_of(a).record("relu", std::move(y), {a}, [a](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0)
                (*ig[0])[i] += g[i];
    });
}

Var gelu(const Var& a)
{
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * inv_sqrt2));
    return tape_of(a).record("gelu", std::move(y), {a}, [a](const Tensor& g, std::span<Tensor* const> ig) {
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(x[i] * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
            (*ig[0])[i] += g[i] * (cdf + x[i] * pdf);
        }
    });
}

Var sum(const Var& a)
{
    double acc = 0.0;
    for (double v : a.value().data())
        acc += v;
    return tape_of(a).record("sum", Tensor::scalar(acc), {a}, [](const Tensor& g, std::span<Tensor* const> ig) {
        for (double& v : ig[0]->data())
            v += g[0];
    });
}

Var mean(const Var& a)
{
    const std::size_t n = a.size();
    if (n == 0)
        throw DimensionError("mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_rows(const Var& a)
{
    require_rank("mean_rows", a, 2);
    const Tensor& x = a.value();
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    if (rows == 0)
        throw DimensionError("mean_rows of a matrix with no rows");
    Tensor y(Shape{cols});
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            y[c] += x[r * cols + c];
    const double inv = 1.0 / static_cast<double>(rows);
    for (double& v : y.data())
        v *= inv;
    return tape_of(a).record("mean_rows", std::move(y), {a}, [rows, cols, inv](const Tensor& g, std::span<Tensor* const> ig) {
        Tensor& gx = *ig[0];
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                gx[r * cols + c] += g[c] * inv;
    });
}

Var dot(const Var& a, const Var& b)
{
    require_same_shape("dot", a, b);
    const Tensor& x = a.value();
    const Tensor& z = b.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
        acc += x[i] * z[i];
    return tape_of(a).record("dot", Tensor::scalar(acc), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        const Tensor& z = b.value();
        if (ig[0])
            for (std::size_t i = 0; i < x.size(); ++i)
                (*ig[0])[i] += g[0] * z[i];
        if (ig[1])
            for (std::size_t i = 0; i < x.size(); ++i)
                (*ig[1])[i] += g[0] * x[i];
    });
}

Var logsumexp(const Var& a)
{
    require_rank("logsumexp", a, 1);
    const Tensor& x = a.value();
    if (x.size() == 0)
        throw DimensionError("logsumexp of an empty vector");
    const double m = *std::max_element(x.data().begin(), x.data().end());
    double acc = 0.0;
    for (double v : x.data())
        acc += std::exp(v - m);
    const double lse = m + std::log(acc);
    return tape_of(a).record("logsumexp", Tensor::scalar(lse), {a}, [a, lse](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        for (std::size_t i = 0; i < x.size(); ++i)
            (*ig[0])[i] += g[0] * std::exp(x[i] - lse);
    });
}

Var matmul(const Var& a, const Var& b)
{
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const Tensor& x = a.value();
    const Tensor& w = b.value();
    const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
    if (w.dim(0) != k)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_string(x.shape()) + " x " +
                             shape_string(w.shape()));
    Tensor y(Shape{m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* yrow = &y[i * n];
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x[i * k + p];
            const double* wrow = &w[p * n];
            for (std::size_t j = 0; j < n; ++j)
                yrow[j] += xv * wrow[j];
        }
    }
    return tape_of(a).record("matmul", std::move(y), {a, b}, [a, b, m, k, n](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& x = a.value();
        const Tensor& w = b.value();
        if (ig[0]) {
            Tensor& gx = *ig[0];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j)
                        acc += g[i * n + j] * w[p * n + j];
                    gx[i * k + p] += acc;
                }
        }
        if (ig[1]) {
            Tensor& gw = *ig[1];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv = x[i * k + p];
                    double* gwrow = &gw[p * n];
                    const double* grow = &g[i * n];
                    for (std::size_t j = 0; j < n; ++j)
                        gwrow[j] += xv * grow[j];
                }
        }
    });
}

Var concat(const Var& a, const Var& b)
{
    require_rank("concat", a, 1);
    require_rank("concat", b, 1);
    const std::size_t na = a.size(), nb = b.size();
    std::vector<double> y(a.value().values());
    y.insert(y.end(), b.value().values().begin(), b.value().values().end());
    return tape_of(a).record("concat", Tensor::vector(std::move(y)), {a, b}, [na, nb](const Tensor& g, std::span<Tensor* const> ig) {
        if (ig[0])
            for (std::size_t i = 0; i < na; ++i)
                (*ig[0])[i] += g[i];
        if (ig[1])
            for (std::size_t i = 0; i < nb; ++i)
                (*ig[1])[i] += g[na + i];
    });
}

Var stack(std::span<const Var> scalars)
{
    if (scalars.empty())
        throw DimensionError("stack of zero values");
    std::vector<double> y;
    y.reserve(scalars.size());
    for (const Var& s : scalars) {
        if (s.size() != 1)
            throw DimensionError("stack: element of shape " + shape_string(s.shape()) + " is not a scalar");
        y.push_back(s.value()[0]);
    }
    return tape_of(scalars[0]).record("stack", Tensor::vector(std::move(y)), scalars, [](const Tensor& g, std::span<Tensor* const> ig) {
        for (std::size_t i = 0; i < ig.size(); ++i)
            if (ig[i])
                (*ig[i])[0] += g[i];
    });
}

Var select(const Var& a, std::size_t i)
{
    if (i >= a.size())
        throw DimensionError("select: index " + std::to_string(i) + " out of range for " + shape_string(a.shape()));
    return tape_of(a).record("select", Tensor::scalar(a.value()[i]), {a}, [i](const Tensor& g, std::span<Tensor* const> ig) {
        (*ig[0])[i] += g[0];
    });
}

Var slice(const Var& a, std::size_t begin, std::size_t end)
{
    require_rank("slice", a, 1);
    if (begin > end || end > a.size())
        throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") out of bounds for " + shape_string(a.shape()));
    const auto& v = a.value().values();
    std::vector<double> y(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end));
    return tape_of(a).record("slice", Tensor::vector(std::move(y)), {a}, [begin](const Tensor& g, std::span<Tensor* const> ig) {
        for (std::size_t i = 0; i < g.size(); ++i)
            (*ig[0])[begin + i] += g[i];
    });
}

Var reshape(const Var& a, Shape shape)
{
    Tensor y = a.value().reshaped(std::move(shape));
    return tape_of(a).record("reshape", std::move(y), {a}, [](const Tensor& g, std::span<Tensor* const> ig) {
        for (std::size_t i = 0; i < g.size(); ++i)
            (*ig[0])[i] += g[i];
    });
}

Var pad_rows(const Var& a, std::size_t rows)
{
    require_rank("pad_rows", a, 2);
    const Tensor& x = a.value();
    const std::size_t have = x.dim(0), cols = x.dim(1);
    if (rows < have)
        throw DimensionError("pad_rows: target " + std::to_string(rows) + " rows is shorter than input " +
                             shape_string(x.shape()));
    std::vector<double> y(x.values());
    y.resize(rows * cols, 0.0);
    const std::size_t n = have * cols;
    return tape_of(a).record("pad_rows", Tensor(Shape{rows, cols}, std::move(y)), {a}, [n](const Tensor& g, std::span<Tensor* const> ig) {
        for (std::size_t i = 0; i < n; ++i)
            (*ig[0])[i] += g[i];
    });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end)
{
    require_rank("slice_rows", a, 2);
    const Tensor& x = a.value();
    const std::size_t cols = x.dim(1);
    if (begin > end || end > x.dim(0))
        throw DimensionError("slice_rows: range out of bounds for " + shape_string(x.shape()));
    const auto first = x.values().begin() + static_cast<std::ptrdiff_t>(begin * cols);
    std::vector<double> y(first, first + static_cast<std::ptrdiff_t>((end - begin) * cols));
    const std::size_t offset = begin * cols;
    return tape_of(a).record("slice_rows", Tensor(Shape{end - begin, cols}, std::move(y)), {a}, [offset](const Tensor& g, std::span<Tensor* const> ig) {
        for (std::size_t i = 0; i < g.size(); ++i)
            (*ig[0])[offset + i] += g[i];
    });
}

Var detach(const Var& a)
{
    return tape_of(a).constant(a.value());
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps)
{
    const Tensor& xv = x.value();
    if (xv.rank() != 1 && xv.rank() != 2)
        throw DimensionError("layer_norm: expected vector or matrix, got " + shape_string(xv.shape()));
    const std::size_t d = xv.shape().back();
    const std::size_t rows = xv.size() / std::max<std::size_t>(d, 1);
    if (d == 0)
        throw DimensionError("layer_norm: empty feature dimension");
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(d) + "]");

    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    Tensor y(xv.shape());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = &xv[r * d];
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c)
            mu += row[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c)
            var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (row[c] - mu) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = h * gv[c] + bv[c];
        }
    }
    return tape_of(x).record(
        "layer_norm", std::move(y), {x, gain, bias},
        [gain, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& g, std::span<Tensor* const> ig) {
            const Tensor& gv = gain.value();
            std::vector<double> dh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* grow = &g[r * d];
                const double* hrow = &xhat[r * d];
                if (ig[1])
                    for (std::size_t c = 0; c < d; ++c)
                        (*ig[1])[c] += grow[c] * hrow[c];
                if (ig[2])
                    for (std::size_t c = 0; c < d; ++c)
                        (*ig[2])[c] += grow[c];
                if (ig[0]) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        dh[c] = grow[c] * gv[c];
                        mean_dh += dh[c];
                        mean_dh_h += dh[c] * hrow[c];
                    }
                    mean_dh /= static_cast<double>(d);
                    mean_dh_h /= static_cast<double>(d);
                    double* gx = &(*ig[0])[r * d];
                    for (std::size_t c = 0; c < d; ++c)
                        gx[c] += inv_std[r] * (dh[c] - mean_dh - hrow[c] * mean_dh_h);
                }
            }
        });
}

Var conv2d(const Var& x, const Var& kernel)
{
    require_rank("conv2d", x, 3);
    require_rank("conv2d", kernel, 4);
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    const std::size_t H = xv.dim(0), W = xv.dim(1), Ci = xv.dim(2);
    const std::size_t KH = kv.dim(0), KW = kv.dim(1), Co = kv.dim(3);
    if (KH % 2 == 0 || KW % 2 == 0)
        throw ConfigError("conv2d: kernel extents must be odd for same padding, got " + shape_string(kv.shape()));
    if (kv.dim(2) != Ci)
        throw DimensionError("conv2d: input has " + std::to_string(Ci) + " channels but kernel expects " +
                             std::to_string(kv.dim(2)));
    const long rh = static_cast<long>(KH / 2), rw = static_cast<long>(KW / 2);
    const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);

    Tensor y(Shape{H, W, Co});
    const double* xd = xv.data().data();
    const double* kd = kv.data().data();
    double* yd = y.data().data();
    for (long i = 0; i < Hl; ++i) {
        const long a0 = std::max(0L, rh - i), a1 = std::min(static_cast<long>(KH), Hl - i + rh);
        for (long j = 0; j < Wl; ++j) {
            const long b0 = std::max(0L, rw - j), b1 = std::min(static_cast<long>(KW), Wl - j + rw);
            double* __restrict out = yd + (static_cast<std::size_t>(i) * W + static_cast<std::size_t>(j)) * Co;
            // Output channels in register-sized blocks of 8, remainder one at a time.
            std::size_t co0 = 0;
            for (; co0 + 8 <= Co; co0 += 8) {
                double acc[8] = {};
                for (long a = a0; a < a1; ++a)
                    for (long b = b0; b < b1; ++b) {
                        const std::size_t pix = static_cast<std::size_t>(i + a - rh) * W + static_cast<std::size_t>(j + b - rw);
                        const double* __restrict in = xd + pix * Ci;
                        const double* __restrict kk = kd + (static_cast<std::size_t>(a) * KW + static_cast<std::size_t>(b)) * Ci * Co + co0;
                        for (std::size_t ci = 0; ci < Ci; ++ci)
                            for (std::size_t q = 0; q < 8; ++q)
                                acc[q] += in[ci] * kk[ci * Co + q];
                    }
                for (std::size_t q = 0; q < 8; ++q)
                    out[co0 + q] = acc[q];
            }
            for (std::size_t co = co0; co < Co; ++co) {
                double acc = 0.0;
                for (long a = a0; a < a1; ++a)
                    for (long b = b0; b < b1; ++b) {
                        const std::size_t pix = static_cast<std::size_t>(i + a - rh) * W + static_cast<std::size_t>(j + b - rw);
                        const double* __restrict in = xd + pix * Ci;
                        const double* __restrict kk = kd + (static_cast<std::size_t>(a) * KW + static_cast<std::size_t>(b)) * Ci * Co + co;
                        for (std::size_t ci = 0; ci < Ci; ++ci)
                            acc += in[ci] * kk[ci * Co];
                    }
                out[co] = acc;
            }
        }
    }

    return tape_of(x).record("conv2d", std::move(y), {x, kernel}, [x, kernel, H, W, Ci, KH, KW, Co, rh, rw](const Tensor& g, std::span<Tensor* const> ig) {
        const Tensor& xv = x.value();
        const Tensor& kv = kernel.value();
        const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
        // Kernel with the channel axes swapped so the input-gradient inner loop is contiguous.
        std::vector<double> kt;
        if (ig[0]) {
            kt.resize(kv.size());
            for (std::size_t t = 0; t < KH * KW; ++t)
                for (std::size_t ci = 0; ci < Ci; ++ci)
                    for (std::size_t co = 0; co < Co; ++co)
                        kt[(t * Co + co) * Ci + ci] = kv[(t * Ci + ci) * Co + co];
        }
        for (long i = 0; i < Hl; ++i)
            for (long j = 0; j < Wl; ++j) {
                const double* go = &g[(static_cast<std::size_t>(i) * W + static_cast<std::size_t>(j)) * Co];
                for (long a = 0; a < static_cast<long>(KH); ++a) {
                    const long ii = i + a - rh;
                    if (ii < 0 || ii >= Hl)
                        continue;
                    for (long b = 0; b < static_cast<long>(KW); ++b) {
                        const long jj = j + b - rw;
                        if (jj < 0 || jj >= Wl)
                            continue;
                        const std::size_t tap = static_cast<std::size_t>(a) * KW + static_cast<std::size_t>(b);
                        const std::size_t in_off = (static_cast<std::size_t>(ii) * W + static_cast<std::size_t>(jj)) * Ci;
                        if (ig[0]) {
                            double* gx = &(*ig[0])[in_off];
                            const double* kk = &kt[tap * Co * Ci];
                            for (std::size_t co = 0; co < Co; ++co) {
                                const double gv = go[co];
                                const double* krow = kk + co * Ci;
                                for (std::size_t ci = 0; ci < Ci; ++ci)
                                    gx[ci] += gv * krow[ci];
                            }
                        }
                        if (ig[1]) {
                            const double* in = &xv[in_off];
                            double* gk = &(*ig[1])[tap * Ci * Co];
                            for (std::size_t ci = 0; ci < Ci; ++ci) {
                                const double v = in[ci];
                                double* gkrow = gk + ci * Co;
                                for (std::size_t co = 0; co < Co; ++co)
                                    gkrow[co] += v * go[co];
                            }
                        }
                    }
                }
            }
    });
}

Var pad_kernel(const Var& kernel, std::size_t size)
{
    require_rank("pad_kernel", kernel, 4);
    const Tensor& kv = kernel.value();
    const std::size_t KH = kv.dim(0), KW = kv.dim(1), Ci = kv.dim(2), Co = kv.dim(3);
    if (KH > size || KW > size || (size - KH) % 2 != 0 || (size - KW) % 2 != 0)
        throw ConfigError("pad_kernel: cannot center " + shape_string(kv.shape()) + " in " + std::to_string(size) +
                          "x" + std::to_string(size));
    const std::size_t oh = (size - KH) / 2, ow = (size - KW) / 2;
    const std::size_t block = Ci * Co;
    Tensor y(Shape{size, size, Ci, Co});
    for (std::size_t a = 0; a < KH; ++a)
        for (std::size_t b = 0; b < KW; ++b)
            std::copy_n(&kv[(a * KW + b) * block], block, &y[((a + oh) * size + (b + ow)) * block]);
    return tape_of(kernel).record("pad_kernel", std::move(y), {kernel}, [KH, KW, oh, ow, size, block](const Tensor& g, std::span<Tensor* const> ig) {
        for (std::size_t a = 0; a < KH; ++a)
            for (std::size_t b = 0; b < KW; ++b) {
                const double* src = &g[((a + oh) * size + (b + ow)) * block];
                double* dst = &(*ig[0])[(a * KW + b) * block];
                for (std::size_t t = 0; t < block; ++t)
                    dst[t] += src[t];
            }
    });
}

}  // namespace pitn::ad

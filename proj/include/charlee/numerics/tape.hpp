#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <cblas.h>

#include "charlee/errors.hpp"
#include "charlee/numerics/params.hpp"
#include "charlee/numerics/special.hpp"

namespace charlee {

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id = 0;
};

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

/// Records a forward pass and replays it in reverse. Parameter leaves alias
/// their ParamTensor so backward() accumulates straight into ParamTensor::grads.
///
/// Layout conventions: a C x T signal is stored row-major (channel-major),
/// dense weights are [out][in], conv weights are [out][in][k].
class Tape {
public:
    using Backward = std::function<void(Tape&)>;

    Var constant(std::vector<double> v) { return push(std::move(v), nullptr); }
    Var constant(std::span<const double> v) { return push(std::vector<double>(v.begin(), v.end()), nullptr); }
    Var scalar(double v) { return push(std::vector<double>{v}, nullptr); }

    Var param(ParamTensor& p) {
        Node n;
        n.param = &p;
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    const std::vector<double>& value(Var v) const {
        const auto& n = nodes_.at(v.id);
        return n.param ? n.param->values : n.value;
    }
    double item(Var v) const { return value(v).at(0); }
    std::size_t size(Var v) const { return value(v).size(); }

    std::vector<double>& grad(Var v) {
        auto& n = nodes_.at(v.id);
        if (n.param) return n.param->grads;
        if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
        return n.grad;
    }

    std::size_t node_count() const noexcept { return nodes_.size(); }

    /// False for constant leaves, whose gradient nobody reads.
    bool needs_grad(Var v) const {
        const auto& n = nodes_.at(v.id);
        return n.param != nullptr || static_cast<bool>(n.backward);
    }

    /// Generic op: `value` is the output, `backward` reads grad(out) and adds
    /// into the inputs' grads.
    Var custom(std::vector<double> value, std::function<void(Tape&, Var out)> backward) {
        const Var out = push(std::move(value), nullptr);
        nodes_[out.id].backward = [out, bw = std::move(backward)](Tape& t) { bw(t, out); };
        return out;
    }

    /// Reverse sweep from a scalar root with seed 1.
    void backward(Var root) {
        if (size(root) != 1) throw ConfigError("backward root must be a scalar");
        grad(root)[0] += 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            auto& n = nodes_[i];
            if (n.backward && !n.grad.empty()) n.backward(*this);
        }
    }

    // ---- elementwise -------------------------------------------------------

    Var relu(Var x) {
        const auto& xv = value(x);
        std::vector<double> y(xv.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = charlee::relu(xv[i]);
        return custom(std::move(y), [x](Tape& t, Var out) {
            const auto& xv = t.value(x);
            const auto& g = t.grad(out);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv[i] > 0.0) gx[i] += g[i];
        });
    }

    Var sigmoid(Var x) {
        const auto& xv = value(x);
        std::vector<double> y(xv.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = charlee::sigmoid(xv[i]);
        return custom(std::move(y), [x](Tape& t, Var out) {
            const auto& yv = t.value(out);
            const auto& g = t.grad(out);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1.0 - yv[i]);
        });
    }

    Var softplus(Var x) {
        const auto& xv = value(x);
        std::vector<double> y(xv.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = charlee::softplus(xv[i]);
        return custom(std::move(y), [x](Tape& t, Var out) {
            const auto& xv = t.value(x);
            const auto& g = t.grad(out);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * charlee::sigmoid(xv[i]);
        });
    }

    Var add_scalar(Var x, double c) {
        auto y = value(x);
        for (auto& v : y) v += c;
        return custom(std::move(y), [x](Tape& t, Var out) {
            const auto& g = t.grad(out);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }

    Var scale(Var x, double c) {
        auto y = value(x);
        for (auto& v : y) v *= c;
        return custom(std::move(y), [x, c](Tape& t, Var out) {
            const auto& g = t.grad(out);
            auto& gx = t.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
        });
    }

    Var add(Var a, Var b) {
        const auto& av = value(a);
        const auto& bv = value(b);
        if (av.size() != bv.size()) throw ConfigError("add: size mismatch");
        std::vector<double> y(av.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
        return custom(std::move(y), [a, b](Tape& t, Var out) {
            const auto g = t.grad(out);
            auto& ga = t.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            auto& gb = t.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        });
    }

    /// Sum of scalars.
    Var sum(std::span<const Var> xs) {
        double s = 0.0;
        for (auto x : xs) {
            if (size(x) != 1) throw ConfigError("sum: expects scalars");
            s += item(x);
        }
        std::vector<Var> ins(xs.begin(), xs.end());
        return custom({s}, [ins](Tape& t, Var out) {
            const double g = t.grad(out)[0];
            for (auto x : ins) t.grad(x)[0] += g;
        });
    }
    Var sum(std::initializer_list<Var> xs) { return sum(std::span<const Var>(xs.begin(), xs.size())); }

    // ---- structure ---------------------------------------------------------

    Var concat(std::span<const Var> xs) {
        std::vector<double> y;
        for (auto x : xs) y.insert(y.end(), value(x).begin(), value(x).end());
        std::vector<Var> ins(xs.begin(), xs.end());
        return custom(std::move(y), [ins](Tape& t, Var out) {
            const auto g = t.grad(out);
            std::size_t off = 0;
            for (auto x : ins) {
                auto& gx = t.grad(x);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[off + i];
                off += gx.size();
            }
        });
    }
    Var concat(std::initializer_list<Var> xs) { return concat(std::span<const Var>(xs.begin(), xs.size())); }

    Var pick(Var x, std::size_t index) {
        if (index >= size(x)) throw ConfigError("pick: index out of range");
        return custom({value(x)[index]}, [x, index](Tape& t, Var out) { t.grad(x)[index] += t.grad(out)[0]; });
    }

    // ---- layers ------------------------------------------------------------

    /// y = W x + b with W of shape [out][in].
    Var dense(Var x, Var w, Var b) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        const auto& bv = value(b);
        const std::size_t in = xv.size();
        const std::size_t out_n = bv.size();
        if (in == 0 || wv.size() != in * out_n) throw ConfigError("dense: weight shape incompatible with input");
        std::vector<double> y(bv);
        for (std::size_t o = 0; o < out_n; ++o) {
            const double* row = wv.data() + o * in;
            double acc = 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += row[i] * xv[i];
            y[o] += acc;
        }
        return custom(std::move(y), [x, w, b, in, out_n](Tape& t, Var out) {
            const auto g = t.grad(out);
            const auto& xv = t.value(x);
            const auto& wv = t.value(w);
            auto& gw = t.grad(w);
            auto& gb = t.grad(b);
            for (std::size_t o = 0; o < out_n; ++o) {
                gb[o] += g[o];
                double* grow = gw.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) grow[i] += g[o] * xv[i];
            }
            auto& gx = t.grad(x);
            for (std::size_t o = 0; o < out_n; ++o) {
                const double* row = wv.data() + o * in;
                for (std::size_t i = 0; i < in; ++i) gx[i] += g[o] * row[i];
            }
        });
    }

    /// Same-padded 1-D convolution (zero padding, odd kernel length k):
    /// y[o][t] = b[o] + sum_i sum_j W[o][i][j] * x[i][t + j - k/2].
    /// Lowered to a matrix product over an (in*k) x T patch matrix.
    Var conv1d(Var x, Var w, Var b, std::size_t in_ch, std::size_t k) {
        const auto& xv = value(x);
        const auto& wv = value(w);
        const auto& bv = value(b);
        const std::size_t out_ch = bv.size();
        if (k % 2 == 0) throw ConfigError("conv1d: kernel length must be odd");
        if (in_ch == 0 || xv.empty() || xv.size() % in_ch != 0) throw InputError("conv1d: empty or ragged input");
        if (wv.size() != out_ch * in_ch * k) throw ConfigError("conv1d: kernel bank shape mismatch");
        const std::size_t T = xv.size() / in_ch;
        auto cols = im2col(xv.data(), in_ch, T, k);
        std::vector<double> y(out_ch * T);
        for (std::size_t o = 0; o < out_ch; ++o) std::fill_n(y.begin() + static_cast<long>(o * T), T, bv[o]);
        const int M = static_cast<int>(out_ch), N = static_cast<int>(T), K = static_cast<int>(in_ch * k);
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, M, N, K, 1.0, wv.data(), K, cols.data(), N, 1.0, y.data(), N);
        const bool x_needs_grad = needs_grad(x);
        return custom(std::move(y), [x, w, b, in_ch, out_ch, T, k, x_needs_grad, cols = std::move(cols)](Tape& t, Var out) {
            const auto& g = t.grad(out);
            const int M = static_cast<int>(out_ch), N = static_cast<int>(T), K = static_cast<int>(in_ch * k);
            {
                auto& gb = t.grad(b);
                for (std::size_t o = 0; o < out_ch; ++o)
                    for (std::size_t s = 0; s < T; ++s) gb[o] += g[o * T + s];
            }
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, M, K, N, 1.0, g.data(), N, cols.data(), N, 1.0,
                        t.grad(w).data(), K);
            if (!x_needs_grad) return;
            std::vector<double> gcols(in_ch * k * T);
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, K, N, M, 1.0, t.value(w).data(), K, g.data(), N, 0.0,
                        gcols.data(), N);
            auto& gx = t.grad(x);
            const long pad = static_cast<long>(k / 2);
            const long TT = static_cast<long>(T);
            for (std::size_t i = 0; i < in_ch; ++i)
                for (std::size_t j = 0; j < k; ++j) {
                    const long shift = static_cast<long>(j) - pad;
                    const long lo = std::max(0L, -shift), hi = std::min(TT, TT - shift);
                    const double* gc = gcols.data() + (i * k + j) * T;
                    double* gxi = gx.data() + i * T;
                    for (long s = lo; s < hi; ++s) gxi[s + shift] += gc[s];
                }
        });
    }

    /// Patch matrix: row (i*k + j) holds x[i][t + j - k/2] for t in [0, T), zero outside.
    static std::vector<double> im2col(const double* x, std::size_t in_ch, std::size_t T, std::size_t k) {
        std::vector<double> cols(in_ch * k * T, 0.0);
        const long pad = static_cast<long>(k / 2);
        const long TT = static_cast<long>(T);
        for (std::size_t i = 0; i < in_ch; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const long shift = static_cast<long>(j) - pad;
                const long lo = std::max(0L, -shift), hi = std::min(TT, TT - shift);
                double* row = cols.data() + (i * k + j) * T;
                for (long s = lo; s < hi; ++s) row[s] = x[i * T + static_cast<std::size_t>(s + shift)];
            }
        return cols;
    }

    /// Mean over time of a channels x T signal; output has one entry per channel.
    Var global_avg_pool(Var x, std::size_t channels) {
        const auto& xv = value(x);
        if (channels == 0 || xv.size() % channels != 0 || xv.empty()) throw ConfigError("global_avg_pool: bad shape");
        const std::size_t T = xv.size() / channels;
        std::vector<double> y(channels, 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
            double s = 0.0;
            for (std::size_t t = 0; t < T; ++t) s += xv[c * T + t];
            y[c] = s / static_cast<double>(T);
        }
        return custom(std::move(y), [x, channels, T](Tape& t, Var out) {
            const auto g = t.grad(out);
            auto& gx = t.grad(x);
            const double inv = 1.0 / static_cast<double>(T);
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t s = 0; s < T; ++s) gx[c * T + s] += g[c] * inv;
        });
    }

    // ---- losses ------------------------------------------------------------

    /// -log softmax(logits)[label], stabilized by max subtraction.
    Var softmax_cross_entropy(Var logits, std::size_t label) {
        const auto& z = value(logits);
        if (label >= z.size()) throw InputError("softmax_cross_entropy: label out of range");
        const auto p = softmax(z);
        const double m = *std::max_element(z.begin(), z.end());
        double se = 0.0;
        for (double v : z) se += std::exp(v - m);
        const double loss = std::log(se) + m - z[label];
        return custom({loss}, [logits, label, p](Tape& t, Var out) {
            const double g = t.grad(out)[0];
            auto& gz = t.grad(logits);
            for (std::size_t i = 0; i < p.size(); ++i) gz[i] += g * (p[i] - (i == label ? 1.0 : 0.0));
        });
    }

    /// Binary cross-entropy of a probability against a {0,1} target; the
    /// probability is clamped to [eps, 1 - eps].
    Var binary_cross_entropy(Var prob, double target, double eps = 1e-6) {
        const double p = item(prob);
        const double pc = std::clamp(p, eps, 1.0 - eps);
        const double loss = -(target * std::log(pc) + (1.0 - target) * std::log(1.0 - pc));
        const bool clamped = pc != p;
        return custom({loss}, [prob, target, pc, clamped](Tape& t, Var out) {
            if (clamped) return;
            const double g = t.grad(out)[0];
            t.grad(prob)[0] += g * (-(target / pc) + (1.0 - target) / (1.0 - pc));
        });
    }

    /// (pred - target)^2 for a scalar pred.
    Var squared_error(Var pred, double target) {
        const double d = item(pred) - target;
        return custom({d * d}, [pred, d](Tape& t, Var out) { t.grad(pred)[0] += 2.0 * d * t.grad(out)[0]; });
    }

    /// log Beta(x | alpha, beta) with alpha, beta scalar vars and x a constant.
    Var beta_log_prob(Var alpha, Var beta, double x) {
        const auto r = charlee::beta_log_prob(x, item(alpha), item(beta));
        return custom({r.value}, [alpha, beta, r](Tape& t, Var out) {
            const double g = t.grad(out)[0];
            t.grad(alpha)[0] += g * r.d_alpha;
            t.grad(beta)[0] += g * r.d_beta;
        });
    }

    static std::vector<double> softmax(std::span<const double> z) {
        const double m = *std::max_element(z.begin(), z.end());
        std::vector<double> p(z.size());
        double s = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
        for (auto& v : p) v /= s;
        return p;
    }

private:
    struct Node {
        std::vector<double> value;
        std::vector<double> grad;
        Backward backward;
        ParamTensor* param = nullptr;
    };

    Var push(std::vector<double> v, ParamTensor* p) {
        Node n;
        n.value = std::move(v);
        n.param = p;
        nodes_.push_back(std::move(n));
        return Var{nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

} // namespace charlee

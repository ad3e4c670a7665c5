#include "umrl/autograd.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "umrl/detail/resample.hpp"

namespace umrl::nn {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;
using ConstRowMap = Eigen::Map<const RowMat>;

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled) {
        for (const Var& in : inputs) needs = needs || in.requires_grad();
    }
    if (needs) {
        node->requires_grad = true;
        for (const Var& in : inputs) {
            if (in.defined()) node->parents.push_back(in.node());
        }
        node->backward = std::move(backward_fn);
    }
    return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op)
{
    if (!a.value().same_shape(b.value())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                                    b.value().shape_string());
    }
}

void require_chw(const Var& x, const char* op)
{
    if (x.value().rank() != 3) {
        throw std::invalid_argument(std::string(op) + ": expected {C,H,W}, got " + x.value().shape_string());
    }
}

template <typename Fn, typename Dfn>
Var unary(const Var& x, Fn f, Dfn df)
{
    Tensor out = Tensor::zeros_like(x.value());
    const Tensor& in = x.value();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_result(std::move(out), {x}, [x, df](Node& self) {
        if (!x.requires_grad()) return;
        Tensor& gx = x.node()->ensure_grad();
        const Tensor& in = x.value();
        for (std::size_t i = 0; i < in.size(); ++i) gx[i] += self.grad[i] * df(in[i], self.value[i]);
    });
}

Tensor scalar(double v) { return Tensor({1}, v); }

void im2col(const Tensor& x, int k, int pad, int oh, int ow, RowMat& col)
{
    const int c = x.channels();
    const int h = x.height();
    const int w = x.width();
    col.resize(static_cast<Eigen::Index>(c) * k * k, static_cast<Eigen::Index>(oh) * ow);
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = col.data() + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y + ky - pad;
                    double* dst = row + static_cast<std::size_t>(y) * ow;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + ow, 0.0);
                        continue;
                    }
                    const double* src = x.row(ch, sy);
                    for (int xx = 0; xx < ow; ++xx) {
                        const int sx = xx + kx - pad;
                        dst[xx] = (sx < 0 || sx >= w) ? 0.0 : src[sx];
                    }
                }
            }
        }
    }
}

void col2im_add(const RowMat& col, int k, int pad, int oh, int ow, Tensor& gx)
{
    const int c = gx.channels();
    const int h = gx.height();
    const int w = gx.width();
    for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = col.data() + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    const double* src = row + static_cast<std::size_t>(y) * ow;
                    double* dst = gx.row(ch, sy);
                    for (int xx = 0; xx < ow; ++xx) {
                        const int sx = xx + kx - pad;
                        if (sx >= 0 && sx < w) dst[sx] += src[xx];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor& Node::ensure_grad()
{
    if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor::zeros_like(value);
    return grad;
}

double Var::item() const
{
    if (value().size() != 1) throw std::invalid_argument("item() on non-scalar " + value().shape_string());
    return value()[0];
}

void Var::zero_grad()
{
    if (node_) node_->ensure_grad().fill(0.0);
}

Var parameter(Tensor value)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var constant(Tensor value)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& root)
{
    if (!root.defined() || root.value().size() != 1) {
        throw std::invalid_argument("backward() needs a scalar root");
    }
    if (!root.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (n->backward) n->ensure_grad().fill(0.0);
    }
    root.node()->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

Var add(const Var& a, const Var& b)
{
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    out.add_(b.value());
    return make_result(std::move(out), {a, b}, [a, b](Node& self) {
        if (a.requires_grad()) a.node()->ensure_grad().add_(self.grad);
        if (b.requires_grad()) b.node()->ensure_grad().add_(self.grad);
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_result(std::move(out), {a, b}, [a, b](Node& self) {
        if (a.requires_grad()) a.node()->ensure_grad().add_(self.grad);
        if (b.requires_grad()) {
            Tensor& gb = b.node()->ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_result(std::move(out), {a, b}, [a, b](Node& self) {
        if (a.requires_grad()) {
            Tensor& ga = a.node()->ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * b.value()[i];
        }
        if (b.requires_grad()) {
            Tensor& gb = b.node()->ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * a.value()[i];
        }
    });
}

Var affine(const Var& x, double scale_by, double shift)
{
    return unary(
        x, [=](double v) { return scale_by * v + shift; }, [=](double, double) { return scale_by; });
}

Var relu(const Var& x)
{
    return unary(
        x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& x)
{
    return unary(
        x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double s) { return s * (1.0 - s); });
}

Var tanh(const Var& x)
{
    return unary(
        x, [](double v) { return std::tanh(v); }, [](double, double t) { return 1.0 - t * t; });
}

Var clamp(const Var& x, double lo, double hi)
{
    return unary(
        x, [=](double v) { return v < lo ? lo : (v > hi ? hi : v); },
        [=](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int padding)
{
    require_chw(x, "conv2d");
    const Tensor& w = weight.value();
    if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
        throw std::invalid_argument("conv2d: weight must be {O,C,k,k}, got " + w.shape_string());
    }
    const int out_c = w.dim(0);
    const int in_c = w.dim(1);
    const int k = w.dim(2);
    if (x.value().channels() != in_c) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(x.value().channels()) +
                                    " channels, weight expects " + std::to_string(in_c));
    }
    if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != out_c)) {
        throw std::invalid_argument("conv2d: bias shape " + bias.value().shape_string());
    }
    const int oh = x.value().height() + 2 * padding - k + 1;
    const int ow = x.value().width() + 2 * padding - k + 1;
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: input smaller than kernel");

    RowMat col;
    im2col(x.value(), k, padding, oh, ow, col);
    Tensor out({out_c, oh, ow});
    ConstRowMap wm(w.data(), out_c, static_cast<Eigen::Index>(in_c) * k * k);
    RowMap om(out.data(), out_c, static_cast<Eigen::Index>(oh) * ow);
    om.noalias() = wm * col;
    if (bias.defined()) {
        for (int o = 0; o < out_c; ++o) om.row(o).array() += bias.value()[o];
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), std::move(inputs), [x, weight, bias, padding, k, oh, ow](Node& self) {
        const int out_c = weight.value().dim(0);
        const int in_c = weight.value().dim(1);
        const Eigen::Index cols = static_cast<Eigen::Index>(in_c) * k * k;
        ConstRowMap gy(self.grad.data(), out_c, static_cast<Eigen::Index>(oh) * ow);
        if (bias.requires_grad()) {
            Tensor& gb = bias.node()->ensure_grad();
            for (int o = 0; o < out_c; ++o) gb[o] += gy.row(o).sum();
        }
        RowMat col;
        if (weight.requires_grad()) {
            im2col(x.value(), k, padding, oh, ow, col);
            RowMap gw(weight.node()->ensure_grad().data(), out_c, cols);
            gw.noalias() += gy * col.transpose();
        }
        if (x.requires_grad()) {
            ConstRowMap wm(weight.value().data(), out_c, cols);
            col.resize(cols, static_cast<Eigen::Index>(oh) * ow);
            col.noalias() = wm.transpose() * gy;
            col2im_add(col, k, padding, oh, ow, x.node()->ensure_grad());
        }
    });
}

Var concat_channels(const std::vector<Var>& parts)
{
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const int h = parts.front().value().height();
    const int w = parts.front().value().width();
    int total = 0;
    for (const Var& p : parts) {
        require_chw(p, "concat_channels");
        if (p.value().height() != h || p.value().width() != w) {
            throw std::invalid_argument("concat_channels: spatial mismatch " + p.value().shape_string());
        }
        total += p.value().channels();
    }
    Tensor out({total, h, w});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
        offset += p.value().size();
    }
    return make_result(std::move(out), parts, [parts](Node& self) {
        std::size_t offset = 0;
        for (const Var& p : parts) {
            if (p.requires_grad()) {
                Tensor& g = p.node()->ensure_grad();
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
            }
            offset += p.value().size();
        }
    });
}

Var resize_half(const Var& x)
{
    require_chw(x, "resize_half");
    const int c = x.value().channels();
    const int h = x.value().height();
    const int w = x.value().width();
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("resize_half: odd spatial size " + x.value().shape_string());
    }
    Tensor out({c, h / 2, w / 2});
    detail::area_half(x.value().data(), c, h, w, out.data());
    return make_result(std::move(out), {x}, [x, c, h, w](Node& self) {
        if (x.requires_grad()) detail::area_half_adjoint(self.grad.data(), c, h, w, x.node()->ensure_grad().data());
    });
}

Var avg_pool2(const Var& x) { return resize_half(x); }

Var resize_double(const Var& x)
{
    require_chw(x, "resize_double");
    const int c = x.value().channels();
    const int h = x.value().height();
    const int w = x.value().width();
    Tensor out({c, 2 * h, 2 * w});
    detail::bilinear_double(x.value().data(), c, h, w, out.data());
    return make_result(std::move(out), {x}, [x, c, h, w](Node& self) {
        if (x.requires_grad()) {
            detail::bilinear_double_adjoint(self.grad.data(), c, h, w, x.node()->ensure_grad().data());
        }
    });
}

Var upsample_nearest2(const Var& x)
{
    require_chw(x, "upsample_nearest2");
    const int c = x.value().channels();
    const int h = x.value().height();
    const int w = x.value().width();
    Tensor out({c, 2 * h, 2 * w});
    detail::nearest_double(x.value().data(), c, h, w, out.data());
    return make_result(std::move(out), {x}, [x, c, h, w](Node& self) {
        if (x.requires_grad()) {
            detail::nearest_double_adjoint(self.grad.data(), c, h, w, x.node()->ensure_grad().data());
        }
    });
}

namespace {

Var batch_norm_impl(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state,
                    BatchNormState* update)
{
    const bool training = update != nullptr;
    require_chw(x, "batch_norm");
    const int c = x.value().channels();
    const std::size_t n = static_cast<std::size_t>(x.value().height()) * x.value().width();
    if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c)) {
        throw std::invalid_argument("batch_norm: affine parameters do not match " + std::to_string(c) + " channels");
    }
    if (state.running_mean.size() != static_cast<std::size_t>(c)) {
        throw std::invalid_argument("batch_norm: running statistics do not match channel count");
    }

    Tensor out = Tensor::zeros_like(x.value());
    std::vector<double> inv_std(c);
    std::vector<double> means(c);
    const Tensor& in = x.value();
    for (int ch = 0; ch < c; ++ch) {
        const double* src = in.data() + ch * n;
        double mean;
        double var;
        if (training) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += src[i];
            mean = s / static_cast<double>(n);
            double ss = 0.0;
            for (std::size_t i = 0; i < n; ++i) ss += (src[i] - mean) * (src[i] - mean);
            var = ss / static_cast<double>(n);
            const double unbiased = n > 1 ? ss / static_cast<double>(n - 1) : var;
            update->running_mean[ch] = (1.0 - state.momentum) * state.running_mean[ch] + state.momentum * mean;
            update->running_var[ch] = (1.0 - state.momentum) * state.running_var[ch] + state.momentum * unbiased;
        } else {
            mean = state.running_mean[ch];
            var = state.running_var[ch];
        }
        means[ch] = mean;
        inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
        const double g = gamma.value()[ch];
        const double b = beta.value()[ch];
        double* dst = out.data() + ch * n;
        for (std::size_t i = 0; i < n; ++i) dst[i] = g * (src[i] - mean) * inv_std[ch] + b;
    }

    return make_result(std::move(out), {x, gamma, beta}, [x, gamma, beta, means, inv_std, n, training](Node& self) {
        const int c = x.value().channels();
        std::vector<double> xhat(n);
        for (int ch = 0; ch < c; ++ch) {
            const double* dy = self.grad.data() + ch * n;
            const double* src = x.value().data() + ch * n;
            const double gch = gamma.value()[ch];
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                xhat[i] = (src[i] - means[ch]) * inv_std[ch];
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xhat[i];
            }
            if (gamma.requires_grad()) gamma.node()->ensure_grad()[ch] += sum_dy_xhat;
            if (beta.requires_grad()) beta.node()->ensure_grad()[ch] += sum_dy;
            if (!x.requires_grad()) continue;
            double* dx = x.node()->ensure_grad().data() + ch * n;
            if (training) {
                const double k = gch * inv_std[ch] / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) {
                    dx[i] += k * (static_cast<double>(n) * dy[i] - sum_dy - xhat[i] * sum_dy_xhat);
                }
            } else {
                for (std::size_t i = 0; i < n; ++i) dx[i] += gch * inv_std[ch] * dy[i];
            }
        }
    });
}

} // namespace

Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state)
{
    return batch_norm_impl(x, gamma, beta, state, &state);
}

Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta, const BatchNormState& state)
{
    return batch_norm_impl(x, gamma, beta, state, nullptr);
}

Var sum(const Var& x)
{
    return make_result(scalar(x.value().sum()), {x}, [x](Node& self) {
        if (!x.requires_grad()) return;
        Tensor& g = x.node()->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
    });
}

Var sum_abs(const Var& x)
{
    double s = 0.0;
    for (double v : x.value().values()) s += std::abs(v);
    return make_result(scalar(s), {x}, [x](Node& self) {
        if (!x.requires_grad()) return;
        Tensor& g = x.node()->ensure_grad();
        const Tensor& in = x.value();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double sign = in[i] > 0.0 ? 1.0 : (in[i] < 0.0 ? -1.0 : 0.0);
            g[i] += self.grad[0] * sign;
        }
    });
}

Var sum_log(const Var& x)
{
    double s = 0.0;
    for (double v : x.value().values()) {
        if (!(v > 0.0)) throw std::domain_error("sum_log: non-positive value " + std::to_string(v));
        s += std::log(v);
    }
    return make_result(scalar(s), {x}, [x](Node& self) {
        if (!x.requires_grad()) return;
        Tensor& g = x.node()->ensure_grad();
        const Tensor& in = x.value();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] / in[i];
    });
}

Var sum_square(const Var& x)
{
    double s = 0.0;
    for (double v : x.value().values()) s += v * v;
    return make_result(scalar(s), {x}, [x](Node& self) {
        if (!x.requires_grad()) return;
        Tensor& g = x.node()->ensure_grad();
        const Tensor& in = x.value();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * 2.0 * in[i];
    });
}

Var scale(const Var& x, double s) { return affine(x, s, 0.0); }

} // namespace umrl::nn

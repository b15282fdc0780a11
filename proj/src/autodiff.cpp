#include "citras/autodiff.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "citras/errors.hpp"

namespace citras {

namespace {

thread_local bool g_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;
using Backprop = std::function<void(Node&)>;

Var make(Tensor value, std::vector<NodePtr> parents, Backprop backprop) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled) {
        node->parents = std::move(parents);
        node->backprop = std::move(backprop);
    }
    return Var(std::move(node));
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    }
}

// out += a * b^T   (a: n x m, b: k x m, out: n x k)
void accumulate_nt(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += pa[r * m + j] * pb[c * m + j];
            po[r * k + c] += acc;
        }
    }
}

// out += a^T * b   (a: n x m, b: n x k, out: m x k)
void accumulate_tn(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t n = a.rows(), m = a.cols(), k = b.cols();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < m; ++i) {
            const double av = pa[r * m + i];
            if (av == 0.0) continue;
            double* orow = po + i * k;
            const double* brow = pb + r * k;
            for (std::size_t c = 0; c < k; ++c) orow[c] += av * brow[c];
        }
    }
}

void accumulate(Tensor& dst, const Tensor& src) {
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

Tensor as_matrix(const Tensor& t) {
    if (t.rank() == 2) return t;
    if (t.rank() == 1) return t.reshaped({1, t.size()});
    throw DimensionError("expected a matrix or vector, got " + shape_string(t.shape()));
}

}  // namespace

Mask Mask::causal(std::size_t n) {
    Mask m;
    m.shape = {n, n};
    m.allow.assign(n * n, 0);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c <= r; ++c) m.allow[r * n + c] = 1;
    }
    return m;
}

Tensor& Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() noexcept : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Tensor value) { return make(std::move(value), {}, nullptr); }

Var matmul(const Var& a, const Var& b) {
    Tensor out = matmul(as_matrix(a.value()), b.value());
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        const Tensor am = as_matrix(na.value);
        Tensor ga(am.shape(), 0.0);
        accumulate_nt(self.grad, nb.value, ga);
        accumulate(na.grad_buffer(), ga.reshaped(na.value.shape()));
        accumulate_tn(am, self.grad, nb.grad_buffer());
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    const Tensor xm = as_matrix(x);
    if (xm.cols() != weight.rows()) {
        throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " + shape_string(weight.shape()));
    }
    if (bias.size() != weight.cols()) {
        throw DimensionError("linear: bias " + shape_string(bias.shape()) + " incompatible with weight " + shape_string(weight.shape()));
    }
    Tensor out = matmul(xm, weight);
    const std::size_t m = out.cols();
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < m; ++c) out.at(r, c) += bias[c];
    }
    return out;
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    Tensor out = linear(x.value(), weight.value(), bias.value());
    return make(std::move(out), {x.node(), weight.node(), bias.node()}, [](Node& self) {
        Node& nx = *self.parents[0];
        Node& nw = *self.parents[1];
        Node& nb = *self.parents[2];
        const Tensor xm = as_matrix(nx.value);
        Tensor gx(xm.shape(), 0.0);
        accumulate_nt(self.grad, nw.value, gx);
        accumulate(nx.grad_buffer(), gx.reshaped(nx.value.shape()));
        accumulate_tn(xm, self.grad, nw.grad_buffer());
        Tensor& gb = nb.grad_buffer();
        const std::size_t m = self.grad.cols();
        for (std::size_t r = 0; r < self.grad.rows(); ++r) {
            for (std::size_t c = 0; c < m; ++c) gb[c] += self.grad.at(r, c);
        }
    });
}

Var linear(const Var& x, const Var& weight) { return matmul(x, weight); }

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    accumulate(out, b.value());
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        accumulate(self.parents[0]->grad_buffer(), self.grad);
        accumulate(self.parents[1]->grad_buffer(), self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        accumulate(self.parents[0]->grad_buffer(), self.grad);
        Tensor& gb = self.parents[1]->grad_buffer();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& na = *self.parents[0];
        Node& nb = *self.parents[1];
        Tensor& ga = na.grad_buffer();
        Tensor& gb = nb.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += self.grad[i] * nb.value[i];
            gb[i] += self.grad[i] * na.value[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= factor;
    return make(std::move(out), {a.node()}, [factor](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Var affine(const Var& a, double factor, double shift) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = v * factor + shift;
    return make(std::move(out), {a.node()}, [factor](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
    return make(std::move(out), {a.node()}, [](Node& self) {
        Node& na = *self.parents[0];
        Tensor& g = na.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (na.value[i] > 0.0) g[i] += self.grad[i];
        }
    });
}

Var transpose(const Var& a) {
    require_matrix(a.value(), "transpose");
    const std::size_t n = a.rows(), m = a.cols();
    Tensor out({m, n});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < m; ++c) out.at(c, r) = a.value().at(r, c);
    }
    return make(std::move(out), {a.node()}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const std::size_t n = g.rows(), m = g.cols();
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < m; ++c) g.at(r, c) += self.grad.at(c, r);
        }
    });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
    const Tensor& v = a.value();
    const std::size_t n = v.rows(), m = v.cols();
    if (begin >= end || end > n) {
        throw DimensionError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                             shape_string(v.shape()));
    }
    std::vector<double> data(v.data() + begin * m, v.data() + end * m);
    return make(Tensor({end - begin, m}, std::move(data)), {a.node()}, [begin, m](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        double* dst = g.data() + begin * m;
        for (std::size_t i = 0; i < self.grad.size(); ++i) dst[i] += self.grad[i];
    });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    const Tensor& v = a.value();
    const std::size_t n = v.rows(), m = v.cols();
    if (begin >= end || end > m) {
        throw DimensionError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                             shape_string(v.shape()));
    }
    const std::size_t w = end - begin;
    Tensor out({n, w});
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < w; ++c) out.at(r, c) = v.data()[r * m + begin + c];
    }
    return make(std::move(out), {a.node()}, [begin, m, w](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const std::size_t n = self.grad.rows();
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < w; ++c) g.data()[r * m + begin + c] += self.grad.at(r, c);
        }
    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_rows of zero tensors");
    const std::size_t m = parts.front().value().cols();
    std::size_t n = 0;
    for (const auto& p : parts) {
        if (p.value().cols() != m) throw DimensionError("concat_rows column mismatch: " + shape_string(p.shape()));
        n += p.value().rows();
    }
    std::vector<double> data;
    data.reserve(n * m);
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    for (const auto& p : parts) {
        data.insert(data.end(), p.value().storage().begin(), p.value().storage().end());
        parents.push_back(p.node());
    }
    return make(Tensor({n, m}, std::move(data)), std::move(parents), [](Node& self) {
        std::size_t offset = 0;
        for (auto& parent : self.parents) {
            Tensor& g = parent->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
            offset += g.size();
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols of zero tensors");
    const std::size_t n = parts.front().value().rows();
    std::size_t m = 0;
    for (const auto& p : parts) {
        if (p.value().rows() != n) throw DimensionError("concat_cols row mismatch: " + shape_string(p.shape()));
        m += p.value().cols();
    }
    Tensor out({n, m});
    std::vector<NodePtr> parents;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.value().cols();
        for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < w; ++c) out.at(r, offset + c) = p.value().data()[r * w + c];
        }
        offset += w;
        parents.push_back(p.node());
    }
    return make(std::move(out), std::move(parents), [](Node& self) {
        const std::size_t n = self.grad.rows(), m = self.grad.cols();
        std::size_t offset = 0;
        for (auto& parent : self.parents) {
            Tensor& g = parent->grad_buffer();
            const std::size_t w = g.size() / n;
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < w; ++c) g.data()[r * w + c] += self.grad.data()[r * m + offset + c];
            }
            offset += w;
        }
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make(std::move(out), {a.node()}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    return make(Tensor::scalar(total), {a.node()}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const double d = self.grad[0];
        for (auto& v : g.values()) v += d;
    });
}

Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    return make(Tensor::scalar(total / n), {a.node()}, [n](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const double d = self.grad[0] / n;
        for (auto& v : g.values()) v += d;
    });
}

Var mean_squared_error(const Var& prediction, const Tensor& target) {
    if (prediction.value().size() != target.size()) {
        throw DimensionError("mean_squared_error shape mismatch: " + shape_string(prediction.shape()) + " vs " +
                             shape_string(target.shape()));
    }
    const double n = static_cast<double>(target.size());
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double r = prediction.value()[i] - target[i];
        total += r * r;
    }
    return make(Tensor::scalar(total / n), {prediction.node()}, [target, n](Node& self) {
        Node& np = *self.parents[0];
        Tensor& g = np.grad_buffer();
        const double d = self.grad[0] * 2.0 / n;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * (np.value[i] - target[i]);
    });
}

namespace {

struct NormCache {
    Tensor xhat;
    std::vector<double> inv_std;
};

Tensor layer_norm_impl(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, NormCache* cache) {
    if (!(eps > 0.0)) throw ContractError("layer_norm eps must be > 0");
    const Tensor xm = as_matrix(x);
    const std::size_t n = xm.rows(), d = xm.cols();
    if (gamma.size() != d || beta.size() != d) {
        throw DimensionError("layer_norm: gamma/beta " + shape_string(gamma.shape()) + "/" + shape_string(beta.shape()) +
                             " incompatible with input " + shape_string(x.shape()));
    }
    Tensor out(x.shape());
    Tensor xhat(xm.shape());
    std::vector<double> inv_std(n);
    for (std::size_t r = 0; r < n; ++r) {
        const double* row = xm.data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) mu += row[c];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (row[c] - mu) * inv;
            xhat.data()[r * d + c] = h;
            out.data()[r * d + c] = h * gamma[c] + beta[c];
        }
    }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return out;
}

}  // namespace

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    return layer_norm_impl(x, gamma, beta, eps, nullptr);
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    auto cache = std::make_shared<NormCache>();
    Tensor out = layer_norm_impl(x.value(), gamma.value(), beta.value(), eps, grad_enabled() ? cache.get() : nullptr);
    return make(std::move(out), {x.node(), gamma.node(), beta.node()}, [cache](Node& self) {
        Node& nx = *self.parents[0];
        Node& ng = *self.parents[1];
        Node& nb = *self.parents[2];
        const Tensor& xhat = cache->xhat;
        const std::size_t n = xhat.rows(), d = xhat.cols();
        Tensor& gx = nx.grad_buffer();
        Tensor& gg = ng.grad_buffer();
        Tensor& gb = nb.grad_buffer();
        std::vector<double> dxhat(d);
        for (std::size_t r = 0; r < n; ++r) {
            const double* dy = self.grad.data() + r * d;
            const double* h = xhat.data() + r * d;
            double mean_dxhat = 0.0, mean_dxhat_h = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                dxhat[c] = dy[c] * ng.value[c];
                mean_dxhat += dxhat[c];
                mean_dxhat_h += dxhat[c] * h[c];
                gg[c] += dy[c] * h[c];
                gb[c] += dy[c];
            }
            mean_dxhat /= static_cast<double>(d);
            mean_dxhat_h /= static_cast<double>(d);
            const double inv = cache->inv_std[r];
            double* g = gx.data() + r * d;
            for (std::size_t c = 0; c < d; ++c) g[c] += inv * (dxhat[c] - mean_dxhat - h[c] * mean_dxhat_h);
        }
    });
}

Tensor masked_softmax(const Tensor& logits, const Mask* mask) {
    const std::size_t k = logits.shape().back();
    const std::size_t rows = logits.size() / k;
    if (mask && mask->allow.size() != logits.size()) {
        throw DimensionError("masked_softmax: mask " + shape_string(mask->shape) + " does not match logits " +
                             shape_string(logits.shape()));
    }
    Tensor out(logits.shape(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = logits.data() + r * k;
        const std::uint8_t* allow = mask ? mask->allow.data() + r * k : nullptr;
        double mx = -std::numeric_limits<double>::infinity();
        bool any = false;
        for (std::size_t c = 0; c < k; ++c) {
            if (allow && !allow[c]) continue;
            any = true;
            mx = std::max(mx, x[c]);
        }
        if (!any) throw DegenerateMaskError("masked_softmax: row " + std::to_string(r) + " has every entry masked");
        double* y = out.data() + r * k;
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            if (allow && !allow[c]) continue;
            y[c] = std::exp(x[c] - mx);
            z += y[c];
        }
        for (std::size_t c = 0; c < k; ++c) y[c] /= z;
    }
    return out;
}

Var masked_softmax(const Var& logits, const Mask* mask) {
    Tensor out = masked_softmax(logits.value(), mask);
    return make(std::move(out), {logits.node()}, [](Node& self) {
        Tensor& g = self.parents[0]->grad_buffer();
        const Tensor& y = self.value;
        const std::size_t k = y.shape().back();
        const std::size_t rows = y.size() / k;
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = y.data() + r * k;
            const double* dy = self.grad.data() + r * k;
            double dot = 0.0;
            for (std::size_t c = 0; c < k; ++c) dot += dy[c] * yr[c];
            double* gr = g.data() + r * k;
            for (std::size_t c = 0; c < k; ++c) gr[c] += yr[c] * (dy[c] - dot);
        }
    });
}

namespace {

// Rotates pairs (2j, 2j+1) of row r by +/- angle; sign = -1 applies the inverse.
void rotate_pairs(const Tensor& in, Tensor& out, double base, std::size_t first_position, double sign, bool accumulate_out) {
    const std::size_t n = in.rows(), d = in.cols();
    for (std::size_t r = 0; r < n; ++r) {
        const double pos = static_cast<double>(first_position + r);
        for (std::size_t j = 0; j < d / 2; ++j) {
            const double theta = pos * std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
            const double cs = std::cos(theta), sn = sign * std::sin(theta);
            const double x0 = in.data()[r * d + 2 * j], x1 = in.data()[r * d + 2 * j + 1];
            const double y0 = x0 * cs - x1 * sn;
            const double y1 = x0 * sn + x1 * cs;
            if (accumulate_out) {
                out.data()[r * d + 2 * j] += y0;
                out.data()[r * d + 2 * j + 1] += y1;
            } else {
                out.data()[r * d + 2 * j] = y0;
                out.data()[r * d + 2 * j + 1] = y1;
            }
        }
    }
}

}  // namespace

Tensor rope(const Tensor& x, double base, std::size_t first_position) {
    const Tensor xm = as_matrix(x);
    if (xm.cols() % 2 != 0) throw ConfigError("rope requires an even head dimension, got " + std::to_string(xm.cols()));
    Tensor out(xm.shape());
    rotate_pairs(xm, out, base, first_position, 1.0, false);
    return out.reshaped(x.shape());
}

Var rope(const Var& x, double base, std::size_t first_position) {
    Tensor out = rope(x.value(), base, first_position);
    return make(std::move(out), {x.node()}, [base, first_position](Node& self) {
        Node& nx = *self.parents[0];
        Tensor& g = nx.grad_buffer();
        const Tensor gm = as_matrix(self.grad);
        Tensor acc(gm.shape(), 0.0);
        rotate_pairs(gm, acc, base, first_position, -1.0, true);
        accumulate(g, acc.reshaped(g.shape()));
    });
}

}  // namespace citras

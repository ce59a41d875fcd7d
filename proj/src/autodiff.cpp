#include "iclsynth/autodiff.hpp"

#include <cmath>

#include "iclsynth/kernels.hpp"

namespace icls {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// Rows of a flattened (rows x width) view.
std::size_t row_count(const Tensor& t, std::size_t width) { return t.numel() / width; }

}  // namespace

Graph::Node& Graph::node(Var v) { return nodes_.at(static_cast<std::size_t>(v.id)); }
const Graph::Node& Graph::node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }

Var Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Graph::any_needs_grad(std::initializer_list<Var> vars) const {
    if (!grad_enabled_) return false;
    for (Var v : vars) {
        if (v.valid() && node(v).needs_grad) return true;
    }
    return false;
}

void Graph::accumulate(Node& n, const Tensor& delta) {
    if (n.grad.empty() && n.grad.rank() == 0 && n.grad.numel() == 0) {
        n.grad = Tensor(node_value(n).shape());
    }
    kern::active().axpy(n.grad.data(), 1.0, delta.data(), delta.numel());
}

Var Graph::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Graph::param(Tensor* storage) {
    if (storage == nullptr) throw DataError("param: null storage");
    Node n;
    n.op = Op::Param;
    n.external = storage;
    n.needs_grad = grad_enabled_;
    return push(std::move(n));
}

Var Graph::add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.args = {a.id, b.id};
    n.needs_grad = any_needs_grad({a, b});
    n.value = icls::add(value(a), value(b));
    return push(std::move(n));
}

Var Graph::sub(Var a, Var b) {
    Node n;
    n.op = Op::Sub;
    n.args = {a.id, b.id};
    n.needs_grad = any_needs_grad({a, b});
    n.value = icls::sub(value(a), value(b));
    return push(std::move(n));
}

Var Graph::mul(Var a, Var b) {
    Node n;
    n.op = Op::Mul;
    n.args = {a.id, b.id};
    n.needs_grad = any_needs_grad({a, b});
    n.value = icls::mul(value(a), value(b));
    return push(std::move(n));
}

Var Graph::scale(Var a, double alpha) {
    Node n;
    n.op = Op::Scale;
    n.args = {a.id};
    n.scalar = alpha;
    n.needs_grad = any_needs_grad({a});
    n.value = icls::scale(value(a), alpha);
    return push(std::move(n));
}

Var Graph::add_bias_rows(Var x, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& bv = value(bias);
    if (xv.rank() == 0) throw ShapeError("add_bias_rows: scalar input");
    const std::size_t width = xv.dim(xv.rank() - 1);
    if (bv.numel() != width) {
        throw ShapeError("add_bias_rows: bias " + bv.shape_str() + " vs last axis of " +
                         xv.shape_str());
    }
    Node n;
    n.op = Op::AddBiasRows;
    n.args = {x.id, bias.id};
    n.needs_grad = any_needs_grad({x, bias});
    n.value = xv;
    double* out = n.value.data();
    const std::size_t rows = row_count(xv, width);
    for (std::size_t r = 0; r < rows; ++r) {
        kern::active().axpy(out + r * width, 1.0, bv.data(), width);
    }
    return push(std::move(n));
}

Var Graph::matmul(Var a, Var b) {
    Node n;
    n.op = Op::MatMul;
    n.args = {a.id, b.id};
    n.needs_grad = any_needs_grad({a, b});
    n.value = icls::matmul(value(a), value(b));
    return push(std::move(n));
}

Var Graph::relu(Var x) {
    Node n;
    n.op = Op::Relu;
    n.args = {x.id};
    n.needs_grad = any_needs_grad({x});
    const Tensor& xv = value(x);
    n.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) n.value[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    return push(std::move(n));
}

Var Graph::gelu(Var x) {
    Node n;
    n.op = Op::Gelu;
    n.args = {x.id};
    n.needs_grad = any_needs_grad({x});
    const Tensor& xv = value(x);
    n.value = Tensor(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) n.value[i] = gelu_fwd(xv[i]);
    return push(std::move(n));
}

Var Graph::dropout(Var x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw DataError("dropout: rate must be in [0, 1)");
    const Tensor& xv = value(x);
    Node n;
    n.op = Op::Dropout;
    n.args = {x.id};
    n.scalar = rate;
    n.needs_grad = any_needs_grad({x});
    if (rate == 0.0) {
        n.value = xv;
        return push(std::move(n));
    }
    Tensor mask(xv.shape());
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < mask.numel(); ++i) {
        mask[i] = rng.uniform() >= rate ? keep_scale : 0.0;
    }
    n.value = icls::mul(xv, mask);
    n.saved.push_back(std::move(mask));
    return push(std::move(n));
}

Var Graph::softmax_lastdim(Var x) {
    Node n;
    n.op = Op::SoftmaxLastDim;
    n.args = {x.id};
    n.needs_grad = any_needs_grad({x});
    n.value = icls::softmax(value(x), -1);
    return push(std::move(n));
}

Var Graph::layer_norm(Var x, Var gain, Var bias) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gain);
    const Tensor& bv = value(bias);
    if (xv.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t width = xv.dim(xv.rank() - 1);
    if (gv.numel() != width || bv.numel() != width) {
        throw ShapeError("layer_norm: gain/bias " + gv.shape_str() + "/" + bv.shape_str() +
                         " do not match last axis of " + xv.shape_str());
    }
    Node n;
    n.op = Op::LayerNorm;
    n.args = {x.id, gain.id, bias.id};
    n.needs_grad = any_needs_grad({x, gain, bias});

    const std::size_t rows = row_count(xv, width);
    n.value = Tensor(xv.shape());
    Tensor xhat(xv.shape());
    Tensor rstd({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * width;
        const double mean = kern::active().sum(row, width) / static_cast<double>(width);
        double var = 0.0;
        for (std::size_t j = 0; j < width; ++j) {
            const double d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(width);
        const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
        rstd[r] = rs;
        double* xh = xhat.data() + r * width;
        double* out = n.value.data() + r * width;
        for (std::size_t j = 0; j < width; ++j) {
            xh[j] = (row[j] - mean) * rs;
            out[j] = xh[j] * gv[j] + bv[j];
        }
    }
    if (n.needs_grad) {
        n.saved.push_back(std::move(xhat));
        n.saved.push_back(std::move(rstd));
    }
    return push(std::move(n));
}

Var Graph::multi_head_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo,
                                Var bo, std::size_t heads, std::size_t kv_begin,
                                std::size_t kv_end) {
    const Tensor& xv = value(x);
    if (xv.rank() != 3) throw ShapeError("multi_head_attention: expected rank-3 input");
    const std::size_t B = xv.dim(0), T = xv.dim(1), D = xv.dim(2);
    if (heads == 0 || D % heads != 0) {
        throw ShapeError("multi_head_attention: model dim " + std::to_string(D) +
                         " not divisible by heads " + std::to_string(heads));
    }
    if (kv_begin >= kv_end || kv_end > T) {
        throw ShapeError("multi_head_attention: bad kv window [" + std::to_string(kv_begin) +
                         ", " + std::to_string(kv_end) + ") for T=" + std::to_string(T));
    }
    for (Var w : {wq, wk, wv, wo}) {
        const Tensor& wt = value(w);
        if (wt.rank() != 2 || wt.dim(0) != D || wt.dim(1) != D) {
            throw ShapeError("multi_head_attention: weight " + wt.shape_str() + " expected (" +
                             std::to_string(D) + "x" + std::to_string(D) + ")");
        }
    }
    const std::size_t Tk = kv_end - kv_begin;
    const std::size_t hd = D / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const auto& K = kern::active();

    Node n;
    n.op = Op::Mha;
    n.args = {x.id, wq.id, bq.id, wk.id, bk.id, wv.id, bv.id, wo.id, bo.id};
    n.needs_grad =
        any_needs_grad({x, wq, bq, wk, bk, wv, bv, wo, bo});
    n.i0 = heads;
    n.i1 = kv_begin;
    n.i2 = kv_end;
    n.value = Tensor({B, T, D});

    Tensor q_all({B, T, D}), k_all({B, Tk, D}), v_all({B, Tk, D}), o_all({B, T, D});
    Tensor p_all;
    if (n.needs_grad) p_all = Tensor({B, heads, T, Tk});

    const Tensor& wqv = value(wq);
    const Tensor& wkv = value(wk);
    const Tensor& wvv = value(wv);
    const Tensor& wov = value(wo);
    const Tensor& bqv = value(bq);
    const Tensor& bkv = value(bk);
    const Tensor& bvv = value(bv);
    const Tensor& bov = value(bo);

    std::vector<double> qh(T * hd), kh(Tk * hd), vh(Tk * hd), scores(T * Tk), oh(T * hd);
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = xv.data() + b * T * D;
        const double* xkv = xb + kv_begin * D;
        double* qb = q_all.data() + b * T * D;
        double* kb = k_all.data() + b * Tk * D;
        double* vb = v_all.data() + b * Tk * D;
        double* ob = o_all.data() + b * T * D;

        K.matmul_acc(qb, xb, wqv.data(), T, D, D);
        K.matmul_acc(kb, xkv, wkv.data(), Tk, D, D);
        K.matmul_acc(vb, xkv, wvv.data(), Tk, D, D);
        for (std::size_t t = 0; t < T; ++t) K.axpy(qb + t * D, 1.0, bqv.data(), D);
        for (std::size_t t = 0; t < Tk; ++t) {
            K.axpy(kb + t * D, 1.0, bkv.data(), D);
            K.axpy(vb + t * D, 1.0, bvv.data(), D);
        }

        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * hd;
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t j = 0; j < hd; ++j) qh[t * hd + j] = qb[t * D + off + j];
            }
            for (std::size_t t = 0; t < Tk; ++t) {
                for (std::size_t j = 0; j < hd; ++j) {
                    kh[t * hd + j] = kb[t * D + off + j];
                    vh[t * hd + j] = vb[t * D + off + j];
                }
            }
            std::fill(scores.begin(), scores.end(), 0.0);
            K.matmul_a_bt_acc(scores.data(), qh.data(), kh.data(), T, hd, Tk);
            // Row-wise stabilized softmax of att_scale * scores.
            for (std::size_t t = 0; t < T; ++t) {
                double* row = scores.data() + t * Tk;
                for (std::size_t j = 0; j < Tk; ++j) row[j] *= att_scale;
                const double m = K.max(row, Tk);
                double denom = 0.0;
                for (std::size_t j = 0; j < Tk; ++j) {
                    row[j] = std::exp(row[j] - m);
                    denom += row[j];
                }
                const double inv = 1.0 / denom;
                for (std::size_t j = 0; j < Tk; ++j) row[j] *= inv;
            }
            if (n.needs_grad) {
                double* pdst = p_all.data() + ((b * heads + h) * T) * Tk;
                std::copy(scores.begin(), scores.end(), pdst);
            }
            std::fill(oh.begin(), oh.end(), 0.0);
            K.matmul_acc(oh.data(), scores.data(), vh.data(), T, Tk, hd);
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t j = 0; j < hd; ++j) ob[t * D + off + j] = oh[t * hd + j];
            }
        }
        double* yb = n.value.data() + b * T * D;
        K.matmul_acc(yb, ob, wov.data(), T, D, D);
        for (std::size_t t = 0; t < T; ++t) K.axpy(yb + t * D, 1.0, bov.data(), D);
    }

    if (n.needs_grad) {
        n.saved.push_back(std::move(q_all));
        n.saved.push_back(std::move(k_all));
        n.saved.push_back(std::move(v_all));
        n.saved.push_back(std::move(p_all));
        n.saved.push_back(std::move(o_all));
    }
    return push(std::move(n));
}

Var Graph::reshape(Var x, std::vector<std::size_t> shape) {
    Node n;
    n.op = Op::Reshape;
    n.args = {x.id};
    n.needs_grad = any_needs_grad({x});
    n.value = value(x).reshaped(std::move(shape));
    return push(std::move(n));
}

Var Graph::concat_axis0(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.rank() == 0 || av.rank() != bv.rank()) {
        throw ShapeError("concat_axis0: rank mismatch " + av.shape_str() + " vs " +
                         bv.shape_str());
    }
    for (std::size_t i = 1; i < av.rank(); ++i) {
        if (av.dim(i) != bv.dim(i)) {
            throw ShapeError("concat_axis0: trailing dims differ " + av.shape_str() + " vs " +
                             bv.shape_str());
        }
    }
    std::vector<std::size_t> shape = av.shape();
    shape[0] += bv.dim(0);
    Node n;
    n.op = Op::ConcatAxis0;
    n.args = {a.id, b.id};
    n.needs_grad = any_needs_grad({a, b});
    n.value = Tensor(std::move(shape));
    std::copy(av.data(), av.data() + av.numel(), n.value.data());
    std::copy(bv.data(), bv.data() + bv.numel(), n.value.data() + av.numel());
    return push(std::move(n));
}

Var Graph::slice_axis0(Var x, std::size_t from, std::size_t to) {
    const Tensor& xv = value(x);
    if (xv.rank() == 0 || from >= to || to > xv.dim(0)) {
        throw ShapeError("slice_axis0: bad range [" + std::to_string(from) + ", " +
                         std::to_string(to) + ") for " + xv.shape_str());
    }
    std::vector<std::size_t> shape = xv.shape();
    shape[0] = to - from;
    const std::size_t stride = xv.numel() / xv.dim(0);
    Node n;
    n.op = Op::SliceAxis0;
    n.args = {x.id};
    n.i1 = from;
    n.i2 = to;
    n.needs_grad = any_needs_grad({x});
    n.value = Tensor(std::move(shape));
    std::copy(xv.data() + from * stride, xv.data() + to * stride, n.value.data());
    return push(std::move(n));
}

Var Graph::transpose01(Var x) {
    const Tensor& xv = value(x);
    if (xv.rank() != 3) throw ShapeError("transpose01: expected rank-3, got " + xv.shape_str());
    const std::size_t A = xv.dim(0), B = xv.dim(1), C = xv.dim(2);
    Node n;
    n.op = Op::Transpose01;
    n.args = {x.id};
    n.needs_grad = any_needs_grad({x});
    n.value = Tensor({B, A, C});
    for (std::size_t i = 0; i < A; ++i) {
        for (std::size_t j = 0; j < B; ++j) {
            const double* src = xv.data() + (i * B + j) * C;
            double* dst = n.value.data() + (j * A + i) * C;
            std::copy(src, src + C, dst);
        }
    }
    return push(std::move(n));
}

Var Graph::sum(Var x) {
    Node n;
    n.op = Op::Sum;
    n.args = {x.id};
    n.needs_grad = any_needs_grad({x});
    n.value = Tensor::scalar(sum_all(value(x)));
    return push(std::move(n));
}

Var Graph::mean(Var x) {
    Node n;
    n.op = Op::Mean;
    n.args = {x.id};
    n.needs_grad = any_needs_grad({x});
    n.value = Tensor::scalar(mean_all(value(x)));
    return push(std::move(n));
}

Var Graph::mean_sq_diff(Var a, Var b) {
    Node n;
    n.op = Op::MeanSqDiff;
    n.args = {a.id, b.id};
    n.needs_grad = any_needs_grad({a, b});
    n.value = Tensor::scalar(sq_diff_mean(value(a), value(b)));
    return push(std::move(n));
}

Var Graph::cross_entropy_logits(Var logits, std::vector<int> labels) {
    const Tensor& lv = value(logits);
    if (lv.rank() != 2) throw ShapeError("cross_entropy_logits: expected (rows x classes)");
    const std::size_t R = lv.dim(0), C = lv.dim(1);
    if (labels.size() != R) throw ShapeError("cross_entropy_logits: label count mismatch");
    Node n;
    n.op = Op::CrossEntropyLogits;
    n.args = {logits.id};
    n.needs_grad = any_needs_grad({logits});
    Tensor probs = icls::softmax(lv, -1);
    double loss = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
        const int label = labels[r];
        if (label < 0 || static_cast<std::size_t>(label) >= C) {
            throw DataError("cross_entropy_logits: label out of range");
        }
        // max-shifted log-sum-exp for the row.
        const double* row = lv.data() + r * C;
        const double m = kern::active().max(row, C);
        double se = 0.0;
        for (std::size_t c = 0; c < C; ++c) se += std::exp(row[c] - m);
        loss += m + std::log(se) - row[static_cast<std::size_t>(label)];
    }
    n.value = Tensor::scalar(loss / static_cast<double>(R));
    n.labels = std::move(labels);
    if (n.needs_grad) n.saved.push_back(std::move(probs));
    return push(std::move(n));
}

const Tensor& Graph::value(Var v) const { return node_value(node(v)); }

Tensor Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.numel() == 0 && n.grad.rank() == 0) return Tensor(node_value(n).shape());
    return n.grad;
}

void Graph::backward(Var loss) {
    if (!grad_enabled_) throw DataError("backward: graph was built with gradients disabled");
    Node& ln = node(loss);
    if (node_value(ln).rank() != 0) {
        throw DataError("backward: loss must be scalar, got shape " +
                        node_value(ln).shape_str());
    }
    ln.grad = Tensor::scalar(1.0);
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.needs_grad || n.grad.numel() == 0) continue;
        backward_node(i);
    }
}

void Graph::backward_node(int idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    const Tensor& g = n.grad;
    const auto& K = kern::active();
    auto arg = [&](std::size_t i) -> Node& { return nodes_[static_cast<std::size_t>(n.args[i])]; };
    auto arg_needs = [&](std::size_t i) { return arg(i).needs_grad; };
    auto arg_value = [&](std::size_t i) -> const Tensor& { return node_value(arg(i)); };

    switch (n.op) {
        case Op::Constant:
        case Op::Param:
            return;
        case Op::Add: {
            if (arg_needs(0)) accumulate(arg(0), g);
            if (arg_needs(1)) accumulate(arg(1), g);
            return;
        }
        case Op::Sub: {
            if (arg_needs(0)) accumulate(arg(0), g);
            if (arg_needs(1)) accumulate(arg(1), icls::scale(g, -1.0));
            return;
        }
        case Op::Mul: {
            if (arg_needs(0)) accumulate(arg(0), icls::mul(g, arg_value(1)));
            if (arg_needs(1)) accumulate(arg(1), icls::mul(g, arg_value(0)));
            return;
        }
        case Op::Scale: {
            if (arg_needs(0)) accumulate(arg(0), icls::scale(g, n.scalar));
            return;
        }
        case Op::AddBiasRows: {
            if (arg_needs(0)) accumulate(arg(0), g);
            if (arg_needs(1)) {
                const std::size_t width = arg_value(1).numel();
                Tensor db(arg_value(1).shape());
                const std::size_t rows = g.numel() / width;
                for (std::size_t r = 0; r < rows; ++r) {
                    K.axpy(db.data(), 1.0, g.data() + r * width, width);
                }
                accumulate(arg(1), db);
            }
            return;
        }
        case Op::MatMul: {
            const Tensor& a = arg_value(0);
            const Tensor& b = arg_value(1);
            const std::size_t nn = a.dim(0), kk = a.dim(1), mm = b.dim(1);
            if (arg_needs(0)) {
                Tensor da(a.shape());
                K.matmul_a_bt_acc(da.data(), g.data(), b.data(), nn, mm, kk);
                accumulate(arg(0), da);
            }
            if (arg_needs(1)) {
                Tensor db(b.shape());
                K.matmul_at_b_acc(db.data(), a.data(), g.data(), nn, kk, mm);
                accumulate(arg(1), db);
            }
            return;
        }
        case Op::Relu: {
            if (!arg_needs(0)) return;
            const Tensor& x = arg_value(0);
            Tensor dx(x.shape());
            for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = x[i] > 0.0 ? g[i] : 0.0;
            accumulate(arg(0), dx);
            return;
        }
        case Op::Gelu: {
            if (!arg_needs(0)) return;
            const Tensor& x = arg_value(0);
            Tensor dx(x.shape());
            for (std::size_t i = 0; i < x.numel(); ++i) dx[i] = g[i] * gelu_grad(x[i]);
            accumulate(arg(0), dx);
            return;
        }
        case Op::Dropout: {
            if (!arg_needs(0)) return;
            if (n.scalar == 0.0) {
                accumulate(arg(0), g);
            } else {
                accumulate(arg(0), icls::mul(g, n.saved[0]));
            }
            return;
        }
        case Op::SoftmaxLastDim: {
            if (!arg_needs(0)) return;
            const Tensor& y = n.value;
            const std::size_t width = y.dim(y.rank() - 1);
            const std::size_t rows = y.numel() / width;
            Tensor dx(y.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * width;
                const double* gr = g.data() + r * width;
                double* dr = dx.data() + r * width;
                const double inner = K.dot(yr, gr, width);
                for (std::size_t j = 0; j < width; ++j) dr[j] = yr[j] * (gr[j] - inner);
            }
            accumulate(arg(0), dx);
            return;
        }
        case Op::LayerNorm: {
            const Tensor& xhat = n.saved[0];
            const Tensor& rstd = n.saved[1];
            const Tensor& gv = arg_value(1);
            const std::size_t width = gv.numel();
            const std::size_t rows = xhat.numel() / width;
            if (arg_needs(0)) {
                Tensor dx(xhat.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * width;
                    const double* xh = xhat.data() + r * width;
                    double* dr = dx.data() + r * width;
                    double mean_dyh = 0.0, mean_dyh_xh = 0.0;
                    for (std::size_t j = 0; j < width; ++j) {
                        const double dyh = gr[j] * gv[j];
                        mean_dyh += dyh;
                        mean_dyh_xh += dyh * xh[j];
                    }
                    mean_dyh /= static_cast<double>(width);
                    mean_dyh_xh /= static_cast<double>(width);
                    for (std::size_t j = 0; j < width; ++j) {
                        const double dyh = gr[j] * gv[j];
                        dr[j] = rstd[r] * (dyh - mean_dyh - xh[j] * mean_dyh_xh);
                    }
                }
                accumulate(arg(0), dx);
            }
            if (arg_needs(1)) {
                Tensor dg(gv.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * width;
                    const double* xh = xhat.data() + r * width;
                    for (std::size_t j = 0; j < width; ++j) dg[j] += gr[j] * xh[j];
                }
                accumulate(arg(1), dg);
            }
            if (arg_needs(2)) {
                Tensor db(arg_value(2).shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    K.axpy(db.data(), 1.0, g.data() + r * width, width);
                }
                accumulate(arg(2), db);
            }
            return;
        }
        case Op::Mha: {
            backward_mha(idx);
            return;
        }
        case Op::Reshape: {
            if (arg_needs(0)) accumulate(arg(0), g.reshaped(arg_value(0).shape()));
            return;
        }
        case Op::ConcatAxis0: {
            const std::size_t n0 = arg_value(0).numel();
            if (arg_needs(0)) {
                Tensor da(arg_value(0).shape());
                std::copy(g.data(), g.data() + n0, da.data());
                accumulate(arg(0), da);
            }
            if (arg_needs(1)) {
                Tensor db(arg_value(1).shape());
                std::copy(g.data() + n0, g.data() + g.numel(), db.data());
                accumulate(arg(1), db);
            }
            return;
        }
        case Op::SliceAxis0: {
            if (!arg_needs(0)) return;
            const Tensor& x = arg_value(0);
            const std::size_t stride = x.numel() / x.dim(0);
            Tensor dx(x.shape());
            std::copy(g.data(), g.data() + g.numel(), dx.data() + n.i1 * stride);
            accumulate(arg(0), dx);
            return;
        }
        case Op::Transpose01: {
            if (!arg_needs(0)) return;
            const Tensor& x = arg_value(0);
            const std::size_t A = x.dim(0), B = x.dim(1), C = x.dim(2);
            Tensor dx(x.shape());
            for (std::size_t j = 0; j < B; ++j) {
                for (std::size_t i = 0; i < A; ++i) {
                    const double* src = g.data() + (j * A + i) * C;
                    double* dst = dx.data() + (i * B + j) * C;
                    std::copy(src, src + C, dst);
                }
            }
            accumulate(arg(0), dx);
            return;
        }
        case Op::Sum: {
            if (arg_needs(0)) accumulate(arg(0), Tensor::full(arg_value(0).shape(), g[0]));
            return;
        }
        case Op::Mean: {
            if (arg_needs(0)) {
                const double s = g[0] / static_cast<double>(arg_value(0).numel());
                accumulate(arg(0), Tensor::full(arg_value(0).shape(), s));
            }
            return;
        }
        case Op::MeanSqDiff: {
            const Tensor& a = arg_value(0);
            const Tensor& b = arg_value(1);
            const double f = 2.0 * g[0] / static_cast<double>(a.numel());
            if (arg_needs(0)) accumulate(arg(0), icls::scale(icls::sub(a, b), f));
            if (arg_needs(1)) accumulate(arg(1), icls::scale(icls::sub(b, a), f));
            return;
        }
        case Op::CrossEntropyLogits: {
            if (!arg_needs(0)) return;
            const Tensor& probs = n.saved[0];
            const std::size_t R = probs.dim(0);
            Tensor dl = icls::scale(probs, g[0] / static_cast<double>(R));
            for (std::size_t r = 0; r < R; ++r) {
                dl.at(r, static_cast<std::size_t>(n.labels[r])) -=
                    g[0] / static_cast<double>(R);
            }
            accumulate(arg(0), dl);
            return;
        }
    }
}

void Graph::backward_mha(int idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    const auto& K = kern::active();
    auto arg = [&](std::size_t i) -> Node& { return nodes_[static_cast<std::size_t>(n.args[i])]; };
    auto arg_needs = [&](std::size_t i) { return arg(i).needs_grad; };
    auto arg_value = [&](std::size_t i) -> const Tensor& { return node_value(arg(i)); };

    const Tensor& x = arg_value(0);
    const Tensor& wqv = arg_value(1);
    const Tensor& wkv = arg_value(3);
    const Tensor& wvv = arg_value(5);
    const Tensor& wov = arg_value(7);
    const Tensor& q_all = n.saved[0];
    const Tensor& k_all = n.saved[1];
    const Tensor& v_all = n.saved[2];
    const Tensor& p_all = n.saved[3];
    const Tensor& o_all = n.saved[4];
    const Tensor& g = n.grad;

    const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2);
    const std::size_t heads = n.i0, kv_begin = n.i1, kv_end = n.i2;
    const std::size_t Tk = kv_end - kv_begin;
    const std::size_t hd = D / heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor dx({B, T, D});
    Tensor dwq({D, D}), dwk({D, D}), dwv({D, D}), dwo({D, D});
    Tensor dbq({D}), dbk({D}), dbv({D}), dbo({D});

    std::vector<double> d_out(T * D), dq(T * D), dk(Tk * D), dv(Tk * D);
    std::vector<double> qh(T * hd), kh(Tk * hd), vh(Tk * hd);
    std::vector<double> doh(T * hd), dp(T * Tk), ds(T * Tk), dqh(T * hd), dkh(Tk * hd),
        dvh(Tk * hd);

    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x.data() + b * T * D;
        const double* xkv = xb + kv_begin * D;
        const double* gb = g.data() + b * T * D;
        const double* ob = o_all.data() + b * T * D;
        const double* qb = q_all.data() + b * T * D;
        const double* kb = k_all.data() + b * Tk * D;
        const double* vb = v_all.data() + b * Tk * D;

        // Output projection.
        K.matmul_at_b_acc(dwo.data(), ob, gb, T, D, D);
        for (std::size_t t = 0; t < T; ++t) K.axpy(dbo.data(), 1.0, gb + t * D, D);
        std::fill(d_out.begin(), d_out.end(), 0.0);
        K.matmul_a_bt_acc(d_out.data(), gb, wov.data(), T, D, D);

        std::fill(dq.begin(), dq.end(), 0.0);
        std::fill(dk.begin(), dk.end(), 0.0);
        std::fill(dv.begin(), dv.end(), 0.0);

        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * hd;
            const double* p = p_all.data() + ((b * heads + h) * T) * Tk;
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t j = 0; j < hd; ++j) {
                    qh[t * hd + j] = qb[t * D + off + j];
                    doh[t * hd + j] = d_out[t * D + off + j];
                }
            }
            for (std::size_t t = 0; t < Tk; ++t) {
                for (std::size_t j = 0; j < hd; ++j) {
                    kh[t * hd + j] = kb[t * D + off + j];
                    vh[t * hd + j] = vb[t * D + off + j];
                }
            }
            // dP = dOh . Vh^T ; dVh = P^T . dOh
            std::fill(dp.begin(), dp.end(), 0.0);
            K.matmul_a_bt_acc(dp.data(), doh.data(), vh.data(), T, hd, Tk);
            std::fill(dvh.begin(), dvh.end(), 0.0);
            K.matmul_at_b_acc(dvh.data(), p, doh.data(), T, Tk, hd);
            // Softmax backward, then undo the attention scale.
            for (std::size_t t = 0; t < T; ++t) {
                const double* pr = p + t * Tk;
                const double* dpr = dp.data() + t * Tk;
                double* dsr = ds.data() + t * Tk;
                const double inner = K.dot(pr, dpr, Tk);
                for (std::size_t j = 0; j < Tk; ++j) {
                    dsr[j] = att_scale * pr[j] * (dpr[j] - inner);
                }
            }
            // dQh = dS . Kh ; dKh = dS^T . Qh
            std::fill(dqh.begin(), dqh.end(), 0.0);
            K.matmul_acc(dqh.data(), ds.data(), kh.data(), T, Tk, hd);
            std::fill(dkh.begin(), dkh.end(), 0.0);
            K.matmul_at_b_acc(dkh.data(), ds.data(), qh.data(), T, Tk, hd);

            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t j = 0; j < hd; ++j) dq[t * D + off + j] = dqh[t * hd + j];
            }
            for (std::size_t t = 0; t < Tk; ++t) {
                for (std::size_t j = 0; j < hd; ++j) {
                    dk[t * D + off + j] = dkh[t * hd + j];
                    dv[t * D + off + j] = dvh[t * hd + j];
                }
            }
        }

        // Projection weights and input gradient.
        K.matmul_at_b_acc(dwq.data(), xb, dq.data(), T, D, D);
        K.matmul_at_b_acc(dwk.data(), xkv, dk.data(), Tk, D, D);
        K.matmul_at_b_acc(dwv.data(), xkv, dv.data(), Tk, D, D);
        for (std::size_t t = 0; t < T; ++t) K.axpy(dbq.data(), 1.0, dq.data() + t * D, D);
        for (std::size_t t = 0; t < Tk; ++t) {
            K.axpy(dbk.data(), 1.0, dk.data() + t * D, D);
            K.axpy(dbv.data(), 1.0, dv.data() + t * D, D);
        }
        double* dxb = dx.data() + b * T * D;
        K.matmul_a_bt_acc(dxb, dq.data(), wqv.data(), T, D, D);
        double* dxkv = dxb + kv_begin * D;
        K.matmul_a_bt_acc(dxkv, dk.data(), wkv.data(), Tk, D, D);
        K.matmul_a_bt_acc(dxkv, dv.data(), wvv.data(), Tk, D, D);
    }

    if (arg_needs(0)) accumulate(arg(0), dx);
    if (arg_needs(1)) accumulate(arg(1), dwq);
    if (arg_needs(2)) accumulate(arg(2), dbq);
    if (arg_needs(3)) accumulate(arg(3), dwk);
    if (arg_needs(4)) accumulate(arg(4), dbk);
    if (arg_needs(5)) accumulate(arg(5), dwv);
    if (arg_needs(6)) accumulate(arg(6), dbv);
    if (arg_needs(7)) accumulate(arg(7), dwo);
    if (arg_needs(8)) accumulate(arg(8), dbo);
}

}  // namespace icls

#include "adapterlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace adapterlab::core {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

std::string two_shapes(const Tensor& a, const Tensor& b) {
    return a.shape_str() + " and " + b.shape_str();
}

std::int64_t last_dim(const Tensor& t) {
    return t.shape().back();
}

} // namespace

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            const double* brow = b + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double dot = 0.0;
            for (int kk = 0; kk < k; ++kk) dot += arow[kk] * brow[kk];
            crow[j] = accumulate ? crow[j] + dot : dot;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    if (!accumulate) std::fill(c, c + static_cast<std::size_t>(k) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        const double* brow = b + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            double* crow = c + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void Tape::check(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::runtime_error("variable does not belong to this tape");
}

Var Tape::push(Node node, Tensor value, const char* op_name) {
    require_finite(value, op_name);
    nodes_.push_back(std::move(node));
    vals_.push_back(std::move(value));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Tape::val(Var v) const {
    check(v);
    return vals_[static_cast<std::size_t>(v.id)];
}

Var Tape::leaf(Parameter& p) {
    Node n;
    n.op = Op::leaf;
    n.param = &p;
    return push(std::move(n), p.value, "leaf");
}

Var Tape::constant(Tensor t) {
    Node n;
    n.op = Op::constant;
    return push(std::move(n), std::move(t), "constant");
}

Var Tape::add(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb))
        throw std::runtime_error("add requires equal shapes, got " + two_shapes(ta, tb));
    Tensor out = ta;
    const double* pb = tb.data();
    double* po = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) po[i] += pb[i];
    Node n;
    n.op = Op::add;
    n.in = {a.id, b.id, -1};
    return push(std::move(n), std::move(out), "add");
}

Var Tape::scale(Var a, double s) {
    check(a);
    Tensor out = val(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= s;
    Node n;
    n.op = Op::scale;
    n.in = {a.id, -1, -1};
    n.x0 = s;
    return push(std::move(n), std::move(out), "scale");
}

Var Tape::matmul(Var a, Var b) {
    check(a);
    check(b);
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        throw std::runtime_error("matmul requires {m,k} x {k,n}, got " + two_shapes(ta, tb));
    int m = ta.dim(0), k = ta.dim(1), nn = tb.dim(1);
    Tensor out({m, nn});
    gemm_nn(ta.data(), tb.data(), out.data(), m, k, nn, false);
    Node n;
    n.op = Op::matmul;
    n.in = {a.id, b.id, -1};
    return push(std::move(n), std::move(out), "matmul");
}

Var Tape::bmm(Var a, Var b, bool transpose_b) {
    check(a);
    check(b);
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 3 || tb.rank() != 3 || ta.dim(0) != tb.dim(0))
        throw std::runtime_error("bmm requires matching 3-D batches, got " + two_shapes(ta, tb));
    int batch = ta.dim(0), m = ta.dim(1), k = ta.dim(2);
    int inner = transpose_b ? tb.dim(2) : tb.dim(1);
    int nn = transpose_b ? tb.dim(1) : tb.dim(2);
    if (inner != k)
        throw std::runtime_error("bmm inner dimensions disagree for " + two_shapes(ta, tb));
    Tensor out({batch, m, nn});
    std::int64_t sa = static_cast<std::int64_t>(m) * k;
    std::int64_t sb = static_cast<std::int64_t>(tb.dim(1)) * tb.dim(2);
    std::int64_t so = static_cast<std::int64_t>(m) * nn;
    for (int bi = 0; bi < batch; ++bi) {
        const double* pa = ta.data() + bi * sa;
        const double* pb = tb.data() + bi * sb;
        double* po = out.data() + bi * so;
        if (transpose_b)
            gemm_nt(pa, pb, po, m, k, nn, false);
        else
            gemm_nn(pa, pb, po, m, k, nn, false);
    }
    Node n;
    n.op = Op::bmm;
    n.in = {a.id, b.id, -1};
    n.flag = transpose_b;
    return push(std::move(n), std::move(out), "bmm");
}

Var Tape::linear(Var x, Var w, Var b) {
    check(x);
    check(w);
    check(b);
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    const Tensor& tb = val(b);
    if (tx.rank() < 1 || tw.rank() != 2 || tb.rank() != 1)
        throw std::runtime_error("linear expects input, {in,out} weight, {out} bias, got " +
                                 tx.shape_str() + ", " + tw.shape_str() + ", " + tb.shape_str());
    int in = tw.dim(0), out_dim = tw.dim(1);
    if (static_cast<int>(last_dim(tx)) != in || tb.dim(0) != out_dim)
        throw std::runtime_error("linear shape mismatch: input " + tx.shape_str() + ", weight " +
                                 tw.shape_str() + ", bias " + tb.shape_str());
    int rows = static_cast<int>(tx.size() / in);
    std::vector<int> out_shape(tx.shape());
    out_shape.back() = out_dim;
    Tensor out(out_shape);
    gemm_nn(tx.data(), tw.data(), out.data(), rows, in, out_dim, false);
    for (int r = 0; r < rows; ++r) {
        double* row = out.data() + static_cast<std::int64_t>(r) * out_dim;
        for (int j = 0; j < out_dim; ++j) row[j] += tb[j];
    }
    Node n;
    n.op = Op::linear;
    n.in = {x.id, w.id, b.id};
    return push(std::move(n), std::move(out), "linear");
}

Var Tape::tanh(Var a) {
    check(a);
    Tensor out = val(a);
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Node n;
    n.op = Op::tanh_op;
    n.in = {a.id, -1, -1};
    return push(std::move(n), std::move(out), "tanh");
}

Var Tape::gelu(Var a) {
    check(a);
    Tensor out = val(a);
    for (std::int64_t i = 0; i < out.size(); ++i) {
        double x = out[i];
        out[i] = x * 0.5 * (1.0 + std::erf(x / kSqrt2));
    }
    Node n;
    n.op = Op::gelu_op;
    n.in = {a.id, -1, -1};
    return push(std::move(n), std::move(out), "gelu");
}

Var Tape::softmax_rows(Var a) {
    check(a);
    const Tensor& ta = val(a);
    if (ta.rank() < 1) throw std::runtime_error("softmax_rows needs rank >= 1");
    std::int64_t cols = last_dim(ta);
    std::int64_t rows = ta.size() / cols;
    Tensor out(ta.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* src = ta.data() + r * cols;
        double* dst = out.data() + r * cols;
        double mx = src[0];
        for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        for (std::int64_t j = 0; j < cols; ++j) dst[j] /= sum;
    }
    Node n;
    n.op = Op::softmax_rows;
    n.in = {a.id, -1, -1};
    return push(std::move(n), std::move(out), "softmax_rows");
}

Var Tape::layer_norm(Var x, Var gain, Var bias, double eps) {
    check(x);
    check(gain);
    check(bias);
    const Tensor& tx = val(x);
    const Tensor& tg = val(gain);
    const Tensor& tb = val(bias);
    if (tx.rank() < 1) throw std::runtime_error("layer_norm needs rank >= 1");
    std::int64_t cols = last_dim(tx);
    if (tg.rank() != 1 || tb.rank() != 1 || tg.dim(0) != cols || tb.dim(0) != cols)
        throw std::runtime_error("layer_norm gain/bias must be 1-D of length " +
                                 std::to_string(cols) + ", got " + two_shapes(tg, tb));
    std::int64_t rows = tx.size() / cols;
    Tensor xhat(tx.shape());
    Tensor inv({static_cast<int>(rows)});
    Tensor out(tx.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* src = tx.data() + r * cols;
        double mean = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) mean += src[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            double d = src[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        double iv = 1.0 / std::sqrt(var + eps);
        inv[r] = iv;
        double* xh = xhat.data() + r * cols;
        double* dst = out.data() + r * cols;
        for (std::int64_t j = 0; j < cols; ++j) {
            xh[j] = (src[j] - mean) * iv;
            dst[j] = tg[j] * xh[j] + tb[j];
        }
    }
    require_finite(inv, "layer_norm");
    Node n;
    n.op = Op::layer_norm;
    n.in = {x.id, gain.id, bias.id};
    n.saved_a = std::move(xhat);
    n.saved_b = std::move(inv);
    n.x0 = eps;
    return push(std::move(n), std::move(out), "layer_norm");
}

Var Tape::embedding_rows(Var table, const std::vector<int>& ids) {
    check(table);
    const Tensor& tt = val(table);
    if (tt.rank() != 2) throw std::runtime_error("embedding_rows expects a 2-D table");
    int vocab = tt.dim(0), dim = tt.dim(1);
    if (ids.empty()) throw std::runtime_error("embedding_rows got an empty id list");
    Tensor out({static_cast<int>(ids.size()), dim});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        int id = ids[i];
        if (id < 0 || id >= vocab)
            throw std::runtime_error("token id " + std::to_string(id) + " at position " +
                                     std::to_string(i) + " is out of range for vocabulary of " +
                                     std::to_string(vocab));
        std::memcpy(out.data() + static_cast<std::int64_t>(i) * dim,
                    tt.data() + static_cast<std::int64_t>(id) * dim, sizeof(double) * dim);
    }
    Node n;
    n.op = Op::embedding_rows;
    n.in = {table.id, -1, -1};
    n.ints = ids;
    return push(std::move(n), std::move(out), "embedding_rows");
}

Var Tape::dropout(Var a, double rate, Rng& rng) {
    check(a);
    if (rate < 0.0 || rate >= 1.0)
        throw std::runtime_error("dropout rate must lie in [0,1), got " + std::to_string(rate));
    if (rate == 0.0) return a;
    const Tensor& ta = val(a);
    double keep_scale = 1.0 / (1.0 - rate);
    Tensor out(ta.shape());
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(ta.size()));
    for (std::int64_t i = 0; i < ta.size(); ++i) {
        bool kept = rng.uniform() >= rate;
        mask[static_cast<std::size_t>(i)] = kept ? 1 : 0;
        out[i] = kept ? ta[i] * keep_scale : 0.0;
    }
    Node n;
    n.op = Op::dropout;
    n.in = {a.id, -1, -1};
    n.mask8 = std::move(mask);
    n.x0 = rate;
    return push(std::move(n), std::move(out), "dropout");
}

namespace {

Tensor permute_tensor(const Tensor& t, const std::vector<int>& perm) {
    int r = t.rank();
    std::vector<std::int64_t> in_stride(static_cast<std::size_t>(r), 1);
    for (int i = r - 2; i >= 0; --i)
        in_stride[static_cast<std::size_t>(i)] =
            in_stride[static_cast<std::size_t>(i + 1)] * t.dim(i + 1);
    std::vector<int> out_shape(static_cast<std::size_t>(r));
    std::vector<std::int64_t> eff(static_cast<std::size_t>(r));
    for (int j = 0; j < r; ++j) {
        out_shape[static_cast<std::size_t>(j)] = t.dim(perm[static_cast<std::size_t>(j)]);
        eff[static_cast<std::size_t>(j)] = in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])];
    }
    Tensor out(out_shape);
    std::vector<int> coord(static_cast<std::size_t>(r), 0);
    std::int64_t in_flat = 0;
    for (std::int64_t o = 0; o < out.size(); ++o) {
        out[o] = t[in_flat];
        for (int j = r - 1; j >= 0; --j) {
            auto ju = static_cast<std::size_t>(j);
            if (++coord[ju] < out_shape[ju]) {
                in_flat += eff[ju];
                break;
            }
            in_flat -= eff[ju] * (out_shape[ju] - 1);
            coord[ju] = 0;
        }
    }
    return out;
}

} // namespace

Var Tape::permute(Var a, const std::vector<int>& perm) {
    check(a);
    const Tensor& ta = val(a);
    int r = ta.rank();
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(r), 0);
    if (static_cast<int>(perm.size()) != r)
        throw std::runtime_error("permute axes length must equal tensor rank");
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
            throw std::runtime_error("permute axes must be a permutation of 0.." + std::to_string(r - 1));
        seen[static_cast<std::size_t>(p)] = 1;
    }
    Node n;
    n.op = Op::permute;
    n.in = {a.id, -1, -1};
    n.ints = perm;
    return push(std::move(n), permute_tensor(ta, perm), "permute");
}

Var Tape::reshape(Var a, std::vector<int> shape) {
    check(a);
    const Tensor& ta = val(a);
    if (Tensor::shape_product(shape) != ta.size())
        throw std::runtime_error("reshape to " + Tensor(shape).shape_str() + " changes element count of " +
                                 ta.shape_str());
    Tensor out(std::move(shape), ta.vec());
    Node n;
    n.op = Op::reshape;
    n.in = {a.id, -1, -1};
    return push(std::move(n), std::move(out), "reshape");
}

Var Tape::select_rows(Var a, const std::vector<int>& rows) {
    check(a);
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw std::runtime_error("select_rows expects a 2-D input");
    if (rows.empty()) throw std::runtime_error("select_rows got an empty index list");
    int nrows = ta.dim(0), dim = ta.dim(1);
    Tensor out({static_cast<int>(rows.size()), dim});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        int ri = rows[i];
        if (ri < 0 || ri >= nrows)
            throw std::runtime_error("row index " + std::to_string(ri) + " at position " +
                                     std::to_string(i) + " is out of range for " + ta.shape_str());
        std::memcpy(out.data() + static_cast<std::int64_t>(i) * dim,
                    ta.data() + static_cast<std::int64_t>(ri) * dim, sizeof(double) * dim);
    }
    Node n;
    n.op = Op::select_rows;
    n.in = {a.id, -1, -1};
    n.ints = rows;
    return push(std::move(n), std::move(out), "select_rows");
}

Var Tape::cross_entropy_mean(Var logits, const std::vector<int>& labels) {
    check(logits);
    const Tensor& tl = val(logits);
    if (tl.rank() != 2) throw std::runtime_error("cross_entropy_mean expects 2-D logits");
    int n = tl.dim(0), classes = tl.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw std::runtime_error("cross_entropy_mean got " + std::to_string(labels.size()) +
                                 " labels for " + std::to_string(n) + " rows");
    Tensor probs({n, classes});
    double loss = 0.0;
    for (int r = 0; r < n; ++r) {
        int label = labels[static_cast<std::size_t>(r)];
        if (label < 0 || label >= classes)
            throw std::runtime_error("label " + std::to_string(label) + " at position " +
                                     std::to_string(r) + " is out of range for " +
                                     std::to_string(classes) + " classes");
        const double* row = tl.data() + static_cast<std::int64_t>(r) * classes;
        double* prow = probs.data() + static_cast<std::int64_t>(r) * classes;
        double mx = row[0];
        for (int j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < classes; ++j) {
            prow[j] = std::exp(row[j] - mx);
            sum += prow[j];
        }
        for (int j = 0; j < classes; ++j) prow[j] /= sum;
        loss += std::log(sum) + mx - row[label];
    }
    loss /= static_cast<double>(n);
    Node node;
    node.op = Op::cross_entropy_mean;
    node.in = {logits.id, -1, -1};
    node.ints = labels;
    node.saved_a = std::move(probs);
    return push(std::move(node), Tensor::scalar(loss), "cross_entropy_mean");
}

Var Tape::sum_all(Var a) {
    check(a);
    const Tensor& ta = val(a);
    double s = 0.0;
    for (std::int64_t i = 0; i < ta.size(); ++i) s += ta[i];
    Node n;
    n.op = Op::sum_all;
    n.in = {a.id, -1, -1};
    return push(std::move(n), Tensor::scalar(s), "sum_all");
}

Var Tape::mixout_rows(Parameter& w, const MixoutMask& mask) {
    if (w.value.rank() != 2)
        throw std::runtime_error("mixout applies to 2-D weights, got " + w.value.shape_str() +
                                 " for " + w.name);
    if (mask.p < 0.0 || mask.p >= 1.0)
        throw std::runtime_error("mixout probability must lie in [0,1), got " + std::to_string(mask.p));
    if (mask.p == 0.0) return leaf(w);
    int in = w.value.dim(0), out_dim = w.value.dim(1);
    if (static_cast<int>(mask.kept.size()) != in)
        throw std::runtime_error("mixout mask covers " + std::to_string(mask.kept.size()) +
                                 " rows but " + w.name + " has " + std::to_string(in));
    Tensor out({in, out_dim});
    double inv_keep = 1.0 / (1.0 - mask.p);
    for (int r = 0; r < in; ++r) {
        const double* wr = w.value.data() + static_cast<std::int64_t>(r) * out_dim;
        const double* w0 = w.initial.data() + static_cast<std::int64_t>(r) * out_dim;
        double* o = out.data() + static_cast<std::int64_t>(r) * out_dim;
        if (mask.kept[static_cast<std::size_t>(r)]) {
            if (mask.compensate)
                for (int j = 0; j < out_dim; ++j) o[j] = w0[j] + (wr[j] - w0[j]) * inv_keep;
            else
                for (int j = 0; j < out_dim; ++j) o[j] = wr[j];
        } else {
            for (int j = 0; j < out_dim; ++j) o[j] = w0[j];
        }
    }
    Node n;
    n.op = Op::mixout_rows;
    n.param = &w;
    n.mask8 = mask.kept;
    n.x0 = mask.p;
    n.flag = mask.compensate;
    return push(std::move(n), std::move(out), "mixout");
}

Tensor& Tape::grad_buf(int id) {
    auto idx = static_cast<std::size_t>(id);
    if (!grad_set_[idx]) {
        grads_[idx] = Tensor::zeros(vals_[idx].shape());
        grad_set_[idx] = 1;
    }
    return grads_[idx];
}

void Tape::backward(Var loss) {
    check(loss);
    if (backward_done_) throw std::runtime_error("backward was already run on this tape");
    backward_done_ = true;
    if (val(loss).size() != 1)
        throw std::runtime_error("backward requires a scalar, got " + val(loss).shape_str());
    grads_.assign(nodes_.size(), Tensor());
    grad_set_.assign(nodes_.size(), 0);
    grad_buf(loss.id)[0] = 1.0;

    for (int i = loss.id; i >= 0; --i) {
        auto iu = static_cast<std::size_t>(i);
        if (!grad_set_[iu]) continue;
        const Node& node = nodes_[iu];
        const Tensor& g = grads_[iu];
        switch (node.op) {
        case Op::constant:
            break;
        case Op::leaf: {
            Tensor& pg = node.param->grad;
            for (std::int64_t j = 0; j < g.size(); ++j) pg[j] += g[j];
            break;
        }
        case Op::add: {
            Tensor& da = grad_buf(node.in[0]);
            Tensor& db = grad_buf(node.in[1]);
            for (std::int64_t j = 0; j < g.size(); ++j) {
                da[j] += g[j];
                db[j] += g[j];
            }
            break;
        }
        case Op::scale: {
            Tensor& da = grad_buf(node.in[0]);
            for (std::int64_t j = 0; j < g.size(); ++j) da[j] += node.x0 * g[j];
            break;
        }
        case Op::matmul: {
            const Tensor& a = vals_[static_cast<std::size_t>(node.in[0])];
            const Tensor& b = vals_[static_cast<std::size_t>(node.in[1])];
            int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
            gemm_nt(g.data(), b.data(), grad_buf(node.in[0]).data(), m, nn, k, true);
            gemm_tn(a.data(), g.data(), grad_buf(node.in[1]).data(), m, k, nn, true);
            break;
        }
        case Op::bmm: {
            const Tensor& a = vals_[static_cast<std::size_t>(node.in[0])];
            const Tensor& b = vals_[static_cast<std::size_t>(node.in[1])];
            Tensor& da = grad_buf(node.in[0]);
            Tensor& db = grad_buf(node.in[1]);
            int batch = a.dim(0), m = a.dim(1), k = a.dim(2);
            int nn = node.flag ? b.dim(1) : b.dim(2);
            std::int64_t sa = static_cast<std::int64_t>(m) * k;
            std::int64_t sb = static_cast<std::int64_t>(b.dim(1)) * b.dim(2);
            std::int64_t sg = static_cast<std::int64_t>(m) * nn;
            for (int bi = 0; bi < batch; ++bi) {
                const double* pa = a.data() + bi * sa;
                const double* pb = b.data() + bi * sb;
                const double* pg = g.data() + bi * sg;
                if (node.flag) {
                    gemm_nn(pg, pb, da.data() + bi * sa, m, nn, k, true);
                    gemm_tn(pg, pa, db.data() + bi * sb, m, nn, k, true);
                } else {
                    gemm_nt(pg, pb, da.data() + bi * sa, m, nn, k, true);
                    gemm_tn(pa, pg, db.data() + bi * sb, m, k, nn, true);
                }
            }
            break;
        }
        case Op::linear: {
            const Tensor& x = vals_[static_cast<std::size_t>(node.in[0])];
            const Tensor& w = vals_[static_cast<std::size_t>(node.in[1])];
            int in = w.dim(0), out_dim = w.dim(1);
            int rows = static_cast<int>(x.size() / in);
            gemm_nt(g.data(), w.data(), grad_buf(node.in[0]).data(), rows, out_dim, in, true);
            gemm_tn(x.data(), g.data(), grad_buf(node.in[1]).data(), rows, in, out_dim, true);
            Tensor& db = grad_buf(node.in[2]);
            for (int r = 0; r < rows; ++r) {
                const double* row = g.data() + static_cast<std::int64_t>(r) * out_dim;
                for (int j = 0; j < out_dim; ++j) db[j] += row[j];
            }
            break;
        }
        case Op::tanh_op: {
            const Tensor& y = vals_[iu];
            Tensor& da = grad_buf(node.in[0]);
            for (std::int64_t j = 0; j < g.size(); ++j) da[j] += g[j] * (1.0 - y[j] * y[j]);
            break;
        }
        case Op::gelu_op: {
            const Tensor& x = vals_[static_cast<std::size_t>(node.in[0])];
            Tensor& da = grad_buf(node.in[0]);
            for (std::int64_t j = 0; j < g.size(); ++j) {
                double v = x[j];
                double cdf = 0.5 * (1.0 + std::erf(v / kSqrt2));
                double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                da[j] += g[j] * (cdf + v * pdf);
            }
            break;
        }
        case Op::softmax_rows: {
            const Tensor& y = vals_[iu];
            Tensor& da = grad_buf(node.in[0]);
            std::int64_t cols = last_dim(y);
            std::int64_t rows = y.size() / cols;
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * cols;
                const double* gr = g.data() + r * cols;
                double* dr = da.data() + r * cols;
                double dot = 0.0;
                for (std::int64_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                for (std::int64_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
            }
            break;
        }
        case Op::layer_norm: {
            const Tensor& xhat = node.saved_a;
            const Tensor& inv = node.saved_b;
            const Tensor& gain = vals_[static_cast<std::size_t>(node.in[1])];
            Tensor& dx = grad_buf(node.in[0]);
            Tensor& dgain = grad_buf(node.in[1]);
            Tensor& dbias = grad_buf(node.in[2]);
            std::int64_t cols = last_dim(xhat);
            std::int64_t rows = xhat.size() / cols;
            std::vector<double> dxh(static_cast<std::size_t>(cols));
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* xh = xhat.data() + r * cols;
                const double* gr = g.data() + r * cols;
                double* dxr = dx.data() + r * cols;
                double m1 = 0.0, m2 = 0.0;
                for (std::int64_t j = 0; j < cols; ++j) {
                    dxh[static_cast<std::size_t>(j)] = gr[j] * gain[j];
                    m1 += dxh[static_cast<std::size_t>(j)];
                    m2 += dxh[static_cast<std::size_t>(j)] * xh[j];
                    dgain[j] += gr[j] * xh[j];
                    dbias[j] += gr[j];
                }
                m1 /= static_cast<double>(cols);
                m2 /= static_cast<double>(cols);
                double iv = inv[r];
                for (std::int64_t j = 0; j < cols; ++j)
                    dxr[j] += iv * (dxh[static_cast<std::size_t>(j)] - m1 - xh[j] * m2);
            }
            break;
        }
        case Op::embedding_rows: {
            Tensor& dt = grad_buf(node.in[0]);
            std::int64_t dim = dt.dim(1);
            for (std::size_t r = 0; r < node.ints.size(); ++r) {
                const double* src = g.data() + static_cast<std::int64_t>(r) * dim;
                double* dst = dt.data() + static_cast<std::int64_t>(node.ints[r]) * dim;
                for (std::int64_t j = 0; j < dim; ++j) dst[j] += src[j];
            }
            break;
        }
        case Op::dropout: {
            Tensor& da = grad_buf(node.in[0]);
            double keep_scale = 1.0 / (1.0 - node.x0);
            for (std::int64_t j = 0; j < g.size(); ++j)
                if (node.mask8[static_cast<std::size_t>(j)]) da[j] += g[j] * keep_scale;
            break;
        }
        case Op::permute: {
            std::vector<int> inv_perm(node.ints.size());
            for (std::size_t j = 0; j < node.ints.size(); ++j)
                inv_perm[static_cast<std::size_t>(node.ints[j])] = static_cast<int>(j);
            Tensor back = permute_tensor(g, inv_perm);
            Tensor& da = grad_buf(node.in[0]);
            for (std::int64_t j = 0; j < back.size(); ++j) da[j] += back[j];
            break;
        }
        case Op::reshape: {
            Tensor& da = grad_buf(node.in[0]);
            for (std::int64_t j = 0; j < g.size(); ++j) da[j] += g[j];
            break;
        }
        case Op::select_rows: {
            Tensor& da = grad_buf(node.in[0]);
            std::int64_t dim = da.dim(1);
            for (std::size_t r = 0; r < node.ints.size(); ++r) {
                const double* src = g.data() + static_cast<std::int64_t>(r) * dim;
                double* dst = da.data() + static_cast<std::int64_t>(node.ints[r]) * dim;
                for (std::int64_t j = 0; j < dim; ++j) dst[j] += src[j];
            }
            break;
        }
        case Op::cross_entropy_mean: {
            const Tensor& probs = node.saved_a;
            Tensor& dl = grad_buf(node.in[0]);
            int n = probs.dim(0), classes = probs.dim(1);
            double gs = g[0] / static_cast<double>(n);
            for (int r = 0; r < n; ++r) {
                const double* prow = probs.data() + static_cast<std::int64_t>(r) * classes;
                double* drow = dl.data() + static_cast<std::int64_t>(r) * classes;
                for (int j = 0; j < classes; ++j) drow[j] += gs * prow[j];
                drow[node.ints[static_cast<std::size_t>(r)]] -= gs;
            }
            break;
        }
        case Op::sum_all: {
            Tensor& da = grad_buf(node.in[0]);
            for (std::int64_t j = 0; j < da.size(); ++j) da[j] += g[0];
            break;
        }
        case Op::mixout_rows: {
            Tensor& pg = node.param->grad;
            int out_dim = node.param->value.dim(1);
            double factor = node.flag ? 1.0 / (1.0 - node.x0) : 1.0;
            for (std::size_t r = 0; r < node.mask8.size(); ++r) {
                if (!node.mask8[r]) continue;
                const double* src = g.data() + static_cast<std::int64_t>(r) * out_dim;
                double* dst = pg.data() + static_cast<std::int64_t>(r) * out_dim;
                for (int j = 0; j < out_dim; ++j) dst[j] += factor * src[j];
            }
            break;
        }
        }
    }
}

void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->grad.fill(0.0);
}

double gradient_check(const std::function<Var(Tape&)>& build,
                      std::span<Parameter* const> params, double h) {
    if (h <= 0.0) throw std::runtime_error("gradient_check step must be positive");
    auto eval = [&]() {
        Tape t;
        Var v = build(t);
        const Tensor& out = t.val(v);
        if (out.size() != 1)
            throw std::runtime_error("gradient_check requires a scalar function, got " + out.shape_str());
        return out[0];
    };
    double base = eval();
    if (eval() != base)
        throw std::runtime_error("gradient_check requires a deterministic function; repeated evaluations differ");

    zero_grads(params);
    {
        Tape t;
        Var v = build(t);
        t.backward(v);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            double orig = p->value[i];
            p->value[i] = orig + h;
            double lp = eval();
            p->value[i] = orig - h;
            double lm = eval();
            p->value[i] = orig;
            double gn = (lp - lm) / (2.0 * h);
            double ga = analytic[pi][i];
            double rel = std::abs(ga - gn) / std::max(1.0, std::abs(ga) + std::abs(gn));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

} // namespace adapterlab::core

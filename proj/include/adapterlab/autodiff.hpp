#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adapterlab/rng.hpp"
#include "adapterlab/tensor.hpp"

namespace adapterlab::core {

enum class ParamKind : std::uint8_t {
    embedding,
    linear_weight,
    bias,
    norm_gain,
    norm_bias,
};

/// A trainable (or frozen) value. `initial` is the snapshot taken when the
/// parameter was created; mixout and deviation reports measure against it.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor initial;
    bool frozen = false;
    ParamKind kind = ParamKind::linear_weight;

    Parameter(std::string name_, Tensor value_, ParamKind kind_)
        : name(std::move(name_)),
          value(std::move(value_)),
          grad(Tensor::zeros(value.shape())),
          initial(value),
          kind(kind_) {}
};

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
};

/// Row mask for a mixout-wrapped weight: one entry per input neuron (row).
struct MixoutMask {
    std::vector<std::uint8_t> kept;
    double p = 0.0;
    bool compensate = true;
};

/// Reverse-mode tape over Tensors. Build a graph with the factory methods,
/// then call backward(loss) once; leaf gradients accumulate into their
/// Parameter's grad field.
class Tape {
public:
    Var leaf(Parameter& p);
    Var constant(Tensor t);

    Var add(Var a, Var b);
    Var scale(Var a, double s);
    /// 2-D only: {m,k} x {k,n}.
    Var matmul(Var a, Var b);
    /// Batched 3-D matmul; with transpose_b, b is {B,n,k} instead of {B,k,n}.
    Var bmm(Var a, Var b, bool transpose_b = false);
    /// x {...,in} flattened to rows, w {in,out}, b {out}.
    Var linear(Var x, Var w, Var b);
    Var tanh(Var a);
    Var gelu(Var a);
    /// Softmax over the last axis.
    Var softmax_rows(Var a);
    /// Normalizes the last axis with population variance; gain/bias are 1-D.
    Var layer_norm(Var x, Var gain, Var bias, double eps);
    /// table {V,d}, ids -> {len(ids),d}. Rejects out-of-range ids.
    Var embedding_rows(Var table, const std::vector<int>& ids);
    /// Inverted-scaling dropout; rate 0 returns `a` unchanged. Training only.
    Var dropout(Var a, double rate, Rng& rng);
    Var permute(Var a, const std::vector<int>& perm);
    Var reshape(Var a, std::vector<int> shape);
    /// a {R,d}, gather rows -> {len(rows),d}.
    Var select_rows(Var a, const std::vector<int>& rows);
    /// logits {n,C}, labels in [0,C) -> scalar mean loss.
    Var cross_entropy_mean(Var logits, const std::vector<int>& labels);
    Var sum_all(Var a);
    /// Per-row stochastic replacement of w toward the parameter's initial
    /// value. p == 0 returns the plain leaf. Mask entries: 1 = kept.
    Var mixout_rows(Parameter& w, const MixoutMask& mask);

    const Tensor& val(Var v) const;
    void backward(Var loss);

    int num_nodes() const { return static_cast<int>(nodes_.size()); }

private:
    enum class Op : std::uint8_t {
        leaf, constant, add, scale, matmul, bmm, linear, tanh_op, gelu_op,
        softmax_rows, layer_norm, embedding_rows, dropout, permute, reshape,
        select_rows, cross_entropy_mean, sum_all, mixout_rows,
    };

    struct Node {
        Op op;
        std::array<int, 3> in{-1, -1, -1};
        Parameter* param = nullptr;
        Tensor saved_a;
        Tensor saved_b;
        std::vector<int> ints;
        std::vector<std::uint8_t> mask8;
        double x0 = 0.0;
        bool flag = false;
    };

    Var push(Node node, Tensor value, const char* op_name);
    Tensor& grad_buf(int id);
    void check(Var v) const;

    std::vector<Node> nodes_;
    std::vector<Tensor> vals_;
    std::vector<Tensor> grads_;
    std::vector<std::uint8_t> grad_set_;
    bool backward_done_ = false;
};

/// Cache-friendly dense kernels. Shapes: a {m,k}, b {k,n} (nn) / {n,k} (nt);
/// tn computes a^T b with a {m,k}, b {m,n} -> c {k,n}.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

void zero_grads(std::span<Parameter* const> params);

/// Compares analytic gradients of `build`'s scalar output against central
/// finite differences with step h. Returns the max relative error
/// |ga-gn| / max(1, |ga|+|gn|) over every element of every parameter.
/// `build` must be deterministic; it is evaluated repeatedly.
double gradient_check(const std::function<Var(Tape&)>& build,
                      std::span<Parameter* const> params, double h);

} // namespace adapterlab::core

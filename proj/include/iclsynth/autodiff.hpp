#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "iclsynth/rng.hpp"
#include "iclsynth/tensor.hpp"

namespace icls {

// Handle into a Graph.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Eagerly evaluated computation tape with reverse-mode differentiation.
// Values are computed when an op is recorded; backward() walks the tape in
// reverse creation order. Node evaluation order is fixed, so identical
// inputs reproduce identical outputs bit for bit.
//
// A Graph is confined to one thread for the duration of a forward/backward
// pass; independent graphs may run concurrently.
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    // Leaves. param() keeps a non-owning pointer; the storage must outlive
    // the graph and stay unmodified until after backward().
    Var constant(Tensor value);
    Var param(Tensor* storage);

    // Elementwise and affine ops.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double alpha);
    // x (rows x C) + bias, bias.numel() == C (last axis of x).
    Var add_bias_rows(Var x, Var bias);

    Var matmul(Var a, Var b);

    Var relu(Var x);
    Var gelu(Var x);
    // Inverted dropout; identity when rate == 0. The mask is drawn at record
    // time from `rng`.
    Var dropout(Var x, double rate, Rng& rng);

    Var softmax_lastdim(Var x);
    Var layer_norm(Var x, Var gain, Var bias);

    // Multi-head attention over the middle axis of x (B x T x D). Keys and
    // values are computed from rows [kv_begin, kv_end) of each batch; every
    // token attends to exactly that span. Weight matrices are D x D, biases D.
    Var multi_head_attention(Var x, Var wq, Var bq, Var wk, Var bk, Var wv, Var bv, Var wo,
                             Var bo, std::size_t heads, std::size_t kv_begin,
                             std::size_t kv_end);

    // Structure ops.
    Var reshape(Var x, std::vector<std::size_t> shape);
    Var concat_axis0(Var a, Var b);
    Var slice_axis0(Var x, std::size_t from, std::size_t to);
    Var transpose01(Var x);  // rank-3 only

    // Reductions and losses.
    Var sum(Var x);
    Var mean(Var x);
    Var mean_sq_diff(Var a, Var b);
    Var cross_entropy_logits(Var logits, std::vector<int> labels);

    const Tensor& value(Var v) const;
    // Gradient of the node; zeros if backward never touched it.
    Tensor grad(Var v) const;

    // Reverse pass from a scalar loss. Throws DataError on non-scalar loss.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op : std::uint8_t {
        Constant,
        Param,
        Add,
        Sub,
        Mul,
        Scale,
        AddBiasRows,
        MatMul,
        Relu,
        Gelu,
        Dropout,
        SoftmaxLastDim,
        LayerNorm,
        Mha,
        Reshape,
        ConcatAxis0,
        SliceAxis0,
        Transpose01,
        Sum,
        Mean,
        MeanSqDiff,
        CrossEntropyLogits,
    };

    struct Node {
        Op op;
        bool needs_grad = false;
        std::vector<int> args;
        Tensor value;               // unused for Param
        Tensor* external = nullptr; // Param storage
        Tensor grad;                // lazily allocated
        double scalar = 0.0;        // Scale alpha / dropout rate
        std::size_t i0 = 0, i1 = 0, i2 = 0;  // heads / kv or slice bounds
        std::vector<int> labels;             // CrossEntropyLogits
        std::vector<Tensor> saved;           // op-specific backward payload
    };

    const Tensor& node_value(const Node& n) const {
        return n.external != nullptr ? *n.external : n.value;
    }
    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Node n);
    bool any_needs_grad(std::initializer_list<Var> vars) const;
    void accumulate(Node& n, const Tensor& delta);
    void backward_node(int idx);
    void backward_mha(int idx);

    // deque keeps value() references stable while new ops are recorded
    std::deque<Node> nodes_;
    bool grad_enabled_;
};

}  // namespace icls

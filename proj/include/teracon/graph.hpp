#pragma once
// Reverse-mode differentiation over DenseArray. Graphs are built per batch
// (define-by-run); node creation order is a topological order, so forward
// walks the tape left to right and backward walks it in reverse.

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "teracon/tensor.hpp"

namespace teracon::ad {

enum class Op {
    kLeaf,
    kConst,
    kAdd,
    kSub,
    kMul,
    kScalarMul,
    kRowBroadcastMul,
    kAddRowBroadcast,
    kMatMul,
    kEmbed,
    kCausalConv,
    kLayerNorm,
    kRelu,
    kSigmoid,
    kTanh,
    kConcat,
    kAffine,
    kSelectRows,
    kSoftmaxXentMean,
    kMseMean,
    kSum,
    kMean,
    kGradGate,
};

const char* op_name(Op op);

// A persistent trainable tensor. Tapes bind leaves to Params by pointer and
// re-read the value on every forward, so optimizer updates and perturbations
// are visible without rebuilding the graph.
struct Param {
    int id{-1};
    std::string name;
    DenseArray value;
    bool trainable{true};
};

struct Node {
    Op op{Op::kConst};
    std::size_t index{0};
    std::vector<Node*> inputs;
    DenseArray value;
    DenseArray grad;
    bool needs_grad{false};
    bool has_value{false};

    Param* param{nullptr};             // kLeaf
    int dilation{1};                   // kCausalConv
    std::size_t seq_len{0};            // kCausalConv
    std::vector<std::size_t> indices;  // kEmbed, kSelectRows
    std::vector<int> labels;           // kSoftmaxXentMean
    double scalar{0.0};                // kScalarMul
    DenseArray gate;                   // kGradGate keep mask
    DenseArray aux;                    // op scratch saved by forward
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves. leaf() is cached per Param so a parameter's gradient lives on
    // exactly one node.
    Node* leaf(Param& p);
    Node* constant(DenseArray v);
    Node* constant_scalar(double v) { return constant(scalar_array(v)); }

    Node* add(Node* a, Node* b);
    Node* sub(Node* a, Node* b);
    Node* mul(Node* a, Node* b);
    Node* scalar_mul(Node* a, double c);
    Node* row_broadcast_mul(Node* x, Node* v);
    Node* add_row_broadcast(Node* x, Node* v);
    Node* matmul(Node* a, Node* b);
    Node* embed(Node* table, std::vector<std::size_t> indices);
    Node* causal_conv1d(Node* x, Node* kernel, int dilation, std::size_t seq_len);
    Node* layer_norm(Node* x, Node* gain, Node* bias);
    Node* relu(Node* x);
    Node* sigmoid(Node* x);
    Node* tanh(Node* x);
    Node* concat(const std::vector<Node*>& parts);
    Node* affine(Node* x, Node* w, Node* b);
    Node* select_rows(Node* x, std::vector<std::size_t> rows);
    Node* softmax_xent_mean(Node* logits, std::vector<int> labels);
    Node* mse_mean(Node* a, Node* b);
    Node* sum(Node* x);
    Node* mean(Node* x);
    Node* grad_gate(Node* x, DenseArray keep_mask);

    // Computes every node up to and including root, re-reading bound Param
    // values, and returns the root value. Throws on shape mismatch or any
    // non-finite output, naming the offending op.
    const DenseArray& forward(Node* root);

    // Accumulates dRoot/dNode into node.grad for every node feeding root.
    // Requires a prior forward() and a scalar-shaped root.
    void backward(Node* root);

    const DenseArray& grad(const Node* n) const { return n->grad; }

    // Gradients of all bound params reachable in the last backward pass.
    std::unordered_map<int, const DenseArray*> param_grads() const;

    std::size_t node_count() const { return nodes_.size(); }

private:
    Node* make(Op op, std::vector<Node*> inputs);
    void compute(Node* n);
    void accumulate(Node* n);
    static void check_finite(const Node* n);

    std::vector<std::unique_ptr<Node>> nodes_;
    std::unordered_map<const Param*, Node*> leaf_cache_;
    std::size_t forwarded_upto_{0};  // one past the last forwarded index
};

}  // namespace teracon::ad

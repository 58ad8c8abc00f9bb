#include "teracon/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace teracon::ad {

namespace {

[[noreturn]] void fail(const Node* n, const std::string& what) {
    throw std::runtime_error(std::string(op_name(n->op)) + ": " + what);
}

void require_same_shape(const Node* n, const DenseArray& a, const DenseArray& b) {
    if (!a.same_shape(b))
        fail(n, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// Clamped into the open interval so saturated gates stay strictly inside
// (0,1) even where the quotient would round to 0 or 1.
double stable_sigmoid(double x) {
    static const double kHi = std::nextafter(1.0, 0.0);
    static const double kLo = std::numeric_limits<double>::denorm_min();
    double v;
    if (x >= 0.0) {
        v = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        v = e / (1.0 + e);
    }
    return std::min(std::max(v, kLo), kHi);
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kConst: return "const";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kMul: return "mul";
        case Op::kScalarMul: return "scalar_mul";
        case Op::kRowBroadcastMul: return "row_broadcast_mul";
        case Op::kAddRowBroadcast: return "add_row_broadcast";
        case Op::kMatMul: return "matmul";
        case Op::kEmbed: return "embed";
        case Op::kCausalConv: return "causal_conv1d";
        case Op::kLayerNorm: return "layer_norm";
        case Op::kRelu: return "relu";
        case Op::kSigmoid: return "sigmoid";
        case Op::kTanh: return "tanh";
        case Op::kConcat: return "concat";
        case Op::kAffine: return "affine";
        case Op::kSelectRows: return "select_rows";
        case Op::kSoftmaxXentMean: return "softmax_xent_mean";
        case Op::kMseMean: return "mse_mean";
        case Op::kSum: return "sum";
        case Op::kMean: return "mean";
        case Op::kGradGate: return "grad_gate";
    }
    return "?";
}

Node* Tape::make(Op op, std::vector<Node*> inputs) {
    auto n = std::make_unique<Node>();
    n->op = op;
    n->index = nodes_.size();
    n->inputs = std::move(inputs);
    for (const Node* in : n->inputs)
        if (in->needs_grad) n->needs_grad = true;
    nodes_.push_back(std::move(n));
    return nodes_.back().get();
}

Node* Tape::leaf(Param& p) {
    auto it = leaf_cache_.find(&p);
    if (it != leaf_cache_.end()) return it->second;
    Node* n = make(Op::kLeaf, {});
    n->param = &p;
    n->needs_grad = p.trainable;
    leaf_cache_.emplace(&p, n);
    return n;
}

Node* Tape::constant(DenseArray v) {
    Node* n = make(Op::kConst, {});
    n->value = std::move(v);
    n->has_value = true;
    return n;
}

Node* Tape::add(Node* a, Node* b) { return make(Op::kAdd, {a, b}); }
Node* Tape::sub(Node* a, Node* b) { return make(Op::kSub, {a, b}); }
Node* Tape::mul(Node* a, Node* b) { return make(Op::kMul, {a, b}); }

Node* Tape::scalar_mul(Node* a, double c) {
    Node* n = make(Op::kScalarMul, {a});
    n->scalar = c;
    return n;
}

Node* Tape::row_broadcast_mul(Node* x, Node* v) {
    return make(Op::kRowBroadcastMul, {x, v});
}

Node* Tape::add_row_broadcast(Node* x, Node* v) {
    return make(Op::kAddRowBroadcast, {x, v});
}

Node* Tape::matmul(Node* a, Node* b) { return make(Op::kMatMul, {a, b}); }

Node* Tape::embed(Node* table, std::vector<std::size_t> indices) {
    Node* n = make(Op::kEmbed, {table});
    n->indices = std::move(indices);
    return n;
}

Node* Tape::causal_conv1d(Node* x, Node* kernel, int dilation, std::size_t seq_len) {
    if (dilation < 1) throw std::invalid_argument("causal_conv1d: dilation must be >= 1");
    Node* n = make(Op::kCausalConv, {x, kernel});
    n->dilation = dilation;
    n->seq_len = seq_len;
    return n;
}

Node* Tape::layer_norm(Node* x, Node* gain, Node* bias) {
    return make(Op::kLayerNorm, {x, gain, bias});
}

Node* Tape::relu(Node* x) { return make(Op::kRelu, {x}); }
Node* Tape::sigmoid(Node* x) { return make(Op::kSigmoid, {x}); }
Node* Tape::tanh(Node* x) { return make(Op::kTanh, {x}); }

Node* Tape::concat(const std::vector<Node*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    return make(Op::kConcat, parts);
}

Node* Tape::affine(Node* x, Node* w, Node* b) { return make(Op::kAffine, {x, w, b}); }

Node* Tape::select_rows(Node* x, std::vector<std::size_t> rows) {
    Node* n = make(Op::kSelectRows, {x});
    n->indices = std::move(rows);
    return n;
}

Node* Tape::softmax_xent_mean(Node* logits, std::vector<int> labels) {
    Node* n = make(Op::kSoftmaxXentMean, {logits});
    n->labels = std::move(labels);
    return n;
}

Node* Tape::mse_mean(Node* a, Node* b) { return make(Op::kMseMean, {a, b}); }
Node* Tape::sum(Node* x) { return make(Op::kSum, {x}); }
Node* Tape::mean(Node* x) { return make(Op::kMean, {x}); }

Node* Tape::grad_gate(Node* x, DenseArray keep_mask) {
    Node* n = make(Op::kGradGate, {x});
    n->gate = std::move(keep_mask);
    return n;
}

void Tape::check_finite(const Node* n) {
    for (double v : n->value.data)
        if (!std::isfinite(v)) fail(n, "non-finite value in output");
}

void Tape::compute(Node* n) {
    switch (n->op) {
        case Op::kLeaf:
            n->value = n->param->value;
            break;
        case Op::kConst:
            break;
        case Op::kAdd: {
            const DenseArray& a = n->inputs[0]->value;
            const DenseArray& b = n->inputs[1]->value;
            require_same_shape(n, a, b);
            n->value = a;
            for (std::size_t i = 0; i < b.size(); ++i) n->value.data[i] += b.data[i];
            break;
        }
        case Op::kSub: {
            const DenseArray& a = n->inputs[0]->value;
            const DenseArray& b = n->inputs[1]->value;
            require_same_shape(n, a, b);
            n->value = a;
            for (std::size_t i = 0; i < b.size(); ++i) n->value.data[i] -= b.data[i];
            break;
        }
        case Op::kMul: {
            const DenseArray& a = n->inputs[0]->value;
            const DenseArray& b = n->inputs[1]->value;
            require_same_shape(n, a, b);
            n->value = a;
            for (std::size_t i = 0; i < b.size(); ++i) n->value.data[i] *= b.data[i];
            break;
        }
        case Op::kScalarMul: {
            n->value = n->inputs[0]->value;
            for (double& v : n->value.data) v *= n->scalar;
            break;
        }
        case Op::kRowBroadcastMul: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& v = n->inputs[1]->value;
            if (x.cols() != v.size())
                fail(n, "vector length " + v.shape_str() + " does not match columns of " +
                            x.shape_str());
            n->value = x;
            const std::size_t r = x.rows(), c = x.cols();
            for (std::size_t i = 0; i < r; ++i) {
                double* out = n->value.row(i);
                for (std::size_t j = 0; j < c; ++j) out[j] *= v.data[j];
            }
            break;
        }
        case Op::kAddRowBroadcast: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& v = n->inputs[1]->value;
            if (x.cols() != v.size())
                fail(n, "bias length " + v.shape_str() + " does not match columns of " +
                            x.shape_str());
            n->value = x;
            const std::size_t r = x.rows(), c = x.cols();
            for (std::size_t i = 0; i < r; ++i) {
                double* out = n->value.row(i);
                for (std::size_t j = 0; j < c; ++j) out[j] += v.data[j];
            }
            break;
        }
        case Op::kMatMul: {
            const DenseArray& a = n->inputs[0]->value;
            const DenseArray& b = n->inputs[1]->value;
            if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
                fail(n, "incompatible shapes " + a.shape_str() + " x " + b.shape_str());
            const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
            n->value = DenseArray({m, p});
            for (std::size_t i = 0; i < m; ++i) {
                const double* arow = a.row(i);
                double* crow = n->value.row(i);
                for (std::size_t q = 0; q < k; ++q) {
                    const double av = arow[q];
                    const double* brow = b.row(q);
                    for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
                }
            }
            break;
        }
        case Op::kEmbed: {
            const DenseArray& table = n->inputs[0]->value;
            if (table.rank() != 2) fail(n, "table must be 2-D");
            const std::size_t v = table.rows(), f = table.cols();
            n->value = DenseArray({n->indices.size(), f});
            for (std::size_t i = 0; i < n->indices.size(); ++i) {
                const std::size_t id = n->indices[i];
                if (id >= v)
                    fail(n, "index " + std::to_string(id) + " at position " +
                                std::to_string(i) + " out of vocabulary " + std::to_string(v));
                std::memcpy(n->value.row(i), table.row(id), f * sizeof(double));
            }
            break;
        }
        case Op::kCausalConv: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& ker = n->inputs[1]->value;
            if (x.rank() != 2) fail(n, "input must be 2-D");
            if (ker.rank() != 3) fail(n, "kernel must be (width, f_in, f_out)");
            if (x.rows() == 0) fail(n, "zero-length input");
            const std::size_t w = ker.shape[0], fin = ker.shape[1], fout = ker.shape[2];
            if (x.cols() != fin)
                fail(n, "input channels " + x.shape_str() + " do not match kernel " +
                            ker.shape_str());
            const std::size_t seq = n->seq_len == 0 ? x.rows() : n->seq_len;
            if (x.rows() % seq != 0) fail(n, "rows not divisible by seq_len");
            const std::size_t segments = x.rows() / seq;
            const int d = n->dilation;
            n->value = DenseArray({x.rows(), fout});
            for (std::size_t g = 0; g < segments; ++g) {
                const std::size_t base = g * seq;
                for (std::size_t t = 0; t < seq; ++t) {
                    double* out = n->value.row(base + t);
                    for (std::size_t q = 0; q < w; ++q) {
                        // Tap q reaches back (w-1-q)*d steps; left zero-padding
                        // drops taps before the segment start.
                        const std::ptrdiff_t r =
                            static_cast<std::ptrdiff_t>(t) -
                            static_cast<std::ptrdiff_t>((w - 1 - q)) * d;
                        if (r < 0) continue;
                        const double* in = x.row(base + static_cast<std::size_t>(r));
                        const double* kq = ker.data.data() + q * fin * fout;
                        for (std::size_t c = 0; c < fin; ++c) {
                            const double a = in[c];
                            const double* kc = kq + c * fout;
                            for (std::size_t o = 0; o < fout; ++o) out[o] += a * kc[o];
                        }
                    }
                }
            }
            break;
        }
        case Op::kLayerNorm: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& g = n->inputs[1]->value;
            const DenseArray& b = n->inputs[2]->value;
            const std::size_t r = x.rows(), c = x.cols();
            if (g.size() != c || b.size() != c)
                fail(n, "gain/bias length does not match features of " + x.shape_str());
            constexpr double kEps = 1e-5;
            n->value = DenseArray({r, c});
            n->aux = DenseArray({r, 2});  // per-row mean, inv_std
            for (std::size_t i = 0; i < r; ++i) {
                const double* in = x.row(i);
                double mean = 0.0;
                for (std::size_t j = 0; j < c; ++j) mean += in[j];
                mean /= static_cast<double>(c);
                double var = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double d = in[j] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(c);
                const double inv_std = 1.0 / std::sqrt(var + kEps);
                n->aux.at(i, 0) = mean;
                n->aux.at(i, 1) = inv_std;
                double* out = n->value.row(i);
                for (std::size_t j = 0; j < c; ++j)
                    out[j] = g.data[j] * (in[j] - mean) * inv_std + b.data[j];
            }
            break;
        }
        case Op::kRelu: {
            n->value = n->inputs[0]->value;
            for (double& v : n->value.data)
                if (v < 0.0) v = 0.0;
            break;
        }
        case Op::kSigmoid: {
            n->value = n->inputs[0]->value;
            for (double& v : n->value.data) v = stable_sigmoid(v);
            break;
        }
        case Op::kTanh: {
            n->value = n->inputs[0]->value;
            for (double& v : n->value.data) v = std::tanh(v);
            break;
        }
        case Op::kConcat: {
            std::size_t total = 0;
            for (const Node* in : n->inputs) {
                if (in->value.rank() != 1) fail(n, "inputs must be 1-D");
                total += in->value.size();
            }
            n->value = DenseArray({total});
            std::size_t off = 0;
            for (const Node* in : n->inputs) {
                std::memcpy(n->value.data.data() + off, in->value.data.data(),
                            in->value.size() * sizeof(double));
                off += in->value.size();
            }
            break;
        }
        case Op::kAffine: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& w = n->inputs[1]->value;
            const DenseArray& b = n->inputs[2]->value;
            if (x.rank() != 1 || w.rank() != 2 || x.size() != w.rows() || b.size() != w.cols())
                fail(n, "incompatible shapes " + x.shape_str() + ", " + w.shape_str() + ", " +
                            b.shape_str());
            const std::size_t din = w.rows(), dout = w.cols();
            n->value = DenseArray({dout});
            for (std::size_t j = 0; j < dout; ++j) n->value.data[j] = b.data[j];
            for (std::size_t i = 0; i < din; ++i) {
                const double xv = x.data[i];
                if (xv == 0.0) continue;
                const double* wrow = w.row(i);
                for (std::size_t j = 0; j < dout; ++j) n->value.data[j] += xv * wrow[j];
            }
            break;
        }
        case Op::kSelectRows: {
            const DenseArray& x = n->inputs[0]->value;
            const std::size_t c = x.cols();
            n->value = DenseArray({n->indices.size(), c});
            for (std::size_t i = 0; i < n->indices.size(); ++i) {
                if (n->indices[i] >= x.rows())
                    fail(n, "row index " + std::to_string(n->indices[i]) + " out of range");
                std::memcpy(n->value.row(i), x.row(n->indices[i]), c * sizeof(double));
            }
            break;
        }
        case Op::kSoftmaxXentMean: {
            const DenseArray& z = n->inputs[0]->value;
            const std::size_t m = z.rows(), c = z.cols();
            if (n->labels.size() != m) fail(n, "label count does not match rows");
            n->aux = DenseArray({m, c});  // softmax cache for backward
            double total = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                const int label = n->labels[i];
                if (label < 0 || static_cast<std::size_t>(label) >= c)
                    fail(n, "label " + std::to_string(label) + " out of range at row " +
                                std::to_string(i));
                const double* row = z.row(i);
                double mx = row[0];
                for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                double denom = 0.0;
                for (std::size_t j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
                const double lse = mx + std::log(denom);
                total += lse - row[label];
                double* p = n->aux.row(i);
                for (std::size_t j = 0; j < c; ++j) p[j] = std::exp(row[j] - lse);
            }
            n->value = scalar_array(total / static_cast<double>(m));
            break;
        }
        case Op::kMseMean: {
            const DenseArray& a = n->inputs[0]->value;
            const DenseArray& b = n->inputs[1]->value;
            require_same_shape(n, a, b);
            double total = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a.data[i] - b.data[i];
                total += d * d;
            }
            n->value = scalar_array(total / static_cast<double>(a.size()));
            break;
        }
        case Op::kSum: {
            double total = 0.0;
            for (double v : n->inputs[0]->value.data) total += v;
            n->value = scalar_array(total);
            break;
        }
        case Op::kMean: {
            double total = 0.0;
            const DenseArray& x = n->inputs[0]->value;
            for (double v : x.data) total += v;
            n->value = scalar_array(total / static_cast<double>(x.size()));
            break;
        }
        case Op::kGradGate: {
            const DenseArray& x = n->inputs[0]->value;
            require_same_shape(n, x, n->gate);
            n->value = x;
            break;
        }
    }
    n->has_value = true;
}

const DenseArray& Tape::forward(Node* root) {
    const std::size_t upto = root->index + 1;
    for (std::size_t i = 0; i < upto; ++i) {
        Node* n = nodes_[i].get();
        compute(n);
        check_finite(n);
    }
    forwarded_upto_ = std::max(forwarded_upto_, upto);
    return root->value;
}

void Tape::accumulate(Node* n) {
    const DenseArray& gy = n->grad;
    auto want = [&](std::size_t i) { return n->inputs[i]->needs_grad; };
    auto gin = [&](std::size_t i) -> DenseArray& {
        Node* in = n->inputs[i];
        if (in->grad.size() != in->value.size())
            in->grad = DenseArray(in->value.shape);
        return in->grad;
    };

    switch (n->op) {
        case Op::kLeaf:
        case Op::kConst:
            break;
        case Op::kAdd: {
            for (std::size_t k = 0; k < 2; ++k) {
                if (!want(k)) continue;
                DenseArray& g = gin(k);
                for (std::size_t i = 0; i < gy.size(); ++i) g.data[i] += gy.data[i];
            }
            break;
        }
        case Op::kSub: {
            if (want(0)) {
                DenseArray& g = gin(0);
                for (std::size_t i = 0; i < gy.size(); ++i) g.data[i] += gy.data[i];
            }
            if (want(1)) {
                DenseArray& g = gin(1);
                for (std::size_t i = 0; i < gy.size(); ++i) g.data[i] -= gy.data[i];
            }
            break;
        }
        case Op::kMul: {
            const DenseArray& a = n->inputs[0]->value;
            const DenseArray& b = n->inputs[1]->value;
            if (want(0)) {
                DenseArray& g = gin(0);
                for (std::size_t i = 0; i < gy.size(); ++i) g.data[i] += gy.data[i] * b.data[i];
            }
            if (want(1)) {
                DenseArray& g = gin(1);
                for (std::size_t i = 0; i < gy.size(); ++i) g.data[i] += gy.data[i] * a.data[i];
            }
            break;
        }
        case Op::kScalarMul: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            for (std::size_t i = 0; i < gy.size(); ++i) g.data[i] += gy.data[i] * n->scalar;
            break;
        }
        case Op::kRowBroadcastMul: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& v = n->inputs[1]->value;
            const std::size_t r = x.rows(), c = x.cols();
            if (want(0)) {
                DenseArray& g = gin(0);
                for (std::size_t i = 0; i < r; ++i) {
                    const double* gr = gy.row(i);
                    double* go = g.row(i);
                    for (std::size_t j = 0; j < c; ++j) go[j] += gr[j] * v.data[j];
                }
            }
            if (want(1)) {
                DenseArray& g = gin(1);
                for (std::size_t i = 0; i < r; ++i) {
                    const double* gr = gy.row(i);
                    const double* xr = x.row(i);
                    for (std::size_t j = 0; j < c; ++j) g.data[j] += gr[j] * xr[j];
                }
            }
            break;
        }
        case Op::kAddRowBroadcast: {
            const std::size_t r = gy.rows(), c = gy.cols();
            if (want(0)) {
                DenseArray& g = gin(0);
                for (std::size_t i = 0; i < gy.size(); ++i) g.data[i] += gy.data[i];
            }
            if (want(1)) {
                DenseArray& g = gin(1);
                for (std::size_t i = 0; i < r; ++i) {
                    const double* gr = gy.row(i);
                    for (std::size_t j = 0; j < c; ++j) g.data[j] += gr[j];
                }
            }
            break;
        }
        case Op::kMatMul: {
            const DenseArray& a = n->inputs[0]->value;
            const DenseArray& b = n->inputs[1]->value;
            const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
            if (want(0)) {
                DenseArray& g = gin(0);  // dA = dC * B^T
                for (std::size_t i = 0; i < m; ++i) {
                    const double* gr = gy.row(i);
                    double* ga = g.row(i);
                    for (std::size_t q = 0; q < k; ++q) {
                        const double* brow = b.row(q);
                        double acc = 0.0;
                        for (std::size_t j = 0; j < p; ++j) acc += gr[j] * brow[j];
                        ga[q] += acc;
                    }
                }
            }
            if (want(1)) {
                DenseArray& g = gin(1);  // dB = A^T * dC
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = a.row(i);
                    const double* gr = gy.row(i);
                    for (std::size_t q = 0; q < k; ++q) {
                        const double av = arow[q];
                        if (av == 0.0) continue;
                        double* gb = g.row(q);
                        for (std::size_t j = 0; j < p; ++j) gb[j] += av * gr[j];
                    }
                }
            }
            break;
        }
        case Op::kEmbed: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            const std::size_t f = g.cols();
            for (std::size_t i = 0; i < n->indices.size(); ++i) {
                const double* gr = gy.row(i);
                double* go = g.row(n->indices[i]);
                for (std::size_t j = 0; j < f; ++j) go[j] += gr[j];
            }
            break;
        }
        case Op::kCausalConv: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& ker = n->inputs[1]->value;
            const std::size_t w = ker.shape[0], fin = ker.shape[1], fout = ker.shape[2];
            const std::size_t seq = n->seq_len == 0 ? x.rows() : n->seq_len;
            const std::size_t segments = x.rows() / seq;
            const int d = n->dilation;
            const bool wx = want(0), wk = want(1);
            DenseArray* gx = wx ? &gin(0) : nullptr;
            DenseArray* gk = wk ? &gin(1) : nullptr;
            for (std::size_t g = 0; g < segments; ++g) {
                const std::size_t base = g * seq;
                for (std::size_t t = 0; t < seq; ++t) {
                    const double* gout = gy.row(base + t);
                    for (std::size_t q = 0; q < w; ++q) {
                        const std::ptrdiff_t r =
                            static_cast<std::ptrdiff_t>(t) -
                            static_cast<std::ptrdiff_t>((w - 1 - q)) * d;
                        if (r < 0) continue;
                        const std::size_t src = base + static_cast<std::size_t>(r);
                        const double* in = x.row(src);
                        for (std::size_t c = 0; c < fin; ++c) {
                            const double* kc = ker.data.data() + (q * fin + c) * fout;
                            if (wx) {
                                double acc = 0.0;
                                for (std::size_t o = 0; o < fout; ++o) acc += gout[o] * kc[o];
                                gx->row(src)[c] += acc;
                            }
                            if (wk) {
                                const double a = in[c];
                                if (a == 0.0) continue;
                                double* gkc = gk->data.data() + (q * fin + c) * fout;
                                for (std::size_t o = 0; o < fout; ++o) gkc[o] += a * gout[o];
                            }
                        }
                    }
                }
            }
            break;
        }
        case Op::kLayerNorm: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& g = n->inputs[1]->value;
            const std::size_t r = x.rows(), c = x.cols();
            const double fc = static_cast<double>(c);
            const bool wx = want(0), wg = want(1), wb = want(2);
            DenseArray* gx = wx ? &gin(0) : nullptr;
            DenseArray* gg = wg ? &gin(1) : nullptr;
            DenseArray* gb = wb ? &gin(2) : nullptr;
            for (std::size_t i = 0; i < r; ++i) {
                const double mean = n->aux.at(i, 0);
                const double inv_std = n->aux.at(i, 1);
                const double* in = x.row(i);
                const double* gr = gy.row(i);
                double sum_gygain = 0.0, sum_gygain_xhat = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double xhat = (in[j] - mean) * inv_std;
                    const double t = gr[j] * g.data[j];
                    sum_gygain += t;
                    sum_gygain_xhat += t * xhat;
                    if (wg) gg->data[j] += gr[j] * xhat;
                    if (wb) gb->data[j] += gr[j];
                }
                if (wx) {
                    double* go = gx->row(i);
                    for (std::size_t j = 0; j < c; ++j) {
                        const double xhat = (in[j] - mean) * inv_std;
                        go[j] += inv_std * (gr[j] * g.data[j] - sum_gygain / fc -
                                            xhat * sum_gygain_xhat / fc);
                    }
                }
            }
            break;
        }
        case Op::kRelu: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            const DenseArray& y = n->value;
            for (std::size_t i = 0; i < gy.size(); ++i)
                if (y.data[i] > 0.0) g.data[i] += gy.data[i];
            break;
        }
        case Op::kSigmoid: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            const DenseArray& y = n->value;
            for (std::size_t i = 0; i < gy.size(); ++i)
                g.data[i] += gy.data[i] * y.data[i] * (1.0 - y.data[i]);
            break;
        }
        case Op::kTanh: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            const DenseArray& y = n->value;
            for (std::size_t i = 0; i < gy.size(); ++i)
                g.data[i] += gy.data[i] * (1.0 - y.data[i] * y.data[i]);
            break;
        }
        case Op::kConcat: {
            std::size_t off = 0;
            for (std::size_t k = 0; k < n->inputs.size(); ++k) {
                const std::size_t len = n->inputs[k]->value.size();
                if (want(k)) {
                    DenseArray& g = gin(k);
                    for (std::size_t i = 0; i < len; ++i) g.data[i] += gy.data[off + i];
                }
                off += len;
            }
            break;
        }
        case Op::kAffine: {
            const DenseArray& x = n->inputs[0]->value;
            const DenseArray& w = n->inputs[1]->value;
            const std::size_t din = w.rows(), dout = w.cols();
            if (want(0)) {
                DenseArray& g = gin(0);
                for (std::size_t i = 0; i < din; ++i) {
                    const double* wrow = w.row(i);
                    double acc = 0.0;
                    for (std::size_t j = 0; j < dout; ++j) acc += gy.data[j] * wrow[j];
                    g.data[i] += acc;
                }
            }
            if (want(1)) {
                DenseArray& g = gin(1);
                for (std::size_t i = 0; i < din; ++i) {
                    const double xv = x.data[i];
                    if (xv == 0.0) continue;
                    double* grow = g.row(i);
                    for (std::size_t j = 0; j < dout; ++j) grow[j] += xv * gy.data[j];
                }
            }
            if (want(2)) {
                DenseArray& g = gin(2);
                for (std::size_t j = 0; j < dout; ++j) g.data[j] += gy.data[j];
            }
            break;
        }
        case Op::kSelectRows: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            const std::size_t c = g.cols();
            for (std::size_t i = 0; i < n->indices.size(); ++i) {
                const double* gr = gy.row(i);
                double* go = g.row(n->indices[i]);
                for (std::size_t j = 0; j < c; ++j) go[j] += gr[j];
            }
            break;
        }
        case Op::kSoftmaxXentMean: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            const std::size_t m = n->aux.rows(), c = n->aux.cols();
            const double scale = gy.data[0] / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                const double* p = n->aux.row(i);
                double* go = g.row(i);
                for (std::size_t j = 0; j < c; ++j) go[j] += scale * p[j];
                go[n->labels[i]] -= scale;
            }
            break;
        }
        case Op::kMseMean: {
            const DenseArray& a = n->inputs[0]->value;
            const DenseArray& b = n->inputs[1]->value;
            const double scale = 2.0 * gy.data[0] / static_cast<double>(a.size());
            if (want(0)) {
                DenseArray& g = gin(0);
                for (std::size_t i = 0; i < a.size(); ++i)
                    g.data[i] += scale * (a.data[i] - b.data[i]);
            }
            if (want(1)) {
                DenseArray& g = gin(1);
                for (std::size_t i = 0; i < a.size(); ++i)
                    g.data[i] -= scale * (a.data[i] - b.data[i]);
            }
            break;
        }
        case Op::kSum: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            for (double& v : g.data) v += gy.data[0];
            break;
        }
        case Op::kMean: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            const double scale = gy.data[0] / static_cast<double>(g.size());
            for (double& v : g.data) v += scale;
            break;
        }
        case Op::kGradGate: {
            if (!want(0)) break;
            DenseArray& g = gin(0);
            for (std::size_t i = 0; i < gy.size(); ++i)
                g.data[i] += gy.data[i] * n->gate.data[i];
            break;
        }
    }
}

void Tape::backward(Node* root) {
    if (!root->has_value || root->index >= forwarded_upto_)
        throw std::runtime_error("backward: forward has not been run for this node");
    if (root->value.size() != 1)
        throw std::runtime_error("backward: root is not scalar, has shape " +
                                 root->value.shape_str());
    const std::size_t upto = root->index + 1;
    for (std::size_t i = 0; i < upto; ++i) {
        Node* n = nodes_[i].get();
        if (n->grad.size() != 0) n->grad.fill(0.0);
    }
    root->grad = scalar_array(1.0);
    for (std::size_t i = upto; i-- > 0;) {
        Node* n = nodes_[i].get();
        if (!n->needs_grad || n->grad.size() == 0) continue;
        accumulate(n);
    }
}

std::unordered_map<int, const DenseArray*> Tape::param_grads() const {
    std::unordered_map<int, const DenseArray*> out;
    for (const auto& [param, node] : leaf_cache_) {
        if (node->grad.size() != 0) out.emplace(param->id, &node->grad);
    }
    return out;
}

}  // namespace teracon::ad

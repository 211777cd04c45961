#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "minediff/tensor.hpp"

namespace minediff {

// Reverse-mode tape over a closed, fixed op vocabulary. Nodes are appended in
// topological order, so backward is a single reverse sweep. Gradients only
// flow through nodes reachable from a leaf.
class Tape {
public:
    using Id = int;

    Id constant(Tensor t) { return push(Op::kConstant, std::move(t), -1, -1, 0.0, false); }

    Id leaf(Tensor t) { return push(Op::kLeaf, std::move(t), -1, -1, 0.0, true); }

    Id add(Id a, Id b) {
        Tensor out = minediff::add(val(a), val(b));
        return push(Op::kAdd, std::move(out), a, b);
    }

    Id sub(Id a, Id b) {
        Tensor out = minediff::sub(val(a), val(b));
        return push(Op::kSub, std::move(out), a, b);
    }

    Id mul(Id a, Id b) {
        Tensor out = hadamard(val(a), val(b));
        return push(Op::kMul, std::move(out), a, b);
    }

    // matrix [m x n] plus a length-n row vector broadcast over rows
    Id add_row(Id m, Id row) {
        const Tensor& a = val(m);
        const Tensor& r = val(row);
        if (static_cast<size_t>(a.cols()) != r.numel()) {
            throw std::invalid_argument("add_row: row length mismatch");
        }
        Tensor out = a;
        for (int i = 0; i < a.rows(); ++i) {
            for (int j = 0; j < a.cols(); ++j) out.at(i, j) += r.v[static_cast<size_t>(j)];
        }
        return push(Op::kAddRow, std::move(out), m, row);
    }

    Id scale(Id a, double k) {
        Tensor out = scaled(val(a), k);
        return push(Op::kScale, std::move(out), a, -1, k);
    }

    Id matmul(Id a, Id b) {
        Tensor out = minediff::matmul(val(a), val(b));
        return push(Op::kMatmul, std::move(out), a, b);
    }

    Id matmul_nt(Id a, Id b) {
        Tensor out = minediff::matmul_nt(val(a), val(b));
        return push(Op::kMatmulNT, std::move(out), a, b);
    }

    Id tanh_op(Id a) {
        Tensor out = val(a);
        for (double& x : out.v) x = std::tanh(x);
        return push(Op::kTanh, std::move(out), a);
    }

    Id softmax_rows(Id a) {
        Tensor out = val(a);
        const int n = out.cols();
        for (int i = 0; i < out.rows(); ++i) {
            double mx = out.at(i, 0);
            for (int j = 1; j < n; ++j) mx = std::max(mx, out.at(i, j));
            double z = 0.0;
            for (int j = 0; j < n; ++j) {
                const double e = std::exp(out.at(i, j) - mx);
                out.at(i, j) = e;
                z += e;
            }
            for (int j = 0; j < n; ++j) out.at(i, j) /= z;
        }
        return push(Op::kSoftmaxRows, std::move(out), a);
    }

    Id sum(Id a) {
        double s = 0.0;
        for (double x : val(a).v) s += x;
        return push(Op::kSum, Tensor({1}, {s}), a);
    }

    Id mean(Id a) {
        double s = 0.0;
        for (double x : val(a).v) s += x;
        const auto n = static_cast<double>(val(a).numel());
        return push(Op::kMean, Tensor({1}, {s / n}), a);
    }

    // convenience: sum((a-b)^2)
    Id sum_sq_diff(Id a, Id b) { return sum(mul(sub(a, b), sub(a, b))); }

    const Tensor& value(Id id) const { return nodes_[static_cast<size_t>(id)].val; }

    const Tensor& gradient(Id id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.grad_ready) throw std::logic_error("tape: gradient not computed for node");
        return n.grad;
    }

    bool has_gradient(Id id) const { return nodes_[static_cast<size_t>(id)].grad_ready; }

    // Reverse sweep from a scalar root. May be called once per tape.
    void backward(Id root) {
        Node& r = nodes_[static_cast<size_t>(root)];
        if (r.val.numel() != 1) throw std::invalid_argument("backward: root is not scalar");
        accum(root, Tensor(r.val.shape, 1.0));
        for (Id i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.grad_ready || !n.needs_grad) continue;
            dispatch_backward(i);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    enum class Op {
        kConstant,
        kLeaf,
        kAdd,
        kSub,
        kMul,
        kAddRow,
        kScale,
        kMatmul,
        kMatmulNT,
        kTanh,
        kSoftmaxRows,
        kSum,
        kMean,
    };

    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        double k = 0.0;
        Tensor val;
        Tensor grad;
        bool needs_grad = false;
        bool grad_ready = false;
    };

    std::vector<Node> nodes_;

    const Tensor& val(Id id) const { return nodes_[static_cast<size_t>(id)].val; }

    bool needs(Id id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad; }

    Id push(Op op, Tensor out, int a = -1, int b = -1, double k = 0.0, bool needs_grad_self = false) {
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        n.k = k;
        n.val = std::move(out);
        n.needs_grad = needs_grad_self || needs(a) || needs(b);
        nodes_.push_back(std::move(n));
        return static_cast<Id>(nodes_.size() - 1);
    }

    void accum(Id id, const Tensor& g) {
        if (id < 0) return;
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad) return;
        if (!n.grad_ready) {
            n.grad = Tensor(n.val.shape);
            n.grad_ready = true;
        }
        for (size_t i = 0; i < g.v.size(); ++i) n.grad.v[i] += g.v[i];
    }

    void dispatch_backward(Id i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        const Tensor& g = n.grad;
        switch (n.op) {
            case Op::kConstant:
            case Op::kLeaf:
                break;
            case Op::kAdd:
                accum(n.a, g);
                accum(n.b, g);
                break;
            case Op::kSub: {
                accum(n.a, g);
                if (needs(n.b)) accum(n.b, scaled(g, -1.0));
                break;
            }
            case Op::kMul: {
                if (needs(n.a)) accum(n.a, hadamard(g, val(n.b)));
                if (needs(n.b)) accum(n.b, hadamard(g, val(n.a)));
                break;
            }
            case Op::kAddRow: {
                accum(n.a, g);
                if (needs(n.b)) {
                    Tensor rg(nodes_[static_cast<size_t>(n.b)].val.shape);
                    for (int r = 0; r < g.rows(); ++r) {
                        for (int c = 0; c < g.cols(); ++c) rg.v[static_cast<size_t>(c)] += g.at(r, c);
                    }
                    accum(n.b, rg);
                }
                break;
            }
            case Op::kScale:
                if (needs(n.a)) accum(n.a, scaled(g, n.k));
                break;
            case Op::kMatmul: {
                // C = A*B: dA = g*B^T, dB = A^T*g
                if (needs(n.a)) accum(n.a, minediff::matmul_nt(g, val(n.b)));
                if (needs(n.b)) accum(n.b, minediff::matmul_tn(val(n.a), g));
                break;
            }
            case Op::kMatmulNT: {
                // C = A*B^T: dA = g*B, dB = g^T*A
                if (needs(n.a)) accum(n.a, minediff::matmul(g, val(n.b)));
                if (needs(n.b)) accum(n.b, minediff::matmul_tn(g, val(n.a)));
                break;
            }
            case Op::kTanh: {
                Tensor d = g;
                const Tensor& y = n.val;
                for (size_t j = 0; j < d.v.size(); ++j) d.v[j] *= 1.0 - y.v[j] * y.v[j];
                accum(n.a, d);
                break;
            }
            case Op::kSoftmaxRows: {
                const Tensor& s = n.val;
                Tensor d(s.shape);
                for (int r = 0; r < s.rows(); ++r) {
                    double gs = 0.0;
                    for (int c = 0; c < s.cols(); ++c) gs += g.at(r, c) * s.at(r, c);
                    for (int c = 0; c < s.cols(); ++c) d.at(r, c) = s.at(r, c) * (g.at(r, c) - gs);
                }
                accum(n.a, d);
                break;
            }
            case Op::kSum: {
                accum(n.a, Tensor(val(n.a).shape, g.v[0]));
                break;
            }
            case Op::kMean: {
                const auto cnt = static_cast<double>(val(n.a).numel());
                accum(n.a, Tensor(val(n.a).shape, g.v[0] / cnt));
                break;
            }
        }
    }
};

}  // namespace minediff

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records primitive operations in topological order (construction
// order guarantees inputs precede consumers). Vars are cheap handles into
// the tape. backward() walks the record once in reverse and accumulates
// gradients additively, so a value consumed k times receives the sum of
// its k contributions. Tensors on the tape are never mutated in place.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "kgprefix/tensor.hpp"

namespace kgprefix {

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Inserts an input value. Gradients are only tracked through vars whose
    // ancestry reaches a leaf with requires_grad=true.
    Var leaf(Tensor value, bool requires_grad = false);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;

    // Runs reverse accumulation from a scalar loss. May be called once.
    void backward(Var loss);

    bool has_grad(Var v) const;
    const Tensor& grad(Var v) const;        // throws if absent
    Tensor grad_or_zero(Var v) const;       // zeros with the var's shape if absent

    size_t node_count() const { return nodes_.size(); }

    // --- op implementation interface ---
    using BackwardFn = std::function<void(Tape&, int self)>;
    Var push(Tensor value, std::vector<int> parents, BackwardFn fn, const char* what);
    void accumulate(int id, const Tensor& g);

private:
    struct Node {
        Tensor value;
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
    std::vector<std::optional<Tensor>> grads_;
    bool backward_done_ = false;

    const Node& node(Var v) const;
};

// ----------------------------- primitives -----------------------------
// Binary ops broadcast numpy-style; gradients reduce-sum over broadcast axes.
Var matmul(Var a, Var b);
Var transpose(Var a);  // rank 2
Var softmax(Var x, int axis);
Var tanh_op(Var x);
Var relu(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var gather_rows(Var table, const std::vector<long>& indices);
Var concat(const std::vector<Var>& xs, int axis);  // rank 2
Var slice_rows(Var x, long row0, long n_rows);
Var slice_cols(Var x, long col0, long n_cols);
Var sum_all(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
// Mean negative log-likelihood over unmasked rows, log-sum-exp stabilized.
Var cross_entropy(Var logits, const std::vector<long>& targets, const std::vector<uint8_t>& mask);
// Pools a row-stochastic matrix over rows by arithmetic mean, then returns
// the mean negative log mass of the bag's word ids.
Var bow_loss(Var distribution, const std::vector<long>& bag);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

namespace testing {
// When nonzero, matmul backward perturbs one gradient element. Lets tests
// and the gradcheck command prove the finite-difference oracle can fail.
void set_backward_corruption(double magnitude);
double backward_corruption();
}  // namespace testing

}  // namespace kgprefix

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "macnet/errors.hpp"

namespace macnet {

using Shape = std::vector<size_t>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

class Tape;

// Dense row-major tensor of 64-bit floats. Copies share storage; treat a
// tensor as immutable once it participates in a traced computation. The
// optional (tape, node) pair links the value to the tape that recorded it.
class Tensor {
  public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor row(std::vector<double> values);                 // shape [1 x n]
    static Tensor vec(std::vector<double> values);                 // shape [n]

    const Shape& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    size_t numel() const;
    size_t rows() const;  // rank-2 only
    size_t cols() const;  // rank-2 only
    bool defined() const { return static_cast<bool>(data_); }

    double at(size_t i) const { return (*data_)[i]; }
    double at(size_t r, size_t c) const { return (*data_)[r * cols() + c]; }
    std::span<const double> data() const;
    // Mutable access for owners (initializers, optimizers, tests). Never call
    // on a tensor that a live tape has already consumed.
    std::span<double> mutable_data();
    std::vector<double> to_vector() const;

    bool traced() const { return tape_ != nullptr; }
    Tape* tape() const { return tape_; }
    int node() const { return node_; }

    const std::shared_ptr<std::vector<double>>& storage() const { return data_; }

  private:
    friend class Tape;
    std::shared_ptr<std::vector<double>> data_;
    Shape shape_;
    Tape* tape_ = nullptr;
    int node_ = -1;
};

// Reverse-mode tape. Records one node per produced tensor; node order is the
// evaluation order, so every node's inputs precede it. Single-owner: one
// thread records, then calls backward() once.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf (parameter or input). Repeated calls with the same
    // storage return the same node.
    Tensor watch(const Tensor& t);

    // Seeds d(loss)/d(loss) = 1 and walks the tape once in reverse.
    void backward(const Tensor& loss);

    // Gradient of the last backward() w.r.t. a watched/produced tensor.
    Tensor grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const;

    size_t size() const { return recs_.size(); }
    void reset();

    // --- recording internals (used by the tensor ops) ---
    using BackwardFn = std::function<void(Tape&, int)>;
    int record(const Tensor& out, std::vector<int> inputs, BackwardFn bwd);
    // Records `out` and returns a copy tagged with its node id.
    Tensor emit(Tensor out, std::vector<int> inputs, BackwardFn bwd);
    std::vector<double>& grad_buf(int node);        // allocate-on-demand, zeroed
    bool grad_live(int node) const;                 // true once grad_buf touched
    const Shape& node_shape(int node) const { return recs_[static_cast<size_t>(node)].shape; }

  private:
    // Node id for a traced tensor or a watched storage alias; -1 if neither.
    int node_of(const Tensor& t) const;
    struct Rec {
        std::vector<int> inputs;
        Shape shape;
        BackwardFn bwd;  // empty for leaves
    };
    std::vector<Rec> recs_;
    std::vector<std::vector<double>> grads_;
    std::unordered_map<const void*, int> watched_;
    bool ran_backward_ = false;
};

// --- operations ---------------------------------------------------------
// Every op propagates tracing: the result is recorded iff an input is traced.
// Mixing tensors from two different tapes is a contract violation.

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);      // equal shapes, or one side scalar-shaped
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double s);
Tensor sub(const Tensor& a, double s);
Tensor sub(double s, const Tensor& a);
Tensor scale(const Tensor& a, double s);

// Concatenation along the last axis (rank 1 or 2).
Tensor concat(const Tensor& a, const Tensor& b);

// Numerically stable softmax over a rank-1 tensor.
Tensor softmax(const Tensor& v);
// Softmax over the first `valid` entries; the rest get probability exactly 0.
// Equivalent to an additive -inf pre-softmax mask on the padded suffix.
Tensor masked_softmax(const Tensor& v, size_t valid);

Tensor sigmoid(const Tensor& x);
Tensor elu(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);
Tensor slice_rows(const Tensor& x, size_t r0, size_t r1);
Tensor slice_cols(const Tensor& x, size_t c0, size_t c1);
Tensor stack_rows(const std::vector<Tensor>& rows);
Tensor broadcast_rows(const Tensor& row, size_t n);
Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);

// loss = logsumexp(logits) - logits[target]; gradient is softmax - onehot.
Tensor cross_entropy_logits(const Tensor& logits, size_t target);

double item(const Tensor& t);
bool all_finite(const Tensor& t);

}  // namespace macnet

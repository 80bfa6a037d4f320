#include "macnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace macnet {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != values.size())
        throw DimensionError("tensor data size " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
    data_ = std::make_shared<std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
    size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
    size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::vec(std::vector<double> values) {
    size_t n = values.size();
    return Tensor({n}, std::move(values));
}

size_t Tensor::numel() const { return data_ ? data_->size() : 0; }

size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows() on tensor of shape " + shape_str(shape_));
    return shape_[0];
}

size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols() on tensor of shape " + shape_str(shape_));
    return shape_[1];
}

std::span<const double> Tensor::data() const {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

std::span<double> Tensor::mutable_data() {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

std::vector<double> Tensor::to_vector() const {
    return data_ ? *data_ : std::vector<double>{};
}

// --- Tape ---------------------------------------------------------------

Tensor Tape::watch(const Tensor& t) {
    if (!t.defined()) throw ContractError("watch() on undefined tensor");
    if (t.tape_ == this) return t;
    if (t.tape_ != nullptr) throw ContractError("tensor already traced on another tape");
    const void* key = t.data_.get();
    Tensor out = t;
    auto it = watched_.find(key);
    if (it == watched_.end()) {
        int id = record(out, {}, nullptr);
        it = watched_.emplace(key, id).first;
    }
    out.tape_ = this;
    out.node_ = it->second;
    return out;
}

int Tape::record(const Tensor& out, std::vector<int> inputs, BackwardFn bwd) {
    recs_.push_back(Rec{std::move(inputs), out.shape(), std::move(bwd)});
    grads_.emplace_back();
    return static_cast<int>(recs_.size()) - 1;
}

Tensor Tape::emit(Tensor out, std::vector<int> inputs, BackwardFn bwd) {
    int id = record(out, std::move(inputs), std::move(bwd));
    out.tape_ = this;
    out.node_ = id;
    return out;
}

std::vector<double>& Tape::grad_buf(int node) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.empty()) g.assign(shape_numel(recs_[static_cast<size_t>(node)].shape), 0.0);
    return g;
}

bool Tape::grad_live(int node) const { return !grads_[static_cast<size_t>(node)].empty(); }

void Tape::backward(const Tensor& loss) {
    if (!loss.traced() || loss.tape_ != this)
        throw ContractError("backward(): loss was not produced on this tape");
    if (loss.numel() != 1)
        throw ContractError("backward(): loss must be scalar, got shape " + shape_str(loss.shape()));
    if (ran_backward_) throw ContractError("backward() already ran on this tape");
    ran_backward_ = true;
    grad_buf(loss.node_)[0] = 1.0;
    // Tape order is topological, so one reverse sweep visits each node once.
    for (int id = loss.node_; id >= 0; --id) {
        const Rec& rec = recs_[static_cast<size_t>(id)];
        if (!rec.bwd || !grad_live(id)) continue;
        rec.bwd(*this, id);
    }
}

int Tape::node_of(const Tensor& t) const {
    if (t.traced()) return t.tape_ == this ? t.node_ : -1;
    // Untraced handles (e.g. registry copies) resolve through shared storage.
    auto it = watched_.find(static_cast<const void*>(t.data_.get()));
    return it == watched_.end() ? -1 : it->second;
}

Tensor Tape::grad(const Tensor& t) const {
    const int node = node_of(t);
    if (node < 0) throw ContractError("grad(): tensor not on this tape");
    const auto& g = grads_[static_cast<size_t>(node)];
    if (!g.empty()) return Tensor(t.shape(), g);
    return Tensor::zeros(t.shape());
}

bool Tape::has_grad(const Tensor& t) const {
    const int node = node_of(t);
    return node >= 0 && grad_live(node);
}

void Tape::reset() {
    recs_.clear();
    grads_.clear();
    watched_.clear();
    ran_backward_ = false;
}

// --- op helpers ----------------------------------------------------------

namespace {

using Store = std::shared_ptr<std::vector<double>>;

Tape* joint_tape(const Tensor& a, const Tensor& b) {
    Tape* ta = a.tape();
    Tape* tb = b.tape();
    if (ta && tb && ta != tb) throw ContractError("operands belong to different tapes");
    return ta ? ta : tb;
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

void axpy(double a, const double* x, double* y, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* a, const double* b, size_t n) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

// --- matmul ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const size_t m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(m * n, 0.0);
    {
        const double* A = a.data().data();
        const double* B = b.data().data();
        double* C = out.data();
        for (size_t i = 0; i < m; ++i)
            for (size_t p = 0; p < k; ++p) axpy(A[i * k + p], B + p * n, C + i * n, n);
    }
    Tape* tape = joint_tape(a, b);
    if (!tape) return Tensor({m, n}, std::move(out));

    Store sa = a.storage(), sb = b.storage();
    int na = a.traced() ? a.node() : -1;
    int nb = b.traced() ? b.node() : -1;
    return tape->emit(
        Tensor({m, n}, std::move(out)), {na, nb}, [sa, sb, na, nb, m, k, n](Tape& t, int id) {
            const double* G = t.grad_buf(id).data();
            if (na >= 0) {
                // dA[i,p] = sum_j G[i,j] * B[p,j]
                double* GA = t.grad_buf(na).data();
                const double* B = sb->data();
                for (size_t i = 0; i < m; ++i)
                    for (size_t p = 0; p < k; ++p) GA[i * k + p] += dot(G + i * n, B + p * n, n);
            }
            if (nb >= 0) {
                // dB[p,:] += A[i,p] * G[i,:]
                double* GB = t.grad_buf(nb).data();
                const double* A = sa->data();
                for (size_t i = 0; i < m; ++i)
                    for (size_t p = 0; p < k; ++p) axpy(A[i * k + p], G + i * n, GB + p * n, n);
            }
        });
}

// --- elementwise ----------------------------------------------------------

namespace {

enum class EwKind { add, sub, hadamard };

// Supports equal shapes plus scalar-vs-tensor broadcast (numel 1 on one side).
Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b) {
    require_defined(a, "elementwise");
    require_defined(b, "elementwise");
    const bool a_scalar = a.numel() == 1;
    const bool b_scalar = b.numel() == 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape())
        throw DimensionError("elementwise: incompatible shapes " + shape_str(a.shape()) +
                             " and " + shape_str(b.shape()));
    const Tensor& big = (!a_scalar || b_scalar) ? a : b;  // prefer a when both scalar
    const size_t n = big.numel();
    const double* A = a.data().data();
    const double* B = b.data().data();
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) {
        const double x = a_scalar ? A[0] : A[i];
        const double y = b_scalar ? B[0] : B[i];
        out[i] = kind == EwKind::add ? x + y : kind == EwKind::sub ? x - y : x * y;
    }
    Tape* tape = joint_tape(a, b);
    if (!tape) return Tensor(big.shape(), std::move(out));

    Store sa = a.storage(), sb = b.storage();
    int na = a.traced() ? a.node() : -1;
    int nb = b.traced() ? b.node() : -1;
    return tape->emit(Tensor(big.shape(), std::move(out)), {na, nb},
                      [kind, sa, sb, na, nb, a_scalar, b_scalar, n](Tape& t, int id) {
                          const double* G = t.grad_buf(id).data();
                          if (na >= 0) {
                              double* GA = t.grad_buf(na).data();
                              for (size_t i = 0; i < n; ++i) {
                                  double g = G[i];
                                  if (kind == EwKind::hadamard) g *= b_scalar ? (*sb)[0] : (*sb)[i];
                                  GA[a_scalar ? 0 : i] += g;
                              }
                          }
                          if (nb >= 0) {
                              double* GB = t.grad_buf(nb).data();
                              for (size_t i = 0; i < n; ++i) {
                                  double g = G[i];
                                  if (kind == EwKind::sub) g = -g;
                                  if (kind == EwKind::hadamard) g = G[i] * (a_scalar ? (*sa)[0] : (*sa)[i]);
                                  GB[b_scalar ? 0 : i] += g;
                              }
                          }
                      });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwKind::sub, a, b); }
Tensor hadamard(const Tensor& a, const Tensor& b) { return elementwise(EwKind::hadamard, a, b); }

Tensor add(const Tensor& a, double s) {
    require_defined(a, "add");
    const size_t n = a.numel();
    std::vector<double> out(n);
    const double* A = a.data().data();
    for (size_t i = 0; i < n; ++i) out[i] = A[i] + s;
    if (!a.traced()) return Tensor(a.shape(), std::move(out));
    int na = a.node();
    return a.tape()->emit(Tensor(a.shape(), std::move(out)), {na}, [na, n](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        double* GA = t.grad_buf(na).data();
        for (size_t i = 0; i < n; ++i) GA[i] += G[i];
    });
}

Tensor sub(const Tensor& a, double s) { return add(a, -s); }

Tensor sub(double s, const Tensor& a) {
    require_defined(a, "sub");
    const size_t n = a.numel();
    std::vector<double> out(n);
    const double* A = a.data().data();
    for (size_t i = 0; i < n; ++i) out[i] = s - A[i];
    if (!a.traced()) return Tensor(a.shape(), std::move(out));
    int na = a.node();
    return a.tape()->emit(Tensor(a.shape(), std::move(out)), {na}, [na, n](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        double* GA = t.grad_buf(na).data();
        for (size_t i = 0; i < n; ++i) GA[i] -= G[i];
    });
}

Tensor scale(const Tensor& a, double s) {
    require_defined(a, "scale");
    const size_t n = a.numel();
    std::vector<double> out(n);
    const double* A = a.data().data();
    for (size_t i = 0; i < n; ++i) out[i] = A[i] * s;
    if (!a.traced()) return Tensor(a.shape(), std::move(out));
    int na = a.node();
    return a.tape()->emit(Tensor(a.shape(), std::move(out)), {na}, [na, n, s](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        double* GA = t.grad_buf(na).data();
        for (size_t i = 0; i < n; ++i) GA[i] += s * G[i];
    });
}

// --- concat (last axis) ----------------------------------------------------

Tensor concat(const Tensor& a, const Tensor& b) {
    require_defined(a, "concat");
    require_defined(b, "concat");
    if (a.rank() != b.rank() || a.rank() < 1 || a.rank() > 2)
        throw DimensionError("concat: incompatible ranks " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    size_t lead = 1, p, q;
    if (a.rank() == 1) {
        p = a.shape()[0];
        q = b.shape()[0];
    } else {
        if (a.shape()[0] != b.shape()[0])
            throw DimensionError("concat: leading dims differ, " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
        lead = a.shape()[0];
        p = a.shape()[1];
        q = b.shape()[1];
    }
    Shape out_shape = a.rank() == 1 ? Shape{p + q} : Shape{lead, p + q};
    std::vector<double> out(lead * (p + q));
    const double* A = a.data().data();
    const double* B = b.data().data();
    for (size_t r = 0; r < lead; ++r) {
        std::copy(A + r * p, A + (r + 1) * p, out.begin() + static_cast<long>(r * (p + q)));
        std::copy(B + r * q, B + (r + 1) * q, out.begin() + static_cast<long>(r * (p + q) + p));
    }
    Tape* tape = joint_tape(a, b);
    if (!tape) return Tensor(std::move(out_shape), std::move(out));
    int na = a.traced() ? a.node() : -1;
    int nb = b.traced() ? b.node() : -1;
    return tape->emit(Tensor(std::move(out_shape), std::move(out)), {na, nb},
                      [na, nb, lead, p, q](Tape& t, int id) {
                          const double* G = t.grad_buf(id).data();
                          if (na >= 0 && p > 0) {
                              double* GA = t.grad_buf(na).data();
                              for (size_t r = 0; r < lead; ++r)
                                  for (size_t c = 0; c < p; ++c) GA[r * p + c] += G[r * (p + q) + c];
                          }
                          if (nb >= 0 && q > 0) {
                              double* GB = t.grad_buf(nb).data();
                              for (size_t r = 0; r < lead; ++r)
                                  for (size_t c = 0; c < q; ++c) GB[r * q + c] += G[r * (p + q) + p + c];
                          }
                      });
}

// --- softmax ----------------------------------------------------------------

Tensor masked_softmax(const Tensor& v, size_t valid) {
    require_defined(v, "softmax");
    if (v.rank() != 1) throw DimensionError("softmax: expected rank-1 tensor, got " + shape_str(v.shape()));
    const size_t n = v.numel();
    if (n == 0 || valid == 0) throw DomainError("softmax: empty input");
    if (valid > n) throw ContractError("masked_softmax: valid " + std::to_string(valid) +
                                       " exceeds length " + std::to_string(n));
    const double* x = v.data().data();
    double mx = x[0];
    for (size_t i = 1; i < valid; ++i) mx = std::max(mx, x[i]);
    std::vector<double> out(n, 0.0);
    double denom = 0.0;
    for (size_t i = 0; i < valid; ++i) {
        out[i] = std::exp(x[i] - mx);
        denom += out[i];
    }
    for (size_t i = 0; i < valid; ++i) out[i] /= denom;
    if (!v.traced()) return Tensor(v.shape(), std::move(out));
    int nv = v.node();
    Tensor result(v.shape(), std::move(out));
    Store sy = result.storage();
    // dx_s = y_s * (g_s - sum_t y_t g_t), over the valid prefix; padded suffix stays zero.
    return v.tape()->emit(std::move(result), {nv}, [nv, sy, valid](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        const double* y = sy->data();
        double acc = 0.0;
        for (size_t s = 0; s < valid; ++s) acc += y[s] * G[s];
        double* GV = t.grad_buf(nv).data();
        for (size_t s = 0; s < valid; ++s) GV[s] += y[s] * (G[s] - acc);
    });
}

Tensor softmax(const Tensor& v) { return masked_softmax(v, v.numel()); }

// --- pointwise nonlinearities ------------------------------------------------

namespace {

enum class NlKind { sigmoid, elu, tanh_k };

double nl_forward(NlKind k, double x) {
    switch (k) {
        case NlKind::sigmoid:
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        case NlKind::elu:
            return x >= 0.0 ? x : std::expm1(x);
        case NlKind::tanh_k:
            return std::tanh(x);
    }
    return 0.0;
}

double nl_backward(NlKind k, double x, double y) {
    switch (k) {
        case NlKind::sigmoid:
            return y * (1.0 - y);
        case NlKind::elu:
            return x >= 0.0 ? 1.0 : y + 1.0;
        case NlKind::tanh_k:
            return 1.0 - y * y;
    }
    return 0.0;
}

Tensor nonlinear(NlKind kind, const Tensor& x) {
    require_defined(x, "nonlinear");
    const size_t n = x.numel();
    std::vector<double> out(n);
    const double* X = x.data().data();
    for (size_t i = 0; i < n; ++i) out[i] = nl_forward(kind, X[i]);
    if (!x.traced()) return Tensor(x.shape(), std::move(out));
    int nx = x.node();
    Store sx = x.storage();
    Tensor result(x.shape(), std::move(out));
    Store sy = result.storage();
    return x.tape()->emit(std::move(result), {nx}, [kind, nx, sx, sy, n](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        double* GX = t.grad_buf(nx).data();
        const double* X = sx->data();
        const double* Y = sy->data();
        for (size_t i = 0; i < n; ++i) GX[i] += G[i] * nl_backward(kind, X[i], Y[i]);
    });
}

}  // namespace

Tensor sigmoid(const Tensor& x) { return nonlinear(NlKind::sigmoid, x); }
Tensor elu(const Tensor& x) { return nonlinear(NlKind::elu, x); }
Tensor tanh(const Tensor& x) { return nonlinear(NlKind::tanh_k, x); }

// --- structural ops -----------------------------------------------------------

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    require_defined(table, "gather_rows");
    if (table.rank() != 2) throw DimensionError("gather_rows: table must be rank 2");
    const size_t v = table.rows(), e = table.cols(), s = ids.size();
    for (int id : ids)
        if (id < 0 || static_cast<size_t>(id) >= v)
            throw VocabError("gather_rows: id " + std::to_string(id) + " outside table of " +
                             std::to_string(v) + " rows");
    std::vector<double> out(s * e);
    const double* T = table.data().data();
    for (size_t r = 0; r < s; ++r)
        std::copy(T + static_cast<size_t>(ids[r]) * e, T + (static_cast<size_t>(ids[r]) + 1) * e,
                  out.begin() + static_cast<long>(r * e));
    if (!table.traced()) return Tensor({s, e}, std::move(out));
    int nt = table.node();
    return table.tape()->emit(Tensor({s, e}, std::move(out)), {nt}, [nt, ids, e](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        double* GT = t.grad_buf(nt).data();
        for (size_t r = 0; r < ids.size(); ++r)
            axpy(1.0, G + r * e, GT + static_cast<size_t>(ids[r]) * e, e);
    });
}

Tensor slice_rows(const Tensor& x, size_t r0, size_t r1) {
    require_defined(x, "slice_rows");
    if (x.rank() != 2 || r0 > r1 || r1 > x.rows())
        throw DimensionError("slice_rows: bad range [" + std::to_string(r0) + "," +
                             std::to_string(r1) + ") for " + shape_str(x.shape()));
    const size_t c = x.cols(), m = r1 - r0;
    std::vector<double> out(m * c);
    const double* X = x.data().data();
    std::copy(X + r0 * c, X + r1 * c, out.begin());
    if (!x.traced()) return Tensor({m, c}, std::move(out));
    int nx = x.node();
    return x.tape()->emit(Tensor({m, c}, std::move(out)), {nx}, [nx, r0, m, c](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        double* GX = t.grad_buf(nx).data();
        axpy(1.0, G, GX + r0 * c, m * c);
    });
}

Tensor slice_cols(const Tensor& x, size_t c0, size_t c1) {
    require_defined(x, "slice_cols");
    if (x.rank() != 2 || c0 > c1 || c1 > x.cols())
        throw DimensionError("slice_cols: bad range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") for " + shape_str(x.shape()));
    const size_t n = x.rows(), c = x.cols(), w = c1 - c0;
    std::vector<double> out(n * w);
    const double* X = x.data().data();
    for (size_t r = 0; r < n; ++r)
        std::copy(X + r * c + c0, X + r * c + c1, out.begin() + static_cast<long>(r * w));
    if (!x.traced()) return Tensor({n, w}, std::move(out));
    int nx = x.node();
    return x.tape()->emit(Tensor({n, w}, std::move(out)), {nx}, [nx, c0, n, c, w](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        double* GX = t.grad_buf(nx).data();
        for (size_t r = 0; r < n; ++r) axpy(1.0, G + r * w, GX + r * c + c0, w);
    });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ContractError("stack_rows: no rows");
    size_t c = rows[0].numel();
    Tape* tape = nullptr;
    for (const auto& r : rows) {
        require_defined(r, "stack_rows");
        if (r.rank() > 2 || (r.rank() == 2 && r.rows() != 1) || r.numel() != c)
            throw DimensionError("stack_rows: row of shape " + shape_str(r.shape()) +
                                 " does not fit width " + std::to_string(c));
        if (r.traced()) {
            if (tape && r.tape() != tape) throw ContractError("stack_rows: rows on different tapes");
            tape = r.tape();
        }
    }
    const size_t n = rows.size();
    std::vector<double> out(n * c);
    for (size_t r = 0; r < n; ++r) {
        auto d = rows[r].data();
        std::copy(d.begin(), d.end(), out.begin() + static_cast<long>(r * c));
    }
    if (!tape) return Tensor({n, c}, std::move(out));
    std::vector<int> ids(n, -1);
    for (size_t r = 0; r < n; ++r) ids[r] = rows[r].traced() ? rows[r].node() : -1;
    auto ids_copy = ids;
    return tape->emit(Tensor({n, c}, std::move(out)), std::move(ids),
                      [ids_copy, c](Tape& t, int id) {
                          const double* G = t.grad_buf(id).data();
                          for (size_t r = 0; r < ids_copy.size(); ++r)
                              if (ids_copy[r] >= 0) axpy(1.0, G + r * c, t.grad_buf(ids_copy[r]).data(), c);
                      });
}

Tensor broadcast_rows(const Tensor& row, size_t n) {
    require_defined(row, "broadcast_rows");
    if (row.rank() > 2 || (row.rank() == 2 && row.rows() != 1))
        throw DimensionError("broadcast_rows: expected a single row, got " + shape_str(row.shape()));
    const size_t c = row.numel();
    std::vector<double> out(n * c);
    auto d = row.data();
    for (size_t r = 0; r < n; ++r) std::copy(d.begin(), d.end(), out.begin() + static_cast<long>(r * c));
    if (!row.traced()) return Tensor({n, c}, std::move(out));
    int nr = row.node();
    return row.tape()->emit(Tensor({n, c}, std::move(out)), {nr}, [nr, n, c](Tape& t, int id) {
        const double* G = t.grad_buf(id).data();
        double* GR = t.grad_buf(nr).data();
        for (size_t r = 0; r < n; ++r) axpy(1.0, G + r * c, GR, c);
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    require_defined(x, "reshape");
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    Tensor out(shape, x.to_vector());
    if (!x.traced()) return out;
    int nx = x.node();
    size_t n = x.numel();
    return x.tape()->emit(std::move(out), {nx}, [nx, n](Tape& t, int id) {
        axpy(1.0, t.grad_buf(id).data(), t.grad_buf(nx).data(), n);
    });
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    double s = 0.0;
    for (double v : x.data()) s += v;
    if (!x.traced()) return Tensor::scalar(s);
    int nx = x.node();
    size_t n = x.numel();
    return x.tape()->emit(Tensor::scalar(s), {nx}, [nx, n](Tape& t, int id) {
        const double g = t.grad_buf(id)[0];
        double* GX = t.grad_buf(nx).data();
        for (size_t i = 0; i < n; ++i) GX[i] += g;
    });
}

Tensor cross_entropy_logits(const Tensor& logits, size_t target) {
    require_defined(logits, "cross_entropy_logits");
    if (logits.rank() > 2 || (logits.rank() == 2 && logits.rows() != 1))
        throw DimensionError("cross_entropy_logits: expected a logit row, got " + shape_str(logits.shape()));
    const size_t a = logits.numel();
    if (target >= a) throw ContractError("cross_entropy_logits: target " + std::to_string(target) +
                                         " out of range " + std::to_string(a));
    const double* z = logits.data().data();
    double mx = z[0];
    for (size_t i = 1; i < a; ++i) mx = std::max(mx, z[i]);
    double denom = 0.0;
    for (size_t i = 0; i < a; ++i) denom += std::exp(z[i] - mx);
    const double loss = std::log(denom) + mx - z[target];
    if (!logits.traced()) return Tensor::scalar(loss);
    int nz = logits.node();
    Store sz = logits.storage();
    return logits.tape()->emit(Tensor::scalar(loss), {nz},
                               [nz, sz, target, a, mx, denom](Tape& t, int id) {
                                   const double g = t.grad_buf(id)[0];
                                   double* GZ = t.grad_buf(nz).data();
                                   const double* z = sz->data();
                                   for (size_t i = 0; i < a; ++i) {
                                       double p = std::exp(z[i] - mx) / denom;
                                       GZ[i] += g * (p - (i == target ? 1.0 : 0.0));
                                   }
                               });
}

double item(const Tensor& t) {
    if (t.numel() != 1) throw ContractError("item(): tensor has " + std::to_string(t.numel()) + " elements");
    return t.at(0);
}

bool all_finite(const Tensor& t) {
    for (double v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace macnet

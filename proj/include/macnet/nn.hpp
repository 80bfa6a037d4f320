#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "macnet/tensor.hpp"

namespace macnet {

// Ordered registry of named trainable tensors. Registration order is the
// canonical parameter order for optimizers, EMA shadows, and checkpoints.
// Entries share storage with the layer objects, so in-place updates through
// either side are visible to both.
class ParamRegistry {
  public:
    Tensor add(const std::string& name, Tensor t);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    size_t size() const { return params_.size(); }
    const std::string& name(size_t i) const { return names_[i]; }
    const Tensor& param(size_t i) const { return params_[i]; }
    Tensor& param(size_t i) { return params_[i]; }
    size_t total_scalars() const;

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> params_;
    std::unordered_map<std::string, size_t> index_;
};

double uniform(std::mt19937_64& rng, double lo, double hi);

// Fan-based uniform init, limit sqrt(6/(in+out)), shaped [in×out].
Tensor xavier_uniform(size_t in, size_t out, std::mt19937_64& rng);

// Affine map x[n×in] -> x·W + b. W is stored input-major ([in×out]) so the
// forward pass is a plain row-major matmul.
struct Linear {
    Tensor W;  // [in×out]
    Tensor b;  // [out]

    static Linear create(ParamRegistry& reg, const std::string& prefix, size_t in, size_t out,
                         std::mt19937_64& rng);
    Tensor forward(const Tensor& x, Tape* tape) const;
    size_t in_dim() const { return W.shape()[0]; }
    size_t out_dim() const { return W.shape()[1]; }
};

struct Embedding {
    Tensor table;  // [V×dim]

    static Embedding create(ParamRegistry& reg, const std::string& prefix, size_t vocab,
                            size_t dim, std::mt19937_64& rng);
    // Rows of `table` selected by token id; [S×dim].
    Tensor forward(const std::vector<int>& tokens, Tape* tape) const;
};

// One direction of an LSTM. Gate order along the 4h axis: input, forget,
// candidate, output. Forget-gate bias starts at +1.
struct LstmDirection {
    Tensor Wx;  // [emb×4h]
    Tensor Wh;  // [h×4h]
    Tensor b;   // [4h]
};

struct BiLstm {
    size_t hidden = 0;  // per direction; output dimension is 2*hidden
    LstmDirection fwd;
    LstmDirection bwd;

    // d must be even: each direction carries d/2.
    static BiLstm create(ParamRegistry& reg, const std::string& prefix, size_t emb_dim, size_t d,
                         std::mt19937_64& rng);
    // Returns (cw [S×d], q [1×d]). cw_s concatenates the forward state at s
    // with the backward state at s; q concatenates the backward pass's final
    // state (position 1) with the forward pass's final state (position S).
    std::pair<Tensor, Tensor> forward(const Tensor& emb, Tape* tape,
                                      const Tensor* recurrent_mask = nullptr) const;
};

// Variational dropout: one mask per forward pass, reused at every position it
// covers. Values are 0 or 1/keep (inverted scaling).
struct DropoutMask {
    double keep = 1.0;
    Tensor mask;  // [dim]

    static DropoutMask draw(size_t dim, double keep, std::mt19937_64& rng);
};

// training && keep<1 -> x ⊙ mask (broadcast over rows); otherwise identity.
Tensor dropout_apply(const Tensor& x, const DropoutMask& mask, bool training);

}  // namespace macnet

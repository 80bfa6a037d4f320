#include "macnet/nn.hpp"

#include <cmath>

namespace macnet {

Tensor ParamRegistry::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("parameter registered twice: " + name);
    if (!t.defined()) throw ContractError("parameter " + name + " is undefined");
    index_.emplace(name, params_.size());
    names_.push_back(name);
    params_.push_back(t);
    return t;
}

const Tensor& ParamRegistry::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return params_[it->second];
}

size_t ParamRegistry::total_scalars() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Tensor xavier_uniform(size_t in, size_t out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::vector<double> w(in * out);
    for (auto& v : w) v = uniform(rng, -limit, limit);
    return Tensor({in, out}, std::move(w));
}

Linear Linear::create(ParamRegistry& reg, const std::string& prefix, size_t in, size_t out,
                      std::mt19937_64& rng) {
    Linear l;
    l.W = reg.add(prefix + ".W", xavier_uniform(in, out, rng));
    l.b = reg.add(prefix + ".b", Tensor::zeros({out}));
    return l;
}

Tensor Linear::forward(const Tensor& x, Tape* tape) const {
    if (x.rank() != 2 || x.cols() != in_dim())
        throw DimensionError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                             shape_str(W.shape()));
    Tensor w = tape ? tape->watch(W) : W;
    Tensor bias = tape ? tape->watch(b) : b;
    return add(matmul(x, w), broadcast_rows(bias, x.rows()));
}

Embedding Embedding::create(ParamRegistry& reg, const std::string& prefix, size_t vocab,
                            size_t dim, std::mt19937_64& rng) {
    std::vector<double> w(vocab * dim);
    for (auto& v : w) v = uniform(rng, -1.0, 1.0);
    Embedding e;
    e.table = reg.add(prefix + ".table", Tensor({vocab, dim}, std::move(w)));
    return e;
}

Tensor Embedding::forward(const std::vector<int>& tokens, Tape* tape) const {
    Tensor t = tape ? tape->watch(table) : table;
    return gather_rows(t, tokens);
}

BiLstm BiLstm::create(ParamRegistry& reg, const std::string& prefix, size_t emb_dim, size_t d,
                      std::mt19937_64& rng) {
    if (d % 2 != 0) throw ConfigError("bilstm requires an even state dimension, got " + std::to_string(d));
    BiLstm l;
    l.hidden = d / 2;
    auto make_dir = [&](const std::string& dir) {
        LstmDirection p;
        p.Wx = reg.add(prefix + "." + dir + ".Wx", xavier_uniform(emb_dim, 4 * l.hidden, rng));
        p.Wh = reg.add(prefix + "." + dir + ".Wh", xavier_uniform(l.hidden, 4 * l.hidden, rng));
        std::vector<double> bias(4 * l.hidden, 0.0);
        for (size_t i = l.hidden; i < 2 * l.hidden; ++i) bias[i] = 1.0;  // forget gate
        p.b = reg.add(prefix + "." + dir + ".b", Tensor::vec(std::move(bias)));
        return p;
    };
    l.fwd = make_dir("fwd");
    l.bwd = make_dir("bwd");
    return l;
}

namespace {

// Runs one LSTM direction over the row order given by `order`; returns hidden
// states indexed by sequence position (not visit order).
std::vector<Tensor> run_direction(const LstmDirection& dir, size_t hidden, const Tensor& emb,
                                  const std::vector<size_t>& order, Tape* tape,
                                  const Tensor* recurrent_mask) {
    Tensor Wx = tape ? tape->watch(dir.Wx) : dir.Wx;
    Tensor Wh = tape ? tape->watch(dir.Wh) : dir.Wh;
    Tensor b = tape ? tape->watch(dir.b) : dir.b;
    Tensor rm;
    if (recurrent_mask) rm = reshape(*recurrent_mask, {1, hidden});
    Tensor h = Tensor::zeros({1, hidden});
    Tensor c = Tensor::zeros({1, hidden});
    std::vector<Tensor> states(order.size());
    for (size_t s : order) {
        Tensor x = slice_rows(emb, s, s + 1);
        Tensor h_in = rm.defined() ? hadamard(h, rm) : h;
        Tensor a = add(add(matmul(x, Wx), matmul(h_in, Wh)), reshape(b, {1, 4 * hidden}));
        Tensor gi = sigmoid(slice_cols(a, 0, hidden));
        Tensor gf = sigmoid(slice_cols(a, hidden, 2 * hidden));
        Tensor gg = tanh(slice_cols(a, 2 * hidden, 3 * hidden));
        Tensor go = sigmoid(slice_cols(a, 3 * hidden, 4 * hidden));
        c = add(hadamard(gf, c), hadamard(gi, gg));
        h = hadamard(go, tanh(c));
        states[s] = h;
    }
    return states;
}

}  // namespace

std::pair<Tensor, Tensor> BiLstm::forward(const Tensor& emb, Tape* tape,
                                          const Tensor* recurrent_mask) const {
    if (emb.rank() != 2 || emb.rows() == 0)
        throw ContractError("bilstm: expected a nonempty [SxE] input, got " + shape_str(emb.shape()));
    const size_t S = emb.rows();
    std::vector<size_t> fwd_order(S), bwd_order(S);
    for (size_t s = 0; s < S; ++s) {
        fwd_order[s] = s;
        bwd_order[s] = S - 1 - s;
    }
    auto hf = run_direction(fwd, hidden, emb, fwd_order, tape, recurrent_mask);
    auto hb = run_direction(bwd, hidden, emb, bwd_order, tape, recurrent_mask);
    std::vector<Tensor> rows(S);
    for (size_t s = 0; s < S; ++s) rows[s] = concat(hf[s], hb[s]);
    Tensor cw = stack_rows(rows);
    Tensor q = concat(hb[0], hf[S - 1]);  // each direction's final state
    return {cw, q};
}

DropoutMask DropoutMask::draw(size_t dim, double keep, std::mt19937_64& rng) {
    if (keep <= 0.0 || keep > 1.0)
        throw ConfigError("dropout keep probability must be in (0,1], got " + std::to_string(keep));
    DropoutMask m;
    m.keep = keep;
    std::vector<double> vals(dim, 1.0);
    if (keep < 1.0) {
        std::bernoulli_distribution coin(keep);
        for (auto& v : vals) v = coin(rng) ? 1.0 / keep : 0.0;
    }
    m.mask = Tensor::vec(std::move(vals));
    return m;
}

Tensor dropout_apply(const Tensor& x, const DropoutMask& mask, bool training) {
    if (!training || mask.keep >= 1.0) return x;
    const size_t dim = mask.mask.numel();
    if (x.rank() == 1) {
        if (x.numel() != dim)
            throw DimensionError("dropout: mask of width " + std::to_string(dim) +
                                 " against input " + shape_str(x.shape()));
        return hadamard(x, mask.mask);
    }
    if (x.rank() != 2 || x.cols() != dim)
        throw DimensionError("dropout: mask of width " + std::to_string(dim) + " against input " +
                             shape_str(x.shape()));
    return hadamard(x, broadcast_rows(mask.mask, x.rows()));
}

}  // namespace macnet

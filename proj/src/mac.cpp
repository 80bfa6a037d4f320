#include "macnet/mac.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace macnet {

namespace {

const std::vector<std::pair<std::string, ControlVariant>>& control_names() {
    static const std::vector<std::pair<std::string, ControlVariant>> m = {
        {"word_attention", ControlVariant::word_attention},
        {"word_vectors", ControlVariant::word_vectors},
        {"question_vector", ControlVariant::question_vector},
        {"none", ControlVariant::none},
    };
    return m;
}

const std::vector<std::pair<std::string, WriteVariant>>& write_names() {
    static const std::vector<std::pair<std::string, WriteVariant>> m = {
        {"linear", WriteVariant::linear},
        {"retrieved_direct", WriteVariant::retrieved_direct},
        {"retrieved_affine", WriteVariant::retrieved_affine},
        {"gate_only", WriteVariant::gate_only},
    };
    return m;
}

}  // namespace

ControlVariant control_variant_from(const std::string& s) {
    for (const auto& [name, v] : control_names())
        if (name == s) return v;
    throw ConfigError("unknown control variant: " + s);
}

WriteVariant write_variant_from(const std::string& s) {
    for (const auto& [name, v] : write_names())
        if (name == s) return v;
    throw ConfigError("unknown write variant: " + s);
}

const std::string& to_string(ControlVariant v) {
    for (const auto& [name, u] : control_names())
        if (u == v) return name;
    throw ConfigError("bad control variant value");
}

const std::string& to_string(WriteVariant v) {
    for (const auto& [name, u] : write_names())
        if (u == v) return name;
    throw ConfigError("bad write variant value");
}

void MacConfig::validate() const {
    if (d < 2 || d % 2 != 0)
        throw ConfigError("state dimension must be even and at least 2, got " + std::to_string(d));
    if (p < 1) throw ConfigError("cell count must be at least 1, got " + std::to_string(p));
    if (!(dropout_keep > 0.0 && dropout_keep <= 1.0))
        throw ConfigError("dropout keep probability must lie in (0,1], got " +
                          std::to_string(dropout_keep));
    if (!std::isfinite(gate_bias)) throw ConfigError("gate bias must be finite");
}

std::string config_text(const MacConfig& cfg) {
    auto fmt = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    auto yn = [](bool b) { return b ? "true" : "false"; };
    std::string out;
    out += "control_variant=" + to_string(cfg.control_variant) + "\n";
    out += "d=" + std::to_string(cfg.d) + "\n";
    out += "direct_kb_in_read=" + std::string(yn(cfg.direct_kb_in_read)) + "\n";
    out += "dropout_kb=" + std::string(yn(cfg.dropout_kb)) + "\n";
    out += "dropout_keep=" + fmt(cfg.dropout_keep) + "\n";
    out += "dropout_lstm_recurrent=" + std::string(yn(cfg.dropout_lstm_recurrent)) + "\n";
    out += "dropout_memory=" + std::string(yn(cfg.dropout_memory)) + "\n";
    out += "dropout_words=" + std::string(yn(cfg.dropout_words)) + "\n";
    out += "gate_bias=" + fmt(cfg.gate_bias) + "\n";
    out += "p=" + std::to_string(cfg.p) + "\n";
    out += "predict_with_question=" + std::string(yn(cfg.predict_with_question)) + "\n";
    out += "share_weights=" + std::string(yn(cfg.share_weights)) + "\n";
    out += "use_memory_gate=" + std::string(yn(cfg.use_memory_gate)) + "\n";
    out += "use_self_attention=" + std::string(yn(cfg.use_self_attention)) + "\n";
    out += "write_variant=" + to_string(cfg.write_variant) + "\n";
    return out;
}

// --- parameter construction ---------------------------------------------------

namespace {

bool control_attends(ControlVariant v) {
    return v == ControlVariant::word_attention || v == ControlVariant::word_vectors;
}

bool write_gated(const MacConfig& cfg) {
    return cfg.write_variant == WriteVariant::gate_only ||
           (cfg.write_variant == WriteVariant::linear && cfg.use_memory_gate);
}

CellParams make_cell(ParamRegistry& reg, const std::string& prefix, const MacConfig& cfg,
                     std::mt19937_64& rng) {
    const size_t d = cfg.d;
    CellParams c;
    if (control_attends(cfg.control_variant)) {
        c.cq = Linear::create(reg, prefix + ".control.cq", 2 * d, d, rng);
        c.ca = Linear::create(reg, prefix + ".control.ca", d, 1, rng);
    }
    c.r_m = Linear::create(reg, prefix + ".read.m", d, d, rng);
    c.r_k = Linear::create(reg, prefix + ".read.k", d, d, rng);
    c.r_int = Linear::create(reg, prefix + ".read.int", cfg.direct_kb_in_read ? 2 * d : d, d, rng);
    c.r_a = Linear::create(reg, prefix + ".read.score", d, 1, rng);
    if (cfg.write_variant == WriteVariant::linear) {
        c.w_info = Linear::create(reg, prefix + ".write.info", 2 * d, d, rng);
        if (cfg.use_self_attention) {
            c.w_sa = Linear::create(reg, prefix + ".write.sa", d, 1, rng);
            c.w_s_W = reg.add(prefix + ".write.merge_sa.W", xavier_uniform(d, d, rng));
            c.w_p = Linear::create(reg, prefix + ".write.merge_info", d, d, rng);
        }
    } else if (cfg.write_variant == WriteVariant::retrieved_affine) {
        c.w_ret = Linear::create(reg, prefix + ".write.ret", d, d, rng);
    }
    if (write_gated(cfg)) c.w_gate = Linear::create(reg, prefix + ".write.gate", d, 1, rng);
    return c;
}

}  // namespace

MacParams MacParams::create(const MacConfig& cfg, size_t vocab_words, size_t n_answers,
                            uint64_t seed) {
    cfg.validate();
    if (vocab_words < 2) throw ConfigError("word vocabulary too small");
    if (n_answers < 2) throw ConfigError("answer vocabulary too small");
    std::mt19937_64 rng(seed);
    MacParams p;
    p.cfg = cfg;
    p.words = Embedding::create(p.reg, "input.words", vocab_words, kWordDim, rng);
    p.lstm = BiLstm::create(p.reg, "input.lstm", kWordDim, cfg.d, rng);
    p.q_proj.reserve(cfg.p);
    for (size_t i = 1; i <= cfg.p; ++i)
        p.q_proj.push_back(Linear::create(p.reg, "input.q_proj." + std::to_string(i), cfg.d, cfg.d, rng));
    if (cfg.control_variant == ControlVariant::word_vectors)
        p.word_proj = Linear::create(p.reg, "input.word_proj", kWordDim, cfg.d, rng);
    {
        std::vector<double> e(kCellFeatureDim);
        for (auto& v : e) v = uniform(rng, -1.0, 1.0);
        p.stem_empty = p.reg.add("input.stem.empty", Tensor::vec(std::move(e)));
    }
    p.stem1 = Linear::create(p.reg, "input.stem.l1", kCellFeatureDim + 2, cfg.d, rng);
    p.stem2 = Linear::create(p.reg, "input.stem.l2", cfg.d, cfg.d, rng);
    if (cfg.share_weights) {
        p.cells.push_back(make_cell(p.reg, "cell.shared", cfg, rng));
    } else {
        for (size_t i = 1; i <= cfg.p; ++i)
            p.cells.push_back(make_cell(p.reg, "cell." + std::to_string(i), cfg, rng));
    }
    p.out1 = Linear::create(p.reg, "output.l1", cfg.predict_with_question ? 2 * cfg.d : cfg.d,
                            cfg.d, rng);
    p.out2 = Linear::create(p.reg, "output.l2", cfg.d, n_answers, rng);
    p.c0 = p.reg.add("state.c0", Tensor::zeros({cfg.d}));
    p.m0 = p.reg.add("state.m0", Tensor::zeros({cfg.d}));
    return p;
}

const CellParams& MacParams::cell(size_t step) const {
    if (step < 1 || step > cfg.p)
        throw ContractError("cell step " + std::to_string(step) + " outside 1.." + std::to_string(cfg.p));
    return cells[cfg.share_weights ? 0 : step - 1];
}

DropoutPack DropoutPack::draw(const MacConfig& cfg, std::mt19937_64& rng) {
    DropoutPack d;
    d.training = true;
    d.words = DropoutMask::draw(kWordDim, cfg.dropout_words ? cfg.dropout_keep : 1.0, rng);
    d.kb = DropoutMask::draw(cfg.d, cfg.dropout_kb ? cfg.dropout_keep : 1.0, rng);
    d.memory = DropoutMask::draw(cfg.d, cfg.dropout_memory ? cfg.dropout_keep : 1.0, rng);
    d.use_lstm_rec = cfg.dropout_lstm_recurrent;
    d.lstm_rec = DropoutMask::draw(cfg.d / 2, d.use_lstm_rec ? cfg.dropout_keep : 1.0, rng);
    return d;
}

// --- units ------------------------------------------------------------------------

Tensor build_knowledge_base(const Scene& scene, const MacParams& params, Tape* tape,
                            const DropoutPack* drop) {
    scene.validate();
    const int H = scene.grid_size;
    std::vector<int> occupant(static_cast<size_t>(H) * static_cast<size_t>(H), -1);
    for (size_t i = 0; i < scene.objects.size(); ++i)
        occupant[static_cast<size_t>(scene.objects[i].row * H + scene.objects[i].col)] =
            static_cast<int>(i);

    auto offset_of = [](const std::vector<std::string>& vals, const std::string& v) {
        auto it = std::find(vals.begin(), vals.end(), v);
        if (it == vals.end()) throw SceneError("attribute value outside vocabulary: " + v);
        return static_cast<size_t>(it - vals.begin());
    };

    Tensor empty_row;
    if (std::any_of(occupant.begin(), occupant.end(), [](int o) { return o < 0; })) {
        Tensor e = tape ? tape->watch(params.stem_empty) : params.stem_empty;
        empty_row = reshape(e, {1, kCellFeatureDim});
    }
    std::vector<Tensor> rows;
    rows.reserve(occupant.size());
    for (int h = 0; h < H; ++h) {
        const double ramp_h = -1.0 + 2.0 * h / (H - 1);
        for (int w = 0; w < H; ++w) {
            const double ramp_w = -1.0 + 2.0 * w / (H - 1);
            Tensor pos = Tensor::row({ramp_h, ramp_w});
            const int oi = occupant[static_cast<size_t>(h * H + w)];
            if (oi < 0) {
                rows.push_back(concat(empty_row, pos));
            } else {
                const SceneObject& o = scene.objects[static_cast<size_t>(oi)];
                std::vector<double> f(kCellFeatureDim, 0.0);
                f[offset_of(attr::shapes, o.shape)] = 1.0;
                f[3 + offset_of(attr::colors, o.color)] = 1.0;
                f[9 + offset_of(attr::sizes, o.size)] = 1.0;
                f[11 + offset_of(attr::materials, o.material)] = 1.0;
                rows.push_back(concat(Tensor({1, kCellFeatureDim}, std::move(f)), pos));
            }
        }
    }
    Tensor K = elu(params.stem2.forward(elu(params.stem1.forward(stack_rows(rows), tape)), tape));
    if (drop && drop->training) K = dropout_apply(K, drop->kb, true);
    return K;
}

Tensor position_aware_question(const MacParams& params, const Tensor& q, size_t step, Tape* tape) {
    if (step < 1 || step > params.cfg.p)
        throw ContractError("question projection step " + std::to_string(step) + " outside 1.." +
                            std::to_string(params.cfg.p));
    return params.q_proj[step - 1].forward(q, tape);
}

ControlOut control_unit(const CellParams& cell, ControlVariant variant, const Tensor& c_prev,
                        const Tensor& q_i, const Tensor& attended, Tape* tape) {
    if (variant == ControlVariant::question_vector) return {q_i, Tensor()};
    if (variant == ControlVariant::none) return {Tensor::zeros(q_i.shape()), Tensor()};
    if (!attended.defined() || attended.rank() != 2 || attended.rows() == 0)
        throw ContractError("control unit needs at least one word to attend over");
    const size_t S = attended.rows();
    Tensor cq = cell.cq.forward(concat(c_prev, q_i), tape);
    Tensor inter = hadamard(broadcast_rows(cq, S), attended);
    Tensor cv = softmax(reshape(cell.ca.forward(inter, tape), {S}));
    Tensor c = matmul(reshape(cv, {1, S}), attended);
    return {c, cv};
}

ReadOut read_unit(const CellParams& cell, bool direct_kb, const Tensor& m_prev, const Tensor& K,
                  const Tensor& c_i, Tape* tape) {
    const size_t HW = K.rows();
    Tensor m_proj = cell.r_m.forward(m_prev, tape);
    Tensor k_proj = cell.r_k.forward(K, tape);
    Tensor inter = hadamard(broadcast_rows(m_proj, HW), k_proj);
    Tensor merged = direct_kb ? cell.r_int.forward(concat(inter, K), tape)
                              : cell.r_int.forward(inter, tape);
    Tensor scores = cell.r_a.forward(hadamard(broadcast_rows(c_i, HW), merged), tape);
    Tensor rv = softmax(reshape(scores, {HW}));
    Tensor r = matmul(reshape(rv, {1, HW}), K);
    return {r, rv};
}

WriteOut write_unit(const CellParams& cell, const MacConfig& cfg, const Tensor& r_i,
                    const Tensor& m_prev, const Tensor& c_i, const std::vector<Tensor>& hist_c,
                    const std::vector<Tensor>& hist_m, Tape* tape) {
    if (hist_c.size() != hist_m.size())
        throw ContractError("write unit history lists disagree: " + std::to_string(hist_c.size()) +
                            " controls vs " + std::to_string(hist_m.size()) + " memories");
    WriteOut out;
    switch (cfg.write_variant) {
        case WriteVariant::retrieved_direct:
            out.m_candidate = r_i;
            out.m = r_i;
            return out;
        case WriteVariant::retrieved_affine:
            out.m_candidate = cell.w_ret.forward(r_i, tape);
            out.m = out.m_candidate;
            return out;
        case WriteVariant::gate_only:
            out.m_candidate = r_i;
            break;
        case WriteVariant::linear: {
            Tensor m_info = cell.w_info.forward(concat(r_i, m_prev), tape);
            if (cfg.use_self_attention) {
                if (!hist_c.empty()) {
                    const size_t n = hist_c.size();
                    Tensor prior_c = stack_rows(hist_c);
                    Tensor inter = hadamard(broadcast_rows(c_i, n), prior_c);
                    Tensor sa = softmax(reshape(cell.w_sa.forward(inter, tape), {n}));
                    Tensor m_sa = matmul(reshape(sa, {1, n}), stack_rows(hist_m));
                    Tensor ws = tape ? tape->watch(cell.w_s_W) : cell.w_s_W;
                    out.m_candidate = add(matmul(m_sa, ws), cell.w_p.forward(m_info, tape));
                    out.sa = sa;
                } else {
                    out.m_candidate = cell.w_p.forward(m_info, tape);  // empty history: m_sa = 0
                }
            } else {
                out.m_candidate = m_info;
            }
            break;
        }
    }
    if (write_gated(cfg)) {
        Tensor logit = add(cell.w_gate.forward(c_i, tape), cfg.gate_bias);
        out.gate = sigmoid(logit);
        out.m = add(hadamard(m_prev, out.gate), hadamard(out.m_candidate, sub(1.0, out.gate)));
    } else {
        out.m = out.m_candidate;
    }
    return out;
}

Tensor output_unit(const MacParams& params, const Tensor& q, const Tensor& m_p, Tape* tape) {
    Tensor in = params.cfg.predict_with_question ? concat(q, m_p) : m_p;
    return params.out2.forward(elu(params.out1.forward(in, tape)), tape);
}

ForwardResult network_forward(const std::vector<int>& tokens, size_t length, const Scene& scene,
                              const MacParams& params, Tape* tape, const DropoutPack* drop,
                              bool with_trace) {
    const MacConfig& cfg = params.cfg;
    if (length == 0) throw ContractError("question must contain at least one token");
    if (length > tokens.size())
        throw ContractError("valid length " + std::to_string(length) + " exceeds token row of " +
                            std::to_string(tokens.size()));
    const bool training = drop && drop->training;

    std::vector<int> ids(tokens.begin(), tokens.begin() + static_cast<long>(length));
    Tensor emb = params.words.forward(ids, tape);
    if (training) emb = dropout_apply(emb, drop->words, true);
    const Tensor* rec_mask = training && drop->use_lstm_rec ? &drop->lstm_rec.mask : nullptr;
    auto [cw, q] = params.lstm.forward(emb, tape, rec_mask);
    Tensor attended = cfg.control_variant == ControlVariant::word_vectors
                          ? params.word_proj.forward(emb, tape)
                          : cw;
    Tensor K = build_knowledge_base(scene, params, tape, drop);

    Tensor c = reshape(tape ? tape->watch(params.c0) : params.c0, {1, cfg.d});
    Tensor m = reshape(tape ? tape->watch(params.m0) : params.m0, {1, cfg.d});
    ForwardResult res;
    if (with_trace) {
        res.trace.c0 = c.to_vector();
        res.trace.m0 = m.to_vector();
    }
    std::vector<Tensor> hist_c, hist_m;
    for (size_t i = 1; i <= cfg.p; ++i) {
        const CellParams& cell = params.cell(i);
        Tensor q_i = position_aware_question(params, q, i, tape);
        ControlOut co = control_unit(cell, cfg.control_variant, c, q_i, attended, tape);
        Tensor m_read = training ? dropout_apply(m, drop->memory, true) : m;
        ReadOut ro = read_unit(cell, cfg.direct_kb_in_read, m_read, K, co.c, tape);
        WriteOut wo = write_unit(cell, cfg, ro.r, m, co.c, hist_c, hist_m, tape);
        if (with_trace) {
            StepTrace st;
            st.c = co.c.to_vector();
            st.m = wo.m.to_vector();
            st.m_candidate = wo.m_candidate.to_vector();
            if (co.cv.defined()) st.cv = co.cv.to_vector();
            st.rv = ro.rv.to_vector();
            if (wo.sa.defined()) st.sa = wo.sa.to_vector();
            if (wo.gate.defined()) st.gate = item(wo.gate);
            res.trace.steps.push_back(std::move(st));
        }
        c = co.c;
        m = wo.m;
        hist_c.push_back(c);
        hist_m.push_back(m);
    }
    res.logits = output_unit(params, q, m, tape);
    return res;
}

}  // namespace macnet

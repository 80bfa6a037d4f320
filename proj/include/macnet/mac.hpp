#pragma once

#include <optional>
#include <string>
#include <vector>

#include "macnet/gridworld.hpp"
#include "macnet/nn.hpp"
#include "macnet/tensor.hpp"

namespace macnet {

enum class ControlVariant { word_attention, word_vectors, question_vector, none };
enum class WriteVariant { linear, retrieved_direct, retrieved_affine, gate_only };

ControlVariant control_variant_from(const std::string& s);  // ConfigError on unknown
WriteVariant write_variant_from(const std::string& s);
const std::string& to_string(ControlVariant v);
const std::string& to_string(WriteVariant v);

inline constexpr size_t kWordDim = 300;
inline constexpr size_t kCellFeatureDim = 13;  // 3 shapes + 6 colors + 2 sizes + 2 materials

struct MacConfig {
    size_t d = 64;  // state dimension, must be even
    size_t p = 4;   // reasoning steps
    bool share_weights = true;
    bool use_self_attention = false;
    bool use_memory_gate = false;
    double gate_bias = 1.0;  // added to the gate logit; +1 retains memory early in training
    ControlVariant control_variant = ControlVariant::word_attention;
    WriteVariant write_variant = WriteVariant::linear;
    bool predict_with_question = true;
    bool direct_kb_in_read = true;

    double dropout_keep = 0.85;
    bool dropout_words = true;
    bool dropout_kb = true;
    bool dropout_memory = true;
    bool dropout_lstm_recurrent = false;

    void validate() const;  // ConfigError
};

// Weights of one cell (control + read + write). Which members exist follows
// the config: absent units keep undefined tensors.
struct CellParams {
    Linear cq;      // control: [c_prev, q_i] -> d
    Linear ca;      // control: d -> 1 word score
    Linear r_m;     // read: memory projection d -> d
    Linear r_k;     // read: knowledge projection d -> d
    Linear r_int;   // read: [I, k] -> d (or I -> d without direct KB elements)
    Linear r_a;     // read: d -> 1 location score
    Linear w_info;  // write: [r_i, m_prev] -> d
    Linear w_sa;    // write self-attention: d -> 1 step score
    Tensor w_s_W;   // write self-attention merge, bare [d×d] (bias lives in w_p)
    Linear w_p;     // write self-attention merge of m_info, d -> d
    Linear w_ret;   // write variant retrieved_affine: d -> d
    Linear w_gate;  // memory gate: d -> 1 logit
};

struct MacParams {
    MacConfig cfg;
    ParamRegistry reg;

    Embedding words;             // [V×300]
    BiLstm lstm;                 // 300 -> d
    std::vector<Linear> q_proj;  // p per-step projections d -> d, never shared
    Linear word_proj;            // 300 -> d, only for control over raw word vectors
    Tensor stem_empty;           // learned feature of an empty cell, [13]
    Linear stem1;                // 15 -> d
    Linear stem2;                // d -> d
    std::vector<CellParams> cells;  // 1 when shared, p otherwise
    Linear out1;                 // [q, m_p] -> d (m_p alone without question)
    Linear out2;                 // d -> A
    Tensor c0, m0;               // [d], trainable zero-initialized state

    static MacParams create(const MacConfig& cfg, size_t vocab_words, size_t n_answers,
                            uint64_t seed);
    const CellParams& cell(size_t step) const;  // 1-based; ContractError out of range
    size_t answer_count() const { return out2.out_dim(); }
};

// Per-forward dropout masks, drawn once and reused across positions/steps.
struct DropoutPack {
    bool training = false;
    DropoutMask words;     // width 300
    DropoutMask kb;        // width d
    DropoutMask memory;    // width d
    DropoutMask lstm_rec;  // width d/2, only when recurrent dropout is on
    bool use_lstm_rec = false;

    static DropoutPack draw(const MacConfig& cfg, std::mt19937_64& rng);
};

struct StepTrace {
    std::vector<double> c, m;            // state after the step
    std::vector<double> m_candidate;     // m' before gating (equals m without a gate)
    std::vector<double> cv;              // word attention (empty for ungated control variants)
    std::vector<double> rv;              // grid attention, H·W row-major
    std::vector<double> sa;              // self-attention over prior steps, length i-1
    std::optional<double> gate;          // sigmoid(c') when a gate ran
};

struct CellTrace {
    std::vector<double> c0, m0;
    std::vector<StepTrace> steps;
};

// Featurizes a scene (per-cell one-hots or the learned empty feature, plus two
// positional ramp channels) and applies the two-layer stem; rows are grid
// cells in row-major order, shape [H·W × d].
Tensor build_knowledge_base(const Scene& scene, const MacParams& params, Tape* tape,
                            const DropoutPack* drop = nullptr);

// Step-specific affine projection of the question vector; step is 1-based.
Tensor position_aware_question(const MacParams& params, const Tensor& q, size_t step, Tape* tape);

struct ControlOut {
    Tensor c;   // [1×d]
    Tensor cv;  // [S], undefined for question_vector/none variants
};
// `attended` holds the vectors the control may attend over (contextual words,
// or projected raw embeddings for the word-vector variant).
ControlOut control_unit(const CellParams& cell, ControlVariant variant, const Tensor& c_prev,
                        const Tensor& q_i, const Tensor& attended, Tape* tape);

struct ReadOut {
    Tensor r;   // [1×d]
    Tensor rv;  // [H·W]
};
ReadOut read_unit(const CellParams& cell, bool direct_kb, const Tensor& m_prev, const Tensor& K,
                  const Tensor& c_i, Tape* tape);

struct WriteOut {
    Tensor m;            // [1×d]
    Tensor m_candidate;  // m' (what the gate interpolates toward)
    Tensor sa;           // [i-1] or undefined
    Tensor gate;         // [1×1] sigmoid(c') or undefined
};
WriteOut write_unit(const CellParams& cell, const MacConfig& cfg, const Tensor& r_i,
                    const Tensor& m_prev, const Tensor& c_i, const std::vector<Tensor>& hist_c,
                    const std::vector<Tensor>& hist_m, Tape* tape);

Tensor output_unit(const MacParams& params, const Tensor& q, const Tensor& m_p, Tape* tape);

struct ForwardResult {
    Tensor logits;  // [1×A]
    CellTrace trace;
};

// Full pass: input unit, p cells, output unit. Only the first `length` token
// ids participate (padding never enters the computation). The trace is filled
// when with_trace is set (intended for evaluation).
ForwardResult network_forward(const std::vector<int>& tokens, size_t length, const Scene& scene,
                              const MacParams& params, Tape* tape,
                              const DropoutPack* drop = nullptr, bool with_trace = false);

// Canonical "key=value\n" listing of every config field, keys sorted.
std::string config_text(const MacConfig& cfg);

}  // namespace macnet

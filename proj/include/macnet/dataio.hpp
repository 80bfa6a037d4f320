#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "macnet/gridworld.hpp"
#include "macnet/tensor.hpp"

namespace macnet {

// Closed vocabulary derived from the question lexicon and answer set; id 0 of
// the word map is reserved for padding.
struct Vocab {
    std::vector<std::string> words;    // words[0] == "<pad>"
    std::vector<std::string> answers;

    static Vocab build(int grid_size);

    int word_id(const std::string& w) const;      // VocabError on unknown
    int answer_id(const std::string& a) const;    // VocabError on unknown
    const std::string& word(int id) const;        // VocabError out of range
    const std::string& answer(int id) const;
    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;

    nlohmann::json to_json() const;
    static Vocab from_json(const nlohmann::json& j);
    void save(const std::string& path) const;     // IoError
    static Vocab load(const std::string& path);   // IoError/ParseError

  private:
    std::unordered_map<std::string, int> word_index_;
    std::unordered_map<std::string, int> answer_index_;
    void rebuild_index();
};

// One JSON object per line: {answer, category, program, scene, tokens}.
void write_dataset(const std::vector<QAInstance>& data, const std::string& path);
std::vector<QAInstance> read_dataset(const std::string& path);  // ParseError names the line

struct Batch {
    std::vector<std::vector<int>> token_ids;  // [B][S_max], padded with id 0
    std::vector<size_t> lengths;              // valid prefix per example
    std::vector<const QAInstance*> instances;
    std::vector<int> answer_ids;

    size_t size() const { return lengths.size(); }
};

// Deterministic by seed; emits the final partial batch. `data` must outlive
// the returned batches.
std::vector<Batch> make_batches(const std::vector<QAInstance>& data, const Vocab& vocab,
                                size_t batch_size, uint64_t seed, bool shuffle);

// --- checkpoints -------------------------------------------------------------

uint64_t fnv1a(const std::string& s);

// Binary single-file checkpoint: magic, config text (hash-protected), named
// parameter tensors, optional EMA shadows in the same order.
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::pair<std::string, Tensor>> ema;  // empty when EMA disabled

    uint64_t config_hash() const { return fnv1a(config_text); }
};

void save_checkpoint(const std::string& path, const Checkpoint& c);  // IoError
// LoadError on bad magic, corrupt layout, or stored-hash mismatch.
Checkpoint load_checkpoint(const std::string& path);
// Additionally refuses a checkpoint whose config hash differs from `expected`.
Checkpoint load_checkpoint(const std::string& path, uint64_t expected_config_hash);

}  // namespace macnet

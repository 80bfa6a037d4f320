#include "macnet/dataio.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

namespace macnet {

void Vocab::rebuild_index() {
    word_index_.clear();
    answer_index_.clear();
    for (size_t i = 0; i < words.size(); ++i) word_index_[words[i]] = static_cast<int>(i);
    for (size_t i = 0; i < answers.size(); ++i) answer_index_[answers[i]] = static_cast<int>(i);
    if (word_index_.size() != words.size() || answer_index_.size() != answers.size())
        throw ContractError("vocabulary contains duplicate entries");
}

Vocab Vocab::build(int grid_size) {
    Vocab v;
    v.words.push_back("<pad>");
    for (auto& w : question_lexicon()) v.words.push_back(w);
    v.answers = answer_vocabulary(grid_size);
    v.rebuild_index();
    return v;
}

int Vocab::word_id(const std::string& w) const {
    auto it = word_index_.find(w);
    if (it == word_index_.end()) throw VocabError("unknown word: " + w);
    return it->second;
}

int Vocab::answer_id(const std::string& a) const {
    auto it = answer_index_.find(a);
    if (it == answer_index_.end()) throw VocabError("unknown answer: " + a);
    return it->second;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= words.size())
        throw VocabError("word id out of range: " + std::to_string(id));
    return words[static_cast<size_t>(id)];
}

const std::string& Vocab::answer(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= answers.size())
        throw VocabError("answer id out of range: " + std::to_string(id));
    return answers[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(word_id(t));
    return out;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(word(id));
    return out;
}

nlohmann::json Vocab::to_json() const { return {{"words", words}, {"answers", answers}}; }

Vocab Vocab::from_json(const nlohmann::json& j) {
    Vocab v;
    v.words = j.at("words").get<std::vector<std::string>>();
    v.answers = j.at("answers").get<std::vector<std::string>>();
    if (v.words.empty() || v.words[0] != "<pad>")
        throw ContractError("vocabulary must reserve id 0 for <pad>");
    v.rebuild_index();
    return v;
}

void Vocab::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << to_json().dump(2) << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    try {
        return from_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

// --- dataset JSONL ------------------------------------------------------------

namespace {

nlohmann::json instance_to_json(const QAInstance& d) {
    return {{"tokens", d.tokens},
            {"scene", scene_to_json(d.scene)},
            {"program", program_to_json(d.program)},
            {"answer", d.answer},
            {"category", d.category}};
}

QAInstance instance_from_json(const nlohmann::json& j) {
    QAInstance d;
    d.tokens = j.at("tokens").get<std::vector<std::string>>();
    d.scene = scene_from_json(j.at("scene"));
    d.program = program_from_json(j.at("program"));
    d.answer = j.at("answer").get<std::string>();
    d.category = j.at("category").get<std::string>();
    if (d.tokens.empty()) throw ContractError("instance has no tokens");
    const auto& cats = category_names();
    if (std::find(cats.begin(), cats.end(), d.category) == cats.end())
        throw ContractError("unknown category: " + d.category);
    return d;
}

}  // namespace

void write_dataset(const std::vector<QAInstance>& data, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    for (const auto& d : data) f << instance_to_json(d).dump() << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

std::vector<QAInstance> read_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read " + path);
    std::vector<QAInstance> out;
    std::string line;
    long line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) {
            if (f.peek() == std::ifstream::traits_type::eof()) break;  // trailing newline
            throw ParseError(path + ": blank line", line_no);
        }
        try {
            out.push_back(instance_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": " + e.what(), line_no);
        } catch (const MacError& e) {
            throw ParseError(path + ": " + e.what(), line_no);
        }
    }
    return out;
}

std::vector<Batch> make_batches(const std::vector<QAInstance>& data, const Vocab& vocab,
                                size_t batch_size, uint64_t seed, bool shuffle) {
    if (batch_size < 1) throw ContractError("batch size must be at least 1");
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        std::mt19937_64 rng(seed);
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = std::uniform_int_distribution<size_t>(0, i - 1)(rng);
            std::swap(order[i - 1], order[j]);
        }
    }
    std::vector<Batch> out;
    for (size_t start = 0; start < order.size(); start += batch_size) {
        const size_t end = std::min(order.size(), start + batch_size);
        Batch b;
        size_t s_max = 0;
        for (size_t k = start; k < end; ++k)
            s_max = std::max(s_max, data[order[k]].tokens.size());
        for (size_t k = start; k < end; ++k) {
            const QAInstance& d = data[order[k]];
            std::vector<int> ids = vocab.encode(d.tokens);
            b.lengths.push_back(ids.size());
            ids.resize(s_max, 0);
            b.token_ids.push_back(std::move(ids));
            b.instances.push_back(&d);
            b.answer_ids.push_back(vocab.answer_id(d.answer));
        }
        out.push_back(std::move(b));
    }
    return out;
}

// --- checkpoints ----------------------------------------------------------------

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

constexpr char kMagic[8] = {'M', 'A', 'C', 'C', 'K', 'P', 'T', '1'};

void put_u32(std::ostream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t get_u32(std::istream& f) {
    uint32_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), 4)) throw LoadError("checkpoint truncated");
    return v;
}

uint64_t get_u64(std::istream& f) {
    uint64_t v = 0;
    if (!f.read(reinterpret_cast<char*>(&v), 8)) throw LoadError("checkpoint truncated");
    return v;
}

void put_tensor_values(std::ostream& f, const Tensor& t) {
    auto d = t.data();
    f.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * 8));
}

std::vector<double> get_values(std::istream& f, size_t n) {
    std::vector<double> v(n);
    if (!f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8)))
        throw LoadError("checkpoint truncated");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f.write(kMagic, 8);
    put_u64(f, c.config_hash());
    put_u32(f, static_cast<uint32_t>(c.config_text.size()));
    f.write(c.config_text.data(), static_cast<std::streamsize>(c.config_text.size()));
    put_u64(f, c.params.size());
    for (const auto& [name, t] : c.params) {
        put_u32(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(f, static_cast<uint32_t>(t.rank()));
        for (size_t d : t.shape()) put_u64(f, d);
        put_tensor_values(f, t);
    }
    f.put(c.ema.empty() ? 0 : 1);
    if (!c.ema.empty()) {
        if (c.ema.size() != c.params.size())
            throw ContractError("EMA section must shadow every parameter");
        for (size_t i = 0; i < c.ema.size(); ++i) {
            if (c.ema[i].first != c.params[i].first || c.ema[i].second.shape() != c.params[i].second.shape())
                throw ContractError("EMA shadow order/shape diverges from parameters");
            put_tensor_values(f, c.ema[i].second);
        }
    }
    if (!f) throw IoError("failed while writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    char magic[8];
    if (!f.read(magic, 8) || !std::equal(magic, magic + 8, kMagic))
        throw LoadError(path + ": not a checkpoint file");
    Checkpoint c;
    const uint64_t stored_hash = get_u64(f);
    const uint32_t cfg_len = get_u32(f);
    c.config_text.resize(cfg_len);
    if (!f.read(c.config_text.data(), cfg_len)) throw LoadError("checkpoint truncated");
    if (fnv1a(c.config_text) != stored_hash)
        throw LoadError(path + ": config hash does not match stored configuration");
    const uint64_t n = get_u64(f);
    for (uint64_t i = 0; i < n; ++i) {
        const uint32_t name_len = get_u32(f);
        std::string name(name_len, '\0');
        if (!f.read(name.data(), name_len)) throw LoadError("checkpoint truncated");
        const uint32_t rank = get_u32(f);
        Shape shape(rank);
        for (auto& d : shape) d = get_u64(f);
        auto values = get_values(f, shape_numel(shape));
        c.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    const int ema_flag = f.get();
    if (ema_flag == std::ifstream::traits_type::eof()) throw LoadError("checkpoint truncated");
    if (ema_flag == 1) {
        for (const auto& [name, t] : c.params)
            c.ema.emplace_back(name, Tensor(t.shape(), get_values(f, t.numel())));
    } else if (ema_flag != 0) {
        throw LoadError(path + ": corrupt EMA marker");
    }
    return c;
}

Checkpoint load_checkpoint(const std::string& path, uint64_t expected_config_hash) {
    Checkpoint c = load_checkpoint(path);
    if (c.config_hash() != expected_config_hash)
        throw LoadError(path + ": checkpoint was written under a different configuration");
    return c;
}

}  // namespace macnet

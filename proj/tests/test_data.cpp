#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <string>

#include "macnet/dataio.hpp"

#include "helpers.hpp"

using namespace macnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& stem) {
    static int counter = 0;
    return fs::temp_directory_path() / (stem + "_" + std::to_string(counter++) + ".tmp");
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("vocab: construction, ids, and round-trips") {
    Vocab v = Vocab::build(5);
    CHECK(v.words.size() == 49);  // 48 lexicon words + padding
    CHECK(v.words[0] == "<pad>");
    CHECK(v.answers.size() == 41);

    CHECK(v.word_id("<pad>") == 0);
    CHECK(v.word(v.word_id("cube")) == "cube");
    CHECK(v.answer(v.answer_id("yes")) == "yes");
    CHECK_THROWS_AS(v.word_id("zebra"), VocabError);
    CHECK_THROWS_AS(v.answer_id("zebra"), VocabError);
    CHECK_THROWS_AS(v.word(-1), VocabError);
    CHECK_THROWS_AS(v.word(static_cast<int>(v.words.size())), VocabError);

    std::vector<std::string> toks = {"what", "color", "is", "the", "cube"};
    CHECK(v.decode(v.encode(toks)) == toks);

    Vocab rt = Vocab::from_json(v.to_json());
    CHECK(rt.words == v.words);
    CHECK(rt.answers == v.answers);
    CHECK(rt.word_id("cube") == v.word_id("cube"));

    auto path = temp_file("vocab");
    v.save(path.string());
    Vocab loaded = Vocab::load(path.string());
    CHECK(loaded.words == v.words);
    CHECK(loaded.answers == v.answers);

    // saving the loaded copy writes byte-identical output
    auto path2 = temp_file("vocab");
    loaded.save(path2.string());
    CHECK(slurp(path) == slurp(path2));

    CHECK(Vocab::build(3).answers.size() == 25);
    CHECK_THROWS_AS(Vocab::load("/nonexistent/vocab.json"), IoError);
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("dataset jsonl: round-trip, line-addressed errors, empty file") {
    DatasetOptions opt;
    auto data = generate_dataset(21, 130, opt);
    auto path = temp_file("dataset");
    write_dataset(data, path.string());

    auto back = read_dataset(path.string());
    REQUIRE(back.size() == data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].tokens == data[i].tokens);
        CHECK(back[i].answer == data[i].answer);
        CHECK(back[i].category == data[i].category);
        CHECK(scene_to_json(back[i].scene) == scene_to_json(data[i].scene));
        CHECK(program_to_json(back[i].program) == program_to_json(data[i].program));
    }

    // writing the read-back data reproduces the file byte for byte
    auto path2 = temp_file("dataset");
    write_dataset(back, path2.string());
    CHECK(slurp(path) == slurp(path2));

    // malformed line reports its 1-based line number
    {
        std::ofstream out(path2, std::ios::binary);
        nlohmann::json first;
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        out << line << "\n";
        out << "{not json\n";
    }
    try {
        read_dataset(path2.string());
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line_number == 2);
    }

    // structurally valid JSON with missing fields is also a parse failure
    {
        std::ofstream out(path2, std::ios::binary);
        out << "{\"answer\": \"yes\"}\n";
    }
    CHECK_THROWS_AS(read_dataset(path2.string()), ParseError);

    {
        std::ofstream out(path2, std::ios::binary);
    }
    CHECK(read_dataset(path2.string()).empty());

    CHECK_THROWS_AS(read_dataset("/nonexistent/data.jsonl"), IoError);
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("batching: sizes, padding, order, determinism") {
    DatasetOptions opt;
    auto data = generate_dataset(33, 130, opt);
    Vocab v = Vocab::build(opt.grid_size);

    auto batches = make_batches(data, v, 64, 7, true);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 64);
    CHECK(batches[1].size() == 64);
    CHECK(batches[2].size() == 2);

    // every instance appears exactly once across batches
    std::set<const QAInstance*> seen;
    for (const auto& b : batches)
        for (const QAInstance* p : b.instances) seen.insert(p);
    CHECK(seen.size() == data.size());

    for (const auto& b : batches) {
        size_t s_max = 0;
        for (size_t len : b.lengths) s_max = std::max(s_max, len);
        for (size_t i = 0; i < b.size(); ++i) {
            const auto& row = b.token_ids[i];
            CHECK(row.size() == s_max);
            CHECK(b.lengths[i] == b.instances[i]->tokens.size());
            // valid prefix encodes the tokens, the rest is padding id 0
            for (size_t t = 0; t < b.lengths[i]; ++t)
                CHECK(row[t] == v.word_id(b.instances[i]->tokens[t]));
            for (size_t t = b.lengths[i]; t < s_max; ++t) CHECK(row[t] == 0);
            CHECK(b.answer_ids[i] == v.answer_id(b.instances[i]->answer));
        }
    }

    // shuffle off preserves dataset order
    auto plain = make_batches(data, v, 64, 7, false);
    size_t k = 0;
    for (const auto& b : plain)
        for (const QAInstance* p : b.instances) CHECK(p == &data[k++]);

    // same seed, same order; different seed, different order
    auto again = make_batches(data, v, 64, 7, true);
    bool same = true;
    for (size_t bi = 0; bi < batches.size(); ++bi)
        for (size_t i = 0; i < batches[bi].size(); ++i)
            same = same && batches[bi].instances[i] == again[bi].instances[i];
    CHECK(same);
    auto other = make_batches(data, v, 64, 8, true);
    bool differs = false;
    for (size_t i = 0; i < other[0].size() && !differs; ++i)
        differs = other[0].instances[i] != batches[0].instances[i];
    CHECK(differs);

    CHECK_THROWS_AS(make_batches(data, v, 0, 7, true), ContractError);
}

TEST_CASE("checkpoints: round-trip, hashes, corruption detection") {
    std::mt19937_64 rng(5);
    Checkpoint c;
    c.config_text = "d=8\np=2\n";
    c.params.emplace_back("layer.W", testutil::rand_tensor({4, 3}, rng));
    c.params.emplace_back("layer.b", testutil::rand_tensor({1, 3}, rng));
    c.ema.emplace_back("layer.W", testutil::rand_tensor({4, 3}, rng));
    c.ema.emplace_back("layer.b", testutil::rand_tensor({1, 3}, rng));

    auto path = temp_file("ckpt");
    save_checkpoint(path.string(), c);
    Checkpoint r = load_checkpoint(path.string());
    CHECK(r.config_text == c.config_text);
    REQUIRE(r.params.size() == 2);
    REQUIRE(r.ema.size() == 2);
    for (size_t i = 0; i < 2; ++i) {
        CHECK(r.params[i].first == c.params[i].first);
        CHECK(testutil::bitwise_equal(r.params[i].second, c.params[i].second));
        CHECK(testutil::bitwise_equal(r.ema[i].second, c.ema[i].second));
    }

    // expected-hash guard
    CHECK(load_checkpoint(path.string(), c.config_hash()).config_text == c.config_text);
    CHECK_THROWS_AS(load_checkpoint(path.string(), c.config_hash() + 1), LoadError);

    // EMA-less checkpoints round-trip too
    Checkpoint lean = c;
    lean.ema.clear();
    auto path2 = temp_file("ckpt");
    save_checkpoint(path2.string(), lean);
    CHECK(load_checkpoint(path2.string()).ema.empty());

    // determinism: saving identical state twice gives identical bytes
    auto path3 = temp_file("ckpt");
    save_checkpoint(path3.string(), c);
    CHECK(slurp(path) == slurp(path3));

    // bad magic
    {
        std::string bytes = slurp(path);
        bytes[0] ^= 0x5a;
        std::ofstream out(path3, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(path3.string()), LoadError);

    // truncation
    {
        std::string bytes = slurp(path);
        bytes.resize(bytes.size() / 2);
        std::ofstream out(path3, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(path3.string()), LoadError);

    // flipped byte inside the config text breaks the stored hash
    {
        std::string bytes = slurp(path);
        bytes[21] ^= 0x01;  // magic(8) + hash(8) + length(4), then the text
        std::ofstream out(path3, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    }
    CHECK_THROWS_AS(load_checkpoint(path3.string()), LoadError);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), IoError);
    CHECK_THROWS_AS(save_checkpoint("/nonexistent/dir/x.ckpt", c), IoError);

    fs::remove(path);
    fs::remove(path2);
    fs::remove(path3);
}

TEST_CASE("fnv1a: reference values and sensitivity") {
    // FNV-1a 64-bit offset basis for the empty string
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("ab") != fnv1a("ba"));
}

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "macnet/harness.hpp"

using namespace macnet;
namespace fs = std::filesystem;

namespace {

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("short write to " + path);
}

std::string sibling_vocab(const std::string& data_path) {
    return (fs::path(data_path).parent_path() / "vocab.json").string();
}

TrainConfig load_train_config(const std::string& config_path,
                              const std::vector<std::string>& overrides, uint64_t* seed_flag) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = parse_train_config(read_text(config_path));
    for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        set_config_field(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed_flag) cfg.seed = *seed_flag;
    cfg.model.validate();
    return cfg;
}

const char* error_code(const MacError& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const ParseError*>(&e)) return "parse";
    if (dynamic_cast<const LoadError*>(&e)) return "load";
    if (dynamic_cast<const IoError*>(&e)) return "io";
    if (dynamic_cast<const TrainingError*>(&e)) return "training";
    if (dynamic_cast<const VocabError*>(&e)) return "vocab";
    if (dynamic_cast<const SceneError*>(&e)) return "scene";
    if (dynamic_cast<const AmbiguityError*>(&e)) return "ambiguity";
    if (dynamic_cast<const GenerationError*>(&e)) return "generation";
    if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
    if (dynamic_cast<const DomainError*>(&e)) return "domain";
    return "internal";
}

int cmd_generate(uint64_t seed, size_t train_n, size_t val_n, int grid,
                 std::pair<size_t, size_t> objects, const std::string& out_dir) {
    DatasetOptions opt;
    opt.grid_size = grid;
    opt.min_objects = objects.first;
    opt.max_objects = objects.second;
    fs::create_directories(out_dir);

    auto train = generate_dataset(mix_seed(seed, 1), train_n, opt);
    auto val = generate_dataset(mix_seed(seed, 2), val_n, opt);
    Vocab vocab = Vocab::build(grid);

    write_dataset(train, out_dir + "/train.jsonl");
    write_dataset(val, out_dir + "/val.jsonl");
    vocab.save(out_dir + "/vocab.json");

    std::map<std::string, size_t> hist;
    for (const auto& inst : train) ++hist[inst.category];
    nlohmann::json jh;
    for (const auto& [k, v] : hist) jh[k] = v;
    std::cout << nlohmann::json{{"train", train_n},
                                {"val", val_n},
                                {"train_categories", jh},
                                {"out_dir", out_dir}}
                     .dump(2)
              << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::vector<std::string>& overrides,
              uint64_t* seed_flag) {
    TrainConfig cfg = load_train_config(config_path, overrides, seed_flag);
    auto train = read_dataset(data_dir + "/train.jsonl");
    auto val = read_dataset(data_dir + "/val.jsonl");
    Vocab vocab = Vocab::load(data_dir + "/vocab.json");
    fs::create_directories(out_dir);
    const std::string ckpt = out_dir + "/best.ckpt";
    RunReport rep = train_run(cfg, train, val, vocab, ckpt, &std::cout);
    write_text(out_dir + "/report.json", rep.to_json().dump(2) + "\n");
    std::cout << "best val " << rep.best_val << " at epoch " << rep.best_epoch << "; checkpoint "
              << ckpt << "\n";
    return rep.aborted_nan ? 1 : 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, std::string vocab_path,
             bool use_ema, const std::string& out_path) {
    if (vocab_path.empty()) vocab_path = sibling_vocab(data_path);
    Vocab vocab = Vocab::load(vocab_path);
    auto data = read_dataset(data_path);
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    MacConfig model = mac_config_from_text(ckpt.config_text);
    MacParams params = MacParams::create(model, vocab.words.size(), vocab.answers.size(), 0);
    load_into_params(ckpt, params, use_ema);
    EvalResult ev = evaluate(params, data, vocab);
    std::string text = ev.to_json().dump(2) + "\n";
    if (!out_path.empty()) write_text(out_path, text);
    std::cout << text;
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& data_dir,
               const std::string& out_dir, const std::vector<std::string>& overrides,
               const std::vector<std::string>& vary, uint64_t* seed_flag) {
    TrainConfig base = load_train_config(config_path, overrides, seed_flag);
    auto grid = parse_ablation_grid(vary);
    auto train = read_dataset(data_dir + "/train.jsonl");
    auto val = read_dataset(data_dir + "/val.jsonl");
    Vocab vocab = Vocab::load(data_dir + "/vocab.json");
    fs::create_directories(out_dir);
    auto runs = run_ablation(base, grid, train, val, vocab, out_dir, &std::cout);
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& r : runs)
        jr.push_back({{"label", r.label},
                      {"report", r.report.to_json()},
                      {"eval", r.val_eval.to_json()}});
    write_text(out_dir + "/ablation.json", jr.dump(2) + "\n");
    std::string table = ablation_table(runs);
    write_text(out_dir + "/ablation_table.txt", table);
    std::cout << "\n" << table;
    return 0;
}

int cmd_dump_attention(const std::string& ckpt_path, const std::string& instance_path,
                       size_t index, std::string vocab_path, bool use_ema,
                       const std::string& out_path) {
    if (vocab_path.empty()) vocab_path = sibling_vocab(instance_path);
    Vocab vocab = Vocab::load(vocab_path);
    auto data = read_dataset(instance_path);
    if (index >= data.size())
        throw ConfigError("--index " + std::to_string(index) + " out of range for " +
                          std::to_string(data.size()) + " instances");
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    MacConfig model = mac_config_from_text(ckpt.config_text);
    MacParams params = MacParams::create(model, vocab.words.size(), vocab.answers.size(), 0);
    load_into_params(ckpt, params, use_ema);
    AttentionDump dump = dump_attention(params, data[index], vocab);
    if (!out_path.empty()) write_text(out_path, dump.trace.dump(2) + "\n");
    std::cout << dump.text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Recurrent memory-attention network on synthetic grid-world QA"};
    app.require_subcommand(1);

    // generate
    auto* gen = app.add_subcommand("generate", "Sample scenes and questions into JSONL files");
    uint64_t g_seed = 0;
    size_t g_train = 20000, g_val = 2000;
    int g_grid = 5;
    std::pair<size_t, size_t> g_objects{4, 10};
    std::string g_out = default_out_dir();
    gen->add_option("--seed", g_seed, "dataset seed");
    gen->add_option("--train-n", g_train, "training instances")->check(CLI::PositiveNumber);
    gen->add_option("--val-n", g_val, "validation instances")->check(CLI::PositiveNumber);
    gen->add_option("--grid", g_grid, "grid side length")->check(CLI::Range(2, 16));
    gen->add_option("--objects", g_objects, "min and max objects per scene");
    gen->add_option("--out-dir", g_out, "output directory");

    // train
    auto* tr = app.add_subcommand("train", "Train a model and write best checkpoint + report");
    std::string t_config, t_data, t_out = default_out_dir();
    std::vector<std::string> t_set;
    uint64_t t_seed = 0;
    tr->add_option("--config", t_config, "flat key=value config file");
    tr->add_option("--data-dir", t_data, "directory holding train.jsonl/val.jsonl/vocab.json")
        ->required();
    tr->add_option("--out", t_out, "output directory");
    tr->add_option("--set", t_set, "override config fields, key=value (repeatable)");
    auto* t_seed_opt = tr->add_option("--seed", t_seed, "training seed (overrides config)");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    std::string e_ckpt, e_data, e_vocab, e_out;
    bool e_ema = false;
    ev->add_option("--checkpoint", e_ckpt, "checkpoint file")->required();
    ev->add_option("--data", e_data, "JSONL dataset")->required();
    ev->add_option("--vocab", e_vocab, "vocab file (default: vocab.json beside --data)");
    ev->add_flag("--use-ema", e_ema, "evaluate the EMA shadow weights");
    ev->add_option("--out", e_out, "also write the JSON result here");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Train a config grid under a shared seed");
    std::string a_config, a_data, a_out = default_out_dir();
    std::vector<std::string> a_set, a_vary;
    uint64_t a_seed = 0;
    ab->add_option("--config", a_config, "flat key=value config file");
    ab->add_option("--data-dir", a_data, "directory holding train.jsonl/val.jsonl/vocab.json")
        ->required();
    ab->add_option("--out", a_out, "output directory");
    ab->add_option("--set", a_set, "override base config fields, key=value (repeatable)");
    ab->add_option("--vary", a_vary, "grid axis, field=v1,v2,... (repeatable)")->required();
    auto* a_seed_opt = ab->add_option("--seed", a_seed, "shared training seed");

    // dump-attention
    auto* da = app.add_subcommand("dump-attention", "Write attention traces for one instance");
    std::string d_ckpt, d_inst, d_vocab, d_out;
    size_t d_index = 0;
    bool d_ema = false;
    da->add_option("--checkpoint", d_ckpt, "checkpoint file")->required();
    da->add_option("--instance", d_inst, "JSONL dataset holding the instance")->required();
    da->add_option("--index", d_index, "instance index within the file");
    da->add_option("--vocab", d_vocab, "vocab file (default: vocab.json beside --instance)");
    da->add_flag("--use-ema", d_ema, "load the EMA shadow weights");
    da->add_option("--out", d_out, "write the JSON trace here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(g_seed, g_train, g_val, g_grid, g_objects, g_out);
        if (tr->parsed())
            return cmd_train(t_config, t_data, t_out, t_set,
                             t_seed_opt->count() ? &t_seed : nullptr);
        if (ev->parsed()) return cmd_eval(e_ckpt, e_data, e_vocab, e_ema, e_out);
        if (ab->parsed())
            return cmd_ablate(a_config, a_data, a_out, a_set, a_vary,
                              a_seed_opt->count() ? &a_seed : nullptr);
        if (da->parsed()) return cmd_dump_attention(d_ckpt, d_inst, d_index, d_vocab, d_ema, d_out);
    } catch (const MacError& e) {
        std::cerr << nlohmann::json{{"error", error_code(e)}, {"message", e.what()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
        return 1;
    }
    return 0;
}

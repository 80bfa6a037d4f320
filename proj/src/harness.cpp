#include "macnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <sstream>

namespace macnet {

namespace {

bool parse_flag(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("field '" + key + "' expects a boolean, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("field '" + key + "' expects a number, got '" + v + "'");
    }
}

uint64_t parse_unsigned(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        uint64_t u = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw ConfigError("field '" + key + "' expects a nonnegative integer, got '" + v + "'");
    }
}

// Returns false when the key is not a model field.
bool set_mac_field(MacConfig& m, const std::string& key, const std::string& v) {
    if (key == "d") m.d = parse_unsigned(key, v);
    else if (key == "p") m.p = parse_unsigned(key, v);
    else if (key == "share_weights") m.share_weights = parse_flag(key, v);
    else if (key == "use_self_attention") m.use_self_attention = parse_flag(key, v);
    else if (key == "use_memory_gate") m.use_memory_gate = parse_flag(key, v);
    else if (key == "gate_bias") m.gate_bias = parse_real(key, v);
    else if (key == "control_variant") m.control_variant = control_variant_from(v);
    else if (key == "write_variant") m.write_variant = write_variant_from(v);
    else if (key == "predict_with_question") m.predict_with_question = parse_flag(key, v);
    else if (key == "direct_kb_in_read") m.direct_kb_in_read = parse_flag(key, v);
    else if (key == "dropout_keep") m.dropout_keep = parse_real(key, v);
    else if (key == "dropout_words") m.dropout_words = parse_flag(key, v);
    else if (key == "dropout_kb") m.dropout_kb = parse_flag(key, v);
    else if (key == "dropout_memory") m.dropout_memory = parse_flag(key, v);
    else if (key == "dropout_lstm_recurrent") m.dropout_lstm_recurrent = parse_flag(key, v);
    else return false;
    return true;
}

std::vector<std::pair<std::string, std::string>> split_assignments(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const char* ws = " \t\r";
            s.erase(0, s.find_first_not_of(ws));
            if (auto e = s.find_last_not_of(ws); e != std::string::npos) s.erase(e + 1);
            else s.clear();
            return s;
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: '" +
                              line + "'");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

std::string fmt_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void set_config_field(TrainConfig& cfg, const std::string& key, const std::string& v) {
    if (set_mac_field(cfg.model, key, v)) return;
    if (key == "lr") cfg.adam.lr = parse_real(key, v);
    else if (key == "beta1") cfg.adam.beta1 = parse_real(key, v);
    else if (key == "beta2") cfg.adam.beta2 = parse_real(key, v);
    else if (key == "eps") cfg.adam.eps = parse_real(key, v);
    else if (key == "clip_norm") cfg.clip_norm = parse_real(key, v);
    else if (key == "batch_size") cfg.batch_size = parse_unsigned(key, v);
    else if (key == "epochs") cfg.epochs = parse_unsigned(key, v);
    else if (key == "patience") cfg.patience = parse_unsigned(key, v);
    else if (key == "ema_decay") cfg.ema_decay = parse_real(key, v);
    else if (key == "use_ema_eval") cfg.use_ema_eval = parse_flag(key, v);
    else if (key == "seed") cfg.seed = parse_unsigned(key, v);
    else throw ConfigError("unknown config field: " + key);
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig cfg;
    for (const auto& [k, v] : split_assignments(text)) set_config_field(cfg, k, v);
    cfg.model.validate();
    if (cfg.batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (cfg.patience == 0) throw ConfigError("patience must be at least 1");
    return cfg;
}

std::string train_config_text(const TrainConfig& cfg) {
    std::string merged = config_text(cfg.model);
    merged += "batch_size=" + std::to_string(cfg.batch_size) + "\n";
    merged += "beta1=" + fmt_real(cfg.adam.beta1) + "\n";
    merged += "beta2=" + fmt_real(cfg.adam.beta2) + "\n";
    merged += "clip_norm=" + fmt_real(cfg.clip_norm) + "\n";
    merged += "ema_decay=" + fmt_real(cfg.ema_decay) + "\n";
    merged += "epochs=" + std::to_string(cfg.epochs) + "\n";
    merged += "eps=" + fmt_real(cfg.adam.eps) + "\n";
    merged += "lr=" + fmt_real(cfg.adam.lr) + "\n";
    merged += "patience=" + std::to_string(cfg.patience) + "\n";
    merged += "seed=" + std::to_string(cfg.seed) + "\n";
    merged += "use_ema_eval=" + std::string(cfg.use_ema_eval ? "true" : "false") + "\n";
    std::istringstream in(merged);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

MacConfig mac_config_from_text(const std::string& text) {
    MacConfig m;
    for (const auto& [k, v] : split_assignments(text))
        if (!set_mac_field(m, k, v)) throw ConfigError("unknown model config field: " + k);
    m.validate();
    return m;
}

// --- evaluation ----------------------------------------------------------------

bool is_relational(const Program& p) {
    if (p.op == "relate") return true;
    return std::any_of(p.children.begin(), p.children.end(),
                       [](const Program& c) { return is_relational(c); });
}

nlohmann::json EvalResult::to_json() const {
    auto cat = [](const CategoryStats& s) {
        return nlohmann::json{{"n", s.n}, {"correct", s.correct}, {"accuracy", s.accuracy()}};
    };
    nlohmann::json by;
    for (const auto& [name, s] : by_category) by[name] = cat(s);
    return nlohmann::json{{"n", n},
                          {"correct", correct},
                          {"accuracy", accuracy()},
                          {"chance_baseline", chance_baseline},
                          {"most_frequent_baseline", most_frequent_baseline},
                          {"by_category", by},
                          {"relational", cat(relational)},
                          {"nonrelational", cat(nonrelational)},
                          {"predictions", predictions}};
}

EvalResult evaluate(const MacParams& params, const std::vector<QAInstance>& data,
                    const Vocab& vocab) {
    EvalResult r;
    r.chance_baseline = vocab.answers.empty() ? 0.0 : 1.0 / vocab.answers.size();
    std::map<std::string, size_t> freq;
    for (const auto& inst : data) ++freq[inst.answer];
    size_t mode = 0;
    for (const auto& [a, c] : freq) mode = std::max(mode, c);
    r.most_frequent_baseline = data.empty() ? 0.0 : static_cast<double>(mode) / data.size();
    r.predictions.reserve(data.size());
    for (const auto& inst : data) {
        std::vector<int> ids = vocab.encode(inst.tokens);
        ForwardResult f = network_forward(ids, ids.size(), inst.scene, params, nullptr, nullptr,
                                          false);
        auto row = f.logits.to_vector();
        int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        r.predictions.push_back(pred);
        const bool ok = pred == vocab.answer_id(inst.answer);
        ++r.n;
        r.correct += ok;
        auto& cs = r.by_category[inst.category];
        ++cs.n;
        cs.correct += ok;
        auto& rs = is_relational(inst.program) ? r.relational : r.nonrelational;
        ++rs.n;
        rs.correct += ok;
    }
    return r;
}

// --- training ------------------------------------------------------------------

nlohmann::json RunReport::to_json() const {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& e : history) {
        nlohmann::json pc;
        for (const auto& [k, v] : e.per_category) pc[k] = v;
        hist.push_back({{"train_loss", e.train_loss},
                        {"val_accuracy", e.val_accuracy},
                        {"val_relational", e.val_relational},
                        {"per_category", pc},
                        {"seconds", e.seconds}});
    }
    return nlohmann::json{{"config", config},
                          {"history", hist},
                          {"best_epoch", best_epoch},
                          {"best_val", best_val},
                          {"wall_seconds", wall_seconds},
                          {"aborted_nan", aborted_nan},
                          {"checkpoint_path", checkpoint_path}};
}

namespace {

void save_params(const std::string& path, const MacConfig& model, const ParamRegistry& reg,
                 const EmaState& ema) {
    Checkpoint c;
    c.config_text = config_text(model);
    for (size_t i = 0; i < reg.size(); ++i) {
        c.params.emplace_back(reg.name(i), Tensor(reg.param(i).shape(), reg.param(i).to_vector()));
        c.ema.emplace_back(reg.name(i), Tensor(reg.param(i).shape(), ema.shadow[i]));
    }
    save_checkpoint(path, c);
}

}  // namespace

RunReport train_run(const TrainConfig& cfg, const std::vector<QAInstance>& train,
                    const std::vector<QAInstance>& val, const Vocab& vocab,
                    const std::string& checkpoint_path, std::ostream* log) {
    cfg.model.validate();
    if (cfg.batch_size == 0) throw ConfigError("batch_size must be at least 1");
    if (train.empty()) throw TrainingError("training set is empty");
    const auto t0 = std::chrono::steady_clock::now();

    MacParams params = MacParams::create(cfg.model, vocab.words.size(), vocab.answers.size(),
                                         cfg.seed);
    AdamState adam = AdamState::create(params.reg, cfg.adam);
    EmaState ema = EmaState::create(params.reg, cfg.ema_decay);
    EarlyStopper stopper(cfg.patience);
    std::mt19937_64 drop_rng(mix_seed(cfg.seed, 0x6d61636e));

    RunReport rep;
    rep.config = train_config_text(cfg);
    rep.checkpoint_path = checkpoint_path;
    save_params(checkpoint_path, cfg.model, params.reg, ema);  // abort always has a file

    for (size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto e0 = std::chrono::steady_clock::now();
        double loss_sum = 0.0;
        size_t n_seen = 0;
        try {
            auto batches = make_batches(train, vocab, cfg.batch_size, mix_seed(cfg.seed, epoch),
                                        true);
            for (const Batch& batch : batches) {
                GradTable grads = zero_grads(params.reg);
                for (size_t b = 0; b < batch.size(); ++b) {
                    DropoutPack drop = DropoutPack::draw(cfg.model, drop_rng);
                    Tape tape;
                    ForwardResult f = network_forward(batch.token_ids[b], batch.lengths[b],
                                                      batch.instances[b]->scene, params, &tape,
                                                      &drop, false);
                    Tensor loss = cross_entropy_logits(f.logits, batch.answer_ids[b]);
                    const double lv = item(loss);
                    if (!std::isfinite(lv))
                        throw TrainingError("non-finite loss " + std::to_string(lv) + " at epoch " +
                                            std::to_string(epoch));
                    loss_sum += lv;
                    ++n_seen;
                    tape.backward(loss);
                    for (size_t i = 0; i < params.reg.size(); ++i) {
                        if (!tape.has_grad(params.reg.param(i))) continue;
                        const Tensor g = tape.grad(params.reg.param(i));
                        auto gd = g.data();
                        auto& acc = grads[i];
                        for (size_t j = 0; j < gd.size(); ++j) acc[j] += gd[j];
                    }
                }
                const double inv = 1.0 / static_cast<double>(batch.size());
                for (auto& g : grads)
                    for (double& v : g) v *= inv;
                clip_gradients(grads, cfg.clip_norm);
                adam_step(adam, params.reg, grads);
                ema.update(params.reg);
            }
        } catch (const TrainingError& e) {
            rep.aborted_nan = true;
            if (log) *log << "aborted: " << e.what() << "\n";
            break;
        }
        EvalResult ev;
        if (cfg.use_ema_eval) {
            EmaScope shadow(params.reg, ema);
            ev = evaluate(params, val, vocab);
        } else {
            ev = evaluate(params, val, vocab);
        }
        EpochStats es;
        es.train_loss = n_seen ? loss_sum / static_cast<double>(n_seen) : 0.0;
        es.val_accuracy = ev.accuracy();
        es.val_relational = ev.relational.accuracy();
        for (const auto& [name, s] : ev.by_category) es.per_category[name] = s.accuracy();
        es.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
        rep.history.push_back(es);

        const bool stop = stopper.observe(ev.accuracy());
        if (stopper.improved()) {
            rep.best_epoch = epoch;
            rep.best_val = ev.accuracy();
            save_params(checkpoint_path, cfg.model, params.reg, ema);
        }
        if (log)
            *log << "epoch " << epoch << "  loss " << std::fixed << std::setprecision(4)
                 << es.train_loss << "  val " << es.val_accuracy << "  rel " << es.val_relational
                 << "  (" << std::setprecision(1) << es.seconds << " s)"
                 << (stopper.improved() ? "  *" : "") << "\n";
        if (stop) {
            if (log) *log << "early stop at epoch " << epoch << "\n";
            break;
        }
    }
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

void load_into_params(const Checkpoint& ckpt, MacParams& params, bool use_ema) {
    const auto& src = use_ema ? ckpt.ema : ckpt.params;
    if (use_ema && src.empty()) throw LoadError("checkpoint holds no EMA shadow weights");
    if (src.size() != params.reg.size())
        throw LoadError("checkpoint holds " + std::to_string(src.size()) + " parameters, model has " +
                        std::to_string(params.reg.size()));
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : src) by_name[name] = &t;
    for (size_t i = 0; i < params.reg.size(); ++i) {
        auto it = by_name.find(params.reg.name(i));
        if (it == by_name.end())
            throw LoadError("checkpoint lacks parameter " + params.reg.name(i));
        Tensor& dst = params.reg.param(i);
        if (it->second->shape() != dst.shape())
            throw LoadError("checkpoint shape mismatch for " + params.reg.name(i));
        auto from = it->second->data();
        auto to = dst.mutable_data();
        std::copy(from.begin(), from.end(), to.begin());
    }
}

// --- ablation grid ---------------------------------------------------------------

std::vector<AblationSpec> parse_ablation_grid(const std::vector<std::string>& specs) {
    std::vector<AblationSpec> grid;
    for (const auto& s : specs) {
        auto eq = s.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("ablation spec must be field=v1,v2,...: '" + s + "'");
        AblationSpec spec;
        spec.field = s.substr(0, eq);
        std::string rest = s.substr(eq + 1);
        size_t pos = 0;
        while (pos <= rest.size()) {
            auto comma = rest.find(',', pos);
            std::string v = rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                        : comma - pos);
            if (v.empty()) throw ConfigError("empty value in ablation spec '" + s + "'");
            spec.values.push_back(v);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (spec.values.empty()) throw ConfigError("no values in ablation spec '" + s + "'");
        // Validate field name and values up front on a scratch config.
        TrainConfig scratch;
        for (const auto& v : spec.values) {
            set_config_field(scratch, spec.field, v);
            scratch.model.validate();
        }
        grid.push_back(std::move(spec));
    }
    return grid;
}

namespace {

std::string sanitize_label(const std::string& label) {
    std::string out;
    for (char c : label)
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
    return out;
}

}  // namespace

std::vector<AblationRun> run_ablation(const TrainConfig& base,
                                      const std::vector<AblationSpec>& grid,
                                      const std::vector<QAInstance>& train,
                                      const std::vector<QAInstance>& val, const Vocab& vocab,
                                      const std::string& out_dir, std::ostream* log) {
    // Cartesian product over the grid, base config first.
    std::vector<std::pair<std::string, TrainConfig>> points;
    points.emplace_back("default", base);
    std::vector<size_t> idx(grid.size(), 0);
    const size_t combos = grid.empty() ? 0 : [&] {
        size_t c = 1;
        for (const auto& s : grid) c *= s.values.size();
        return c;
    }();
    for (size_t k = 0; k < combos; ++k) {
        TrainConfig cfg = base;
        std::string label;
        for (size_t s = 0; s < grid.size(); ++s) {
            const auto& v = grid[s].values[idx[s]];
            set_config_field(cfg, grid[s].field, v);
            if (!label.empty()) label += " ";
            label += grid[s].field + "=" + v;
        }
        points.emplace_back(label, cfg);
        for (size_t s = grid.size(); s-- > 0;) {
            if (++idx[s] < grid[s].values.size()) break;
            idx[s] = 0;
        }
    }

    std::vector<AblationRun> runs;
    for (auto& [label, cfg] : points) {
        if (log) *log << "--- " << label << "\n";
        AblationRun run;
        run.label = label;
        run.cfg = cfg;
        const std::string ckpt = out_dir + "/" + sanitize_label(label) + ".ckpt";
        run.report = train_run(cfg, train, val, vocab, ckpt, log);
        Checkpoint c = load_checkpoint(ckpt, fnv1a(config_text(cfg.model)));
        MacParams best = MacParams::create(cfg.model, vocab.words.size(), vocab.answers.size(),
                                           cfg.seed);
        load_into_params(c, best, cfg.use_ema_eval);
        run.val_eval = evaluate(best, val, vocab);
        runs.push_back(std::move(run));
    }
    return runs;
}

std::string ablation_table(const std::vector<AblationRun>& runs) {
    std::vector<std::string> cats;
    for (const auto& r : runs)
        for (const auto& [name, s] : r.val_eval.by_category)
            if (std::find(cats.begin(), cats.end(), name) == cats.end()) cats.push_back(name);
    std::sort(cats.begin(), cats.end());

    size_t w0 = 7;
    for (const auto& r : runs) w0 = std::max(w0, r.label.size());
    std::ostringstream out;
    out << std::left << std::setw(static_cast<int>(w0) + 2) << "variant" << std::right
        << std::setw(9) << "overall" << std::setw(12) << "relational";
    for (const auto& c : cats) out << std::setw(std::max<int>(9, static_cast<int>(c.size()) + 2)) << c;
    out << std::setw(7) << "epoch" << "\n";
    for (const auto& r : runs) {
        out << std::left << std::setw(static_cast<int>(w0) + 2) << r.label << std::right
            << std::fixed << std::setprecision(3) << std::setw(9) << r.val_eval.accuracy()
            << std::setw(12) << r.val_eval.relational.accuracy();
        for (const auto& c : cats) {
            auto it = r.val_eval.by_category.find(c);
            out << std::setw(std::max<int>(9, static_cast<int>(c.size()) + 2));
            if (it == r.val_eval.by_category.end()) out << "-";
            else out << it->second.accuracy();
        }
        out << std::setw(7) << r.report.best_epoch << "\n";
    }
    return out.str();
}

// --- attention dumps -------------------------------------------------------------

AttentionDump dump_attention(const MacParams& params, const QAInstance& inst, const Vocab& vocab) {
    std::vector<int> ids = vocab.encode(inst.tokens);
    ForwardResult f = network_forward(ids, ids.size(), inst.scene, params, nullptr, nullptr, true);
    if (f.trace.steps.size() != params.cfg.p)
        throw ContractError("trace holds " + std::to_string(f.trace.steps.size()) + " steps for p=" +
                            std::to_string(params.cfg.p));
    auto row = f.logits.to_vector();
    const int pred = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    const int grid = inst.scene.grid_size;

    nlohmann::json steps = nlohmann::json::array();
    for (const auto& st : f.trace.steps) {
        nlohmann::json js{{"c", st.c}, {"m", st.m}, {"m_candidate", st.m_candidate},
                          {"cv", st.cv}, {"rv", st.rv}, {"sa", st.sa}};
        if (st.gate) js["gate"] = *st.gate;
        steps.push_back(std::move(js));
    }
    AttentionDump dump;
    dump.trace = nlohmann::json{{"tokens", inst.tokens},
                                {"answer", inst.answer},
                                {"prediction", vocab.answer(pred)},
                                {"category", inst.category},
                                {"c0", f.trace.c0},
                                {"m0", f.trace.m0},
                                {"steps", steps}};

    static const char* shades = " .:-=+*#%@";
    std::ostringstream out;
    out << "question:";
    for (const auto& t : inst.tokens) out << " " << t;
    out << "\nanswer: " << inst.answer << "   predicted: " << vocab.answer(pred) << "\n";
    for (size_t i = 0; i < f.trace.steps.size(); ++i) {
        const auto& st = f.trace.steps[i];
        out << "\nstep " << i + 1;
        if (st.gate) out << "  (gate " << std::fixed << std::setprecision(3) << *st.gate << ")";
        out << "\n";
        if (!st.cv.empty()) {
            std::vector<size_t> order(st.cv.size());
            for (size_t j = 0; j < order.size(); ++j) order[j] = j;
            std::sort(order.begin(), order.end(),
                      [&](size_t a, size_t b) { return st.cv[a] > st.cv[b]; });
            out << "  words:";
            for (size_t j = 0; j < std::min<size_t>(3, order.size()); ++j)
                out << " " << inst.tokens[order[j]] << "(" << std::fixed << std::setprecision(2)
                    << st.cv[order[j]] << ")";
            out << "\n";
        }
        const double peak = *std::max_element(st.rv.begin(), st.rv.end());
        for (int h = 0; h < grid; ++h) {
            out << "  ";
            for (int w = 0; w < grid; ++w) {
                const double v = st.rv[static_cast<size_t>(h * grid + w)];
                const int level = peak > 0 ? static_cast<int>(std::lround(v / peak * 9)) : 0;
                out << shades[std::clamp(level, 0, 9)] << ' ';
            }
            out << "\n";
        }
    }
    dump.text = out.str();
    return dump;
}

std::string default_out_dir() {
    const char* env = std::getenv("MACNET_OUT_DIR");
    return env && *env ? env : ".";
}

}  // namespace macnet

#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "macnet/dataio.hpp"
#include "macnet/mac.hpp"
#include "macnet/optim.hpp"

namespace macnet {

// --- run configuration --------------------------------------------------------

struct TrainConfig {
    MacConfig model;
    AdamConfig adam;
    double clip_norm = 8.0;
    size_t batch_size = 64;
    size_t epochs = 30;
    size_t patience = 5;
    double ema_decay = 0.999;
    bool use_ema_eval = true;
    uint64_t seed = 0;
};

// Applies one flat key=value assignment (model or optimizer field).
// ConfigError on an unknown key or unparsable value.
void set_config_field(TrainConfig& cfg, const std::string& key, const std::string& value);

// Flat key=value text, one field per line, '#' comments and blank lines skipped.
TrainConfig parse_train_config(const std::string& text);
std::string train_config_text(const TrainConfig& cfg);

// Rebuilds a model config from the text stored in a checkpoint (model keys only).
MacConfig mac_config_from_text(const std::string& text);

// --- evaluation ----------------------------------------------------------------

struct CategoryStats {
    size_t n = 0;
    size_t correct = 0;
    double accuracy() const { return n ? static_cast<double>(correct) / n : 0.0; }
};

struct EvalResult {
    size_t n = 0;
    size_t correct = 0;
    std::map<std::string, CategoryStats> by_category;
    CategoryStats relational;      // instances whose program contains a relate op
    CategoryStats nonrelational;
    std::vector<int> predictions;  // predicted answer ids, dataset order
    double chance_baseline = 0.0;        // 1 / answer vocabulary
    double most_frequent_baseline = 0.0; // mode frequency of the answer column

    double accuracy() const { return n ? static_cast<double>(correct) / n : 0.0; }
    nlohmann::json to_json() const;
};

bool is_relational(const Program& p);

EvalResult evaluate(const MacParams& params, const std::vector<QAInstance>& data,
                    const Vocab& vocab);

// --- training ------------------------------------------------------------------

struct EpochStats {
    double train_loss = 0.0;    // mean per-example loss
    double val_accuracy = 0.0;
    double val_relational = 0.0;
    std::map<std::string, double> per_category;
    double seconds = 0.0;
};

struct RunReport {
    std::string config;         // train_config_text snapshot
    std::vector<EpochStats> history;
    size_t best_epoch = 0;      // 1-based; 0 when no epoch ran
    double best_val = 0.0;
    double wall_seconds = 0.0;
    bool aborted_nan = false;
    std::string checkpoint_path;

    nlohmann::json to_json() const;
};

// Full training loop: per-example tapes, batch-mean gradients, global-norm
// clipping, Adam, EMA shadows, per-epoch validation (EMA weights when
// enabled), early stopping, best checkpoint at `checkpoint_path`. The initial
// weights are checkpointed up front so an abort always leaves a loadable
// file. A non-finite loss or gradient aborts and keeps the last good
// checkpoint. `log` receives progress lines; pass nullptr for silence.
RunReport train_run(const TrainConfig& cfg, const std::vector<QAInstance>& train,
                    const std::vector<QAInstance>& val, const Vocab& vocab,
                    const std::string& checkpoint_path, std::ostream* log);

// Copies checkpoint values into freshly constructed parameters, matching by
// name; `use_ema` reads the shadow section instead. LoadError on any
// missing/extra/misshapen entry (or absent EMA section).
void load_into_params(const Checkpoint& ckpt, MacParams& params, bool use_ema);

// --- ablation grid ---------------------------------------------------------------

struct AblationSpec {
    std::string field;
    std::vector<std::string> values;
};

// Each spec reads "field=v1,v2,..."; the grid is their cartesian product.
std::vector<AblationSpec> parse_ablation_grid(const std::vector<std::string>& specs);

struct AblationRun {
    std::string label;  // "field=value ..." or "default"
    TrainConfig cfg;
    RunReport report;
    EvalResult val_eval;  // final model on validation data
};

// Trains every grid point from the same base config and seed, writing
// checkpoints/reports under out_dir. The base config itself is run first,
// labeled "default".
std::vector<AblationRun> run_ablation(const TrainConfig& base,
                                      const std::vector<AblationSpec>& grid,
                                      const std::vector<QAInstance>& train,
                                      const std::vector<QAInstance>& val, const Vocab& vocab,
                                      const std::string& out_dir, std::ostream* log);

std::string ablation_table(const std::vector<AblationRun>& runs);

// --- attention dumps -------------------------------------------------------------

struct AttentionDump {
    nlohmann::json trace;
    std::string text;  // per step: top words and an ASCII heat grid
};

AttentionDump dump_attention(const MacParams& params, const QAInstance& inst, const Vocab& vocab);

// $MACNET_OUT_DIR when set, else ".".
std::string default_out_dir();

}  // namespace macnet

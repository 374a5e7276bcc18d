#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lcmae/analysis.hpp"
#include "lcmae/data.hpp"
#include "lcmae/io.hpp"
#include "lcmae/objectives.hpp"
#include "lcmae/vitmodel.hpp"

namespace lcmae {

// ---- learning-rate schedule ----
// Effective lr follows the linear scaling rule base_lr * batch / 256,
// with a linear warmup and a half-cosine decay to zero.
struct ScheduleParams {
    double base_lr = 1.5e-4;
    int64_t batch_size = 8;
    int64_t warmup_steps = 0;
    int64_t total_steps = 1;

    double effective_lr() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
};

double lr_at(int64_t step, const ScheduleParams& sched);

// ---- optimizer ----
struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;  // decoupled; applied to rank>=2 weights only
};

template <typename T>
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
    void step(Graph<T>& g, double lr);
    int64_t steps_taken() const { return t_; }

private:
    AdamWConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// ---- experiment presets ----
struct DataRef {
    std::string path;
    std::string format = "cifar-binary";
    int64_t synth_count = 0;  // used when path is empty
    uint64_t synth_seed = 7;
};

struct ExperimentPreset {
    std::string name = "preset";
    ModelConfig model;
    std::string losses = "b";  // Table-1 letter a..g
    double mask_ratio = 0.75;
    std::string decoder = "transformer";  // transformer | weighted_avg | conv | ae_block
    int64_t ae_block = 0;                 // B in pixels for decoder == ae_block
    DataRef data;
    int64_t steps = 2000;
    double warmup_frac = 0.2;  // desk-scale analog of the 20-of-100-epoch warmup
    int64_t batch = 8;
    double base_lr = 1.5e-4;
    uint64_t seed = 0;
    std::string target_mode = "patch_standardized";
    bool normalized_losses = true;
    std::string projector_input = "decoder_tokens";  // decoder_tokens | pixel_output
    bool lin_standardized_patches = false;
    int64_t log_every = 10;
    int64_t collapse_every = 100;
    int64_t ckpt_every = 0;  // 0 = final only
    uint64_t analysis_mask_seed = 1234;
    AdamWConfig optim;
    std::string paper_scale_note;  // annotation only, never executed

    void validate() const;
    LossFlags flags() const;
    ScheduleParams schedule() const;
};

std::string preset_to_json(const ExperimentPreset& p);
ExperimentPreset preset_from_json(const std::string& json_text);
ExperimentPreset load_preset(const std::string& path);
void save_preset(const ExperimentPreset& p, const std::string& path);

// Built-in presets keyed by name ("table1-a".."table1-g", "mae-default",
// "lcmae-default", "single-image", ...).
std::vector<ExperimentPreset> builtin_presets();

// ---- metrics log ----
struct MetricsRow {
    int64_t step = 0;
    std::optional<double> mae, cross, in;
    double total = 0.0;
    double lr = 0.0;
    std::optional<double> collapse;
    double wall_s = 0.0;  // excluded from reproducibility comparisons
};

struct MetricsLog {
    std::vector<MetricsRow> rows;
    void append(MetricsRow r);
    CsvTable to_csv() const;
    static MetricsLog from_csv(const CsvTable& t);
    // deterministic content only (wall clock stripped)
    std::string replay_fingerprint() const;
};

// ---- training ----
struct TrainOutcome {
    ParamStore<float> params;
    MetricsLog log;
    bool collapsed = false;
    int64_t collapse_step = -1;
    double init_collapse = -1.0;
    double last_collapse = -1.0;
    bool diverged = false;
    std::optional<double> first_mae, last_mae;
    std::string checkpoint_path;
};

Dataset open_dataset(const DataRef& ref);
Dataset synthetic_dataset(int64_t count, uint64_t seed);

// Runs the preset to completion; writes checkpoint + metrics into out_dir
// when non-empty. Divergence (non-finite loss) aborts with the last good
// parameters and sets `diverged`.
TrainOutcome train(const ExperimentPreset& preset, const std::string& out_dir);

// ---- checkpointing ----
void save_params(const ParamStore<float>& params, const std::string& path);
ParamStore<float> load_params(const std::string& path);

// ---- analysis driver ----
struct AnalysisOptions {
    int64_t images = 16;
    int64_t dumps = 2;                  // attention maps written per layer
    std::string ref_features_path;      // checkpoint container with img<i> entries
    bool train_reference = true;        // provider (a): tiny supervised probe
    int64_t reference_steps = 300;
};

// Computes S^attn per decoder layer, S^sim against the reference provider,
// attention distance per layer/head/query-group, and the collapse report;
// writes metrics.csv and attention dumps under out_dir.
CsvTable analyze_model(const ExperimentPreset& preset, const ParamStore<float>& params, const Dataset& ds,
                       const AnalysisOptions& opts, const std::string& out_dir);

ReferenceFeatures train_reference_features(const Dataset& ds, const ModelConfig& cfg,
                                           const std::vector<int64_t>& image_indices, uint64_t seed,
                                           int64_t steps);
ReferenceFeatures load_reference_features(const std::string& path);

// ---- sweeps & reports ----
// kinds: ablation | mask-ratio | decoder-variant | ae-blocks | single-image
std::vector<std::string> sweep_kinds();
int run_sweep(const std::string& kind, const ExperimentPreset& base, const std::string& out_dir);

void emit_report(const std::string& metrics_dir, const std::string& out_dir);

}  // namespace lcmae

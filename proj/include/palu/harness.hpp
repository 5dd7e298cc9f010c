#pragma once

// Experiment orchestration behind the CLI: data generation, pretraining of
// the Original / Retain models, unlearning with any objective, evaluation,
// ablation sweeps and the modelless theory demonstrations.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "palu/datagen.hpp"
#include "palu/metrics.hpp"
#include "palu/objectives.hpp"
#include "palu/toylm.hpp"

namespace palu {

struct PretrainSettings {
    std::size_t epochs = 60;
    std::size_t batch_size = 32;
    double lr = 1e-2;
    // Linear decay of the learning rate to zero over the run.
    bool lr_decay = true;
    std::uint64_t seed = 1;
    double em_threshold = 0.95;
};

struct UnlearnRunSettings {
    Objective objective = Objective::kPalu;
    ObjectiveConfig objective_config;
    std::size_t epochs = 10;
    std::size_t batch_size = 8;
    double lr = 1.5e-3;
    // Linear warmup length, in epochs.
    std::size_t warmup_epochs = 1;
    std::uint64_t seed = 3;
};

struct EvalSettings {
    double min_k_fraction = 0.2;
    bool full_response_em = false;
    std::size_t num_distractors = 4;
    std::uint64_t tr_seed = 11;
};

// One flat JSON document; see configs/default.json for the field list.
struct ExperimentConfig {
    CorpusSpec corpus;
    ModelConfig model;
    std::uint64_t model_seed = 5;
    PretrainSettings pretrain;
    UnlearnRunSettings unlearn;
    EvalSettings eval;

    static ExperimentConfig defaults();
    // Fields absent from `text` keep their defaults, except seeds, which must
    // be present when `require_seeds` is set.
    static ExperimentConfig from_json(const std::string& text, bool require_seeds = false);
    static ExperimentConfig load(const std::string& path);

    // Overrides one field from a JSON scalar (e.g. "10", "\"all\"", "0.5").
    void set(const std::string& key, const std::string& json_value);

    void validate() const;
    std::string to_json() const;  // canonical: sorted keys, every field
    std::uint64_t hash() const;   // FNV-1a over to_json()
    std::string hash_hex() const;
};

struct CorpusSummary {
    std::size_t samples = 0;
    std::size_t entities = 0;
    std::size_t forget_entities = 0;
    std::size_t retain_entities = 0;
    std::size_t forget_samples = 0;
    std::size_t retain_samples = 0;
    std::size_t alias_samples = 0;
    double target_token_ratio = 0.0;
};

CorpusSummary summarize(const Corpus& corpus);

Corpus generate_data(const ExperimentConfig& cfg);

struct PretrainReport {
    bool retain_only = false;
    std::vector<double> epoch_loss;
    double em_forget = 0.0;
    double em_retain = 0.0;
    bool converged = false;
    std::string to_json(const ExperimentConfig& cfg) const;
};

// Trains from scratch on D_f u D_r (Original) or on D_r only (Retain).
// Convergence means EM >= threshold on every split the model was trained on.
Model pretrain(const ExperimentConfig& cfg, const Corpus& corpus, bool retain_only, PretrainReport* report = nullptr);

struct SampleTouch {
    std::size_t sample_id = 0;
    std::size_t initiating = 0;
    std::size_t touched = 0;
};

struct RunReport {
    std::string config_hash;
    std::string objective;
    std::vector<double> epoch_loss;
    std::vector<std::size_t> epoch_touched;
    std::vector<SampleTouch> touched_per_sample;  // from the first epoch
    std::size_t topk_cache_entries = 0;
    MetricReport before;
    MetricReport after;
    std::string to_json(const ExperimentConfig& cfg) const;
};

// Wall-clock seconds per phase. Kept out of the reports so that they are
// reproducible byte for byte.
using PhaseTimings = std::map<std::string, double>;

// Evaluates `model` on the corpus. FQ needs `retain`; flatness, restricted
// entropy and synonym takeover need `reference` (the pre-unlearning model).
MetricReport evaluate(const ExperimentConfig& cfg, const Corpus& corpus, const Model& model,
                      const Model* retain, const Model* reference);

// Snapshots the reference, freezes V_top once, then runs the configured
// epochs over D_f. `before` metrics are computed on `original`.
Model unlearn(const ExperimentConfig& cfg, const Corpus& corpus, const Model& original,
              const Model* retain, RunReport* report = nullptr, PhaseTimings* timings = nullptr);

// Grid over objective x K x N x lambda x target. Returns the summary CSV.
struct SweepGrid {
    ExperimentConfig base;
    std::vector<std::string> objectives{"palu"};
    std::vector<Budget> k;
    std::vector<Budget> n;
    std::vector<double> lambda;
    std::vector<TargetStrategy> target;
    std::optional<std::string> corpus_path;
    std::optional<std::string> original_checkpoint;
    std::optional<std::string> retain_checkpoint;

    static SweepGrid from_json(const std::string& text);
    std::vector<ExperimentConfig> points() const;
};

struct SweepRow {
    std::size_t index = 0;
    ExperimentConfig config;
    bool ok = false;
    std::string error;
    RunReport report;
};

std::string sweep_csv_header();
std::string sweep_csv_row(const SweepRow& row);

// Runs every grid point (up to `jobs` in parallel) against shared Original
// and Retain models. Per-point reports go to out_dir/point_<i>.json when
// out_dir is nonempty. Rows come back in grid order.
std::vector<SweepRow> run_sweep(const SweepGrid& grid, const std::string& out_dir, std::size_t jobs);

// Modelless demonstrations on fixed logit vectors, as CSV
// (section,quantity,value).
std::string demo_theory_csv();

std::string budget_to_string(Budget b);

}  // namespace palu

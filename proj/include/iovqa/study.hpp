#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iovqa/curation.hpp"
#include "iovqa/errors.hpp"
#include "iovqa/evalkit.hpp"
#include "iovqa/scorer.hpp"
#include "iovqa/trainer.hpp"

namespace iovqa {

/// The synthetic benchmark: how many items per split and how they are
/// generated. All arms of a study share one dataset built from this spec.
struct DatasetSpec {
    int n_train = 4000;
    int n_val = 500;
    int n_test = 500;
    int feature_dim = 32;
    int frames_per_video = 8;
    int sample_k = 2;
    double noise_sd = 0.8;
    std::uint64_t seed = 7;

    int total() const { return n_train + n_val + n_test; }
    void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& spec);
void from_json(const nlohmann::json& j, DatasetSpec& spec);

/// Desk-scale stand-in for "model size": actual toy dimensions, never fake
/// parameter counts.
struct ModelSpec {
    std::string name = "base";
    int embed_dim = 64;
    int n_layers = 2;
    int n_heads = 4;
    int context_len = 16;

    void validate() const;
    ScorerConfig scorer_config(const DatasetSpec& dataset, LabelMode mode, int lora_r,
                               double lora_alpha, double lora_dropout) const;
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);

struct StudyArm {
    std::string name;
    bool fine_tune = true;
    TrainConfig train;
};

void to_json(nlohmann::json& j, const StudyArm& arm);
void from_json(const nlohmann::json& j, StudyArm& arm);

struct SizeGrid {
    std::vector<ModelSpec> sizes;
    std::vector<int> lora_rs;
    TrainConfig train;
};

void to_json(nlohmann::json& j, const SizeGrid& grid);
void from_json(const nlohmann::json& j, SizeGrid& grid);

/// One study: dataset spec, model, the labeling arms, training seeds, and
/// the adapter-rank grid. Arms run in declaration order, never reordered.
struct ExperimentPlan {
    DatasetSpec dataset;
    ModelSpec model;
    std::vector<StudyArm> arms;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    SizeGrid grid;
    std::filesystem::path output_dir = "out";  // runs land under <output_dir>/runs/<arm>/<seed>

    /// The stock plan: the four labeling arms (no fine-tune baseline,
    /// decimal labels, integer labels, integer labels with integer-only
    /// mask) plus the grade-head comparison, and a 2x2 size/rank grid.
    static ExperimentPlan standard();
    static ExperimentPlan load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentPlan& plan);
void from_json(const nlohmann::json& j, ExperimentPlan& plan);

struct StudyDataset {
    std::vector<DatasetRecord> train, val, test;
};

/// Generates items, simulates the annotation panel, curates, and splits
/// contiguously (items are exchangeable by construction).
StudyDataset build_dataset(const DatasetSpec& spec);

ScoreVector truth_of(const std::vector<DatasetRecord>& records);

/// One line of a rendered study table. srcc/plcc are per-seed values or
/// means across seeds; the displayed final is always recomputed from them.
struct ReportRow {
    std::string id;
    double srcc = 0.0;
    double plcc = 0.0;
    double final_sd = 0.0;  // sample sd of per-seed finals, 0 for one seed
    int best_epoch = 0;     // 0 means "not fine-tuned"
    int n_seeds = 0;
    bool failed = false;
    std::string error;

    double final_value() const { return 0.5 * (srcc + plcc); }
};

struct ReportTable {
    std::vector<ReportRow> rows;

    /// Aligned text table; metric cells use fixed-point display rounding.
    std::string render(int decimals = 2) const;
    /// id,srcc,plcc,final,final_sd,best_epoch,n_seeds,status at full precision.
    void write_csv(const std::filesystem::path& path) const;
};

struct ArmSeedResult {
    std::string arm;
    std::uint64_t seed = 0;
    double srcc = 0.0, plcc = 0.0, final = 0.0;
    int best_epoch = 0;
    bool failed = false;
    std::string error;
};

struct AblationReport {
    std::vector<ArmSeedResult> per_seed;
    ReportTable table;
    bool ordering_ok = false;   // not_finetuned < decimal <= integer <= masked
    double margin = 0.0;        // mean(integer_masked) - mean(decimal_full)
    bool ordering_checked = false;  // all four canonical arms present and healthy
};

/// One (arm, seed) run against a prebuilt dataset: train if the arm says
/// so, score the test split with the best checkpoint, write preds.csv and
/// summary.json under output_dir/runs/<arm>/<seed>/. Divergence and
/// degenerate evaluation are captured in the result, not thrown.
ArmSeedResult run_arm_seed(const ExperimentPlan& plan, const StudyArm& arm, std::uint64_t seed,
                           const StudyDataset& ds);

/// Groups per-seed rows by arm (first-appearance order) into table rows
/// with mean srcc/plcc and the sample sd of per-seed finals.
ReportTable summarize_per_seed(const std::vector<ArmSeedResult>& results);

void write_per_seed_csv(const std::vector<ArmSeedResult>& rows,
                        const std::filesystem::path& path);
std::vector<ArmSeedResult> read_per_seed_csv(const std::filesystem::path& path);

/// Trains every (arm, seed) pair on the shared dataset, evaluates the best
/// checkpoint on the test split, and writes per-run artifacts under
/// output_dir/runs/<arm>/<seed>/ plus study-level CSVs and a text table.
/// A diverging run becomes a FAILED row; the study continues.
AblationReport run_ablation(const ExperimentPlan& plan);

struct GridReport {
    std::vector<ArmSeedResult> per_cell;  // arm = "<size>/r<lora_r>"
    ReportTable table;
};

/// Adapter-only fine-tuning across sizes x ranks with the plan's first
/// seed; one row per cell with its best epoch.
GridReport run_size_grid(const ExperimentPlan& plan);

/// "fnv1a64:<16 hex digits>" over the file bytes.
std::string file_content_hash(const std::filesystem::path& path);

/// Run provenance: command, config snapshot, and content hashes of inputs
/// and outputs. Deliberately carries no timestamps so reruns are
/// byte-identical.
void write_manifest(const std::filesystem::path& path, const std::string& command,
                    const nlohmann::ordered_json& config_snapshot,
                    const std::vector<std::filesystem::path>& inputs,
                    const std::vector<std::filesystem::path>& outputs);

}  // namespace iovqa

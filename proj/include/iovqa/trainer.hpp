#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iovqa/curation.hpp"
#include "iovqa/errors.hpp"
#include "iovqa/evalkit.hpp"
#include "iovqa/scorer.hpp"

namespace iovqa {

/// The four experimental arms, named by what the loss sees.
enum class LabelMode { integer_masked, integer_full, decimal_full, grade_head };

std::string to_string(LabelMode mode);
LabelMode label_mode_from_string(const std::string& name);

struct TrainConfig {
    double learning_rate = 3e-4;
    double weight_decay = 1e-4;
    double warmup_ratio = 0.1;
    std::string schedule = "cosine";
    double adam_epsilon = 1e-8;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    int epochs = 6;
    int lora_r = 32;  // 0 trains all parameters; > 0 trains adapters only
    double lora_alpha = 32.0;
    double lora_dropout = 0.1;
    int batch_size = 32;
    std::uint64_t seed = 1;
    LabelMode label_mode = LabelMode::integer_masked;

    void validate() const;
};

/// Flat JSON document mirroring the field names.
void to_json(nlohmann::json& j, const TrainConfig& config);
void from_json(const nlohmann::json& j, TrainConfig& config);

/// Mean over masked positions of -log softmax(logits)[target]. Positions
/// with mask false contribute nothing, so corrupting their targets cannot
/// change the loss. All-false mask is an error: a silent zero would hide
/// curation bugs. When dlogits is given it receives d(loss)/d(logits).
double masked_cross_entropy(const Mat& logits, const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask, Mat* dlogits = nullptr);

/// Squared error between the grade-head score and the decimal MOS.
double grade_head_loss(double pred_score, double mos);

/// Linear warmup from 0 over ceil(warmup_ratio * total_steps) steps, then
/// cosine decay to exactly 0 at total_steps. Continuous at the boundary,
/// where it equals learning_rate exactly.
double lr_at(long long step, long long total_steps, const TrainConfig& config);

/// Optimizer state: step counter plus first/second moment accumulators
/// shaped like the parameters. Only `trainable` entries move.
struct TrainState {
    long long step = 0;
    ParamStore m, v;
    std::vector<int> trainable;  // entry indices into the model's ParamStore
    double current_lr = 0.0;
};

TrainState make_train_state(const ScorerModel& model, bool lora_only);

/// One decoupled-weight-decay update: bias-corrected moments, then
/// p -= lr * (mhat / (sqrt(vhat) + eps) + weight_decay * p).
/// Non-finite gradients abort with the failing step index.
void adam_step(TrainState& state, ScorerModel& model, const ParamStore& grads,
               const TrainConfig& config, double lr);

/// A packed batch plus its shifted targets and loss mask (aligned to
/// inputs rows). `mos` carries the regression target for grade_head.
struct TrainBatch {
    PackedBatch inputs;
    std::vector<int> targets;
    std::vector<std::uint8_t> loss_mask;
    std::vector<double> mos;
    LabelMode mode = LabelMode::integer_masked;
};

/// Sequence layout per record (k = frames per record):
///   integer arms:  [FEAT x k][PROMPT][BOS][d1][d2][EOS]
///   decimal arm:   [FEAT x k][PROMPT][BOS][dI][.][dF][EOS]
///   grade arm:     [FEAT x k][PROMPT][BOS][LABEL_1]   (no shift, no CE)
/// For the CE arms inputs drop the last token and targets drop the first;
/// integer_masked restricts the mask to the two score digits.
TrainBatch build_train_batch(const std::vector<DatasetRecord>& records,
                             const std::vector<std::size_t>& indices, LabelMode mode,
                             const Vocabulary& vocab, int feature_dim);

/// Forward + loss + full backward for one batch; grads must share the
/// model's layout and is accumulated into.
double loss_and_grads(const ScorerModel& model, const TrainBatch& batch, ParamStore& grads);

/// Model predictions on the MOS scale for a record list. Integer decodes
/// above 50 are clamped to 50 (tens digit 5 with a nonzero ones digit);
/// decimal decodes clamp to 5.0.
ScoreVector predict_scores(const ScorerModel& model, const std::vector<DatasetRecord>& records,
                           const Vocabulary& vocab, LabelMode mode, int batch_size = 64);

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_srcc = 0.0;
    double val_plcc = 0.0;
    double val_final = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = 0;  // argmax of val_final, earliest on ties
    std::filesystem::path best_checkpoint;
};

/// CSV: epoch,train_loss,val_srcc,val_plcc,val_final (full precision).
void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path);
std::vector<EpochStats> read_history_csv(const std::filesystem::path& path);

/// Full training loop: seeded shuffling, per-step cosine schedule, one
/// atomically written checkpoint per epoch under run_dir/checkpoints, and
/// per-epoch validation scoring into run_dir/history.csv.
TrainResult train(ScorerModel& model, const std::vector<DatasetRecord>& train_records,
                  const std::vector<DatasetRecord>& val_records, const TrainConfig& config,
                  const Vocabulary& vocab, const std::filesystem::path& run_dir);

namespace detail {
/// grad_scale multiplies the analytic gradient before comparison; tests use
/// -1 to prove the checker catches a sign flip.
double gradient_check_impl(const ScorerModel& model, const TrainBatch& batch, double eps,
                           int max_samples, std::uint64_t seed, double grad_scale);
}  // namespace detail

/// Central finite differences against the analytic gradient on up to
/// max_samples randomly chosen parameters; returns the max relative error
/// rel = |a - n| / max(|a|, |n|, 1e-6).
double gradient_check(const ScorerModel& model, const TrainBatch& batch, double eps,
                      int max_samples = 200, std::uint64_t seed = 17);

}  // namespace iovqa

#include "iovqa/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "iovqa/rng.hpp"
#include "iovqa/strings.hpp"

namespace iovqa {

std::string to_string(LabelMode mode) {
    switch (mode) {
        case LabelMode::integer_masked: return "integer_masked";
        case LabelMode::integer_full: return "integer_full";
        case LabelMode::decimal_full: return "decimal_full";
        case LabelMode::grade_head: return "grade_head";
    }
    throw InvalidArgument("label mode: bad enum value");
}

LabelMode label_mode_from_string(const std::string& name) {
    if (name == "integer_masked") return LabelMode::integer_masked;
    if (name == "integer_full") return LabelMode::integer_full;
    if (name == "decimal_full") return LabelMode::decimal_full;
    if (name == "grade_head") return LabelMode::grade_head;
    throw InvalidArgument("label mode: unknown name " + name);
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("train config: learning_rate must be > 0");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("train config: weight_decay must be >= 0");
    if (!(warmup_ratio > 0.0 && warmup_ratio < 1.0))
        throw InvalidArgument("train config: warmup_ratio must be in (0,1)");
    if (schedule != "cosine")
        throw InvalidArgument("train config: unsupported schedule " + schedule);
    if (!(adam_epsilon > 0.0)) throw InvalidArgument("train config: adam_epsilon must be > 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0))
        throw InvalidArgument("train config: adam_beta1 must be in (0,1)");
    if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0))
        throw InvalidArgument("train config: adam_beta2 must be in (0,1)");
    if (epochs < 1) throw InvalidArgument("train config: epochs must be >= 1");
    if (lora_r < 0) throw InvalidArgument("train config: lora_r must be >= 0");
    if (lora_r > 0 && !(lora_alpha > 0.0))
        throw InvalidArgument("train config: lora_alpha must be > 0");
    if (!(lora_dropout >= 0.0 && lora_dropout < 1.0))
        throw InvalidArgument("train config: lora_dropout must be in [0,1)");
    if (batch_size < 1) throw InvalidArgument("train config: batch_size must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& config) {
    j = nlohmann::json{{"learning_rate", config.learning_rate},
                       {"weight_decay", config.weight_decay},
                       {"warmup_ratio", config.warmup_ratio},
                       {"schedule", config.schedule},
                       {"adam_epsilon", config.adam_epsilon},
                       {"adam_beta1", config.adam_beta1},
                       {"adam_beta2", config.adam_beta2},
                       {"epochs", config.epochs},
                       {"lora_r", config.lora_r},
                       {"lora_alpha", config.lora_alpha},
                       {"lora_dropout", config.lora_dropout},
                       {"batch_size", config.batch_size},
                       {"seed", config.seed},
                       {"label_mode", to_string(config.label_mode)}};
}

void from_json(const nlohmann::json& j, TrainConfig& config) {
    TrainConfig defaults;
    config.learning_rate = j.value("learning_rate", defaults.learning_rate);
    config.weight_decay = j.value("weight_decay", defaults.weight_decay);
    config.warmup_ratio = j.value("warmup_ratio", defaults.warmup_ratio);
    config.schedule = j.value("schedule", defaults.schedule);
    config.adam_epsilon = j.value("adam_epsilon", defaults.adam_epsilon);
    config.adam_beta1 = j.value("adam_beta1", defaults.adam_beta1);
    config.adam_beta2 = j.value("adam_beta2", defaults.adam_beta2);
    config.epochs = j.value("epochs", defaults.epochs);
    config.lora_r = j.value("lora_r", defaults.lora_r);
    config.lora_alpha = j.value("lora_alpha", defaults.lora_alpha);
    config.lora_dropout = j.value("lora_dropout", defaults.lora_dropout);
    config.batch_size = j.value("batch_size", defaults.batch_size);
    config.seed = j.value("seed", defaults.seed);
    config.label_mode = label_mode_from_string(
        j.value("label_mode", to_string(defaults.label_mode)));
    config.validate();
}

double masked_cross_entropy(const Mat& logits, const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask, Mat* dlogits) {
    const Eigen::Index n = logits.rows(), v = logits.cols();
    if (targets.size() != static_cast<std::size_t>(n) ||
        mask.size() != static_cast<std::size_t>(n))
        throw InvalidArgument("masked_cross_entropy: shape mismatch");
    long long count = 0;
    for (auto m : mask) count += m ? 1 : 0;
    if (count == 0)
        throw InvalidArgument("masked_cross_entropy: all-false mask (no loss positions)");

    if (dlogits) dlogits->setZero(n, v);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!mask[static_cast<std::size_t>(i)]) continue;
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= v)
            throw InvalidArgument("masked_cross_entropy: target out of range at row " +
                                  std::to_string(i));
        const double mx = logits.row(i).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < v; ++j) z += std::exp(logits(i, j) - mx);
        const double lse = mx + std::log(z);
        sum += lse - logits(i, t);
        if (dlogits) {
            for (Eigen::Index j = 0; j < v; ++j)
                (*dlogits)(i, j) = std::exp(logits(i, j) - lse) / static_cast<double>(count);
            (*dlogits)(i, t) -= 1.0 / static_cast<double>(count);
        }
    }
    return sum / static_cast<double>(count);
}

double grade_head_loss(double pred_score, double mos) {
    if (!(mos >= 1.0 && mos <= 5.0))
        throw InvalidArgument("grade_head_loss: mos must be in [1,5]");
    const double d = pred_score - mos;
    return d * d;
}

double lr_at(long long step, long long total_steps, const TrainConfig& config) {
    config.validate();
    if (total_steps < 1) throw InvalidArgument("lr_at: total_steps must be >= 1");
    if (step < 0 || step > total_steps)
        throw InvalidArgument("lr_at: step must be in [0, total_steps]");
    if (step == total_steps) return 0.0;
    // The tiny shave keeps ceil() at the mathematical value when
    // warmup_ratio * total_steps lands a hair above an integer in floating
    // point (0.1 * 400 -> 40.000000000000006).
    const long long warm = std::max<long long>(
        1, static_cast<long long>(std::ceil(config.warmup_ratio * total_steps - 1e-9)));
    if (step <= warm)
        return config.learning_rate * static_cast<double>(step) / static_cast<double>(warm);
    const double frac =
        static_cast<double>(step - warm) / static_cast<double>(total_steps - warm);
    return config.learning_rate * 0.5 * (1.0 + std::cos(kPi * frac));
}

TrainState make_train_state(const ScorerModel& model, bool lora_only) {
    TrainState state;
    state.m = model.params().like_zeros();
    state.v = model.params().like_zeros();
    for (const auto& name : model.trainable_entries(lora_only))
        state.trainable.push_back(model.params().index(name));
    return state;
}

void adam_step(TrainState& state, ScorerModel& model, const ParamStore& grads,
               const TrainConfig& config, double lr) {
    if (grads.size() != model.params().size())
        throw InvalidArgument("adam_step: gradient layout mismatch");
    state.step += 1;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    auto& p = model.params().raw();
    auto& m = state.m.raw();
    auto& v = state.v.raw();
    const auto& g = grads.raw();
    const auto& entries = model.params().entries();
    for (int ei : state.trainable) {
        const auto& e = entries[static_cast<std::size_t>(ei)];
        for (std::size_t i = e.offset; i < e.offset + e.count(); ++i) {
            if (!std::isfinite(g[i]))
                throw TrainingDiverged("adam_step: non-finite gradient in " + e.name,
                                       state.step);
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + config.adam_epsilon) +
                          config.weight_decay * p[i]);
        }
    }
    state.current_lr = lr;
}

TrainBatch build_train_batch(const std::vector<DatasetRecord>& records,
                             const std::vector<std::size_t>& indices, LabelMode mode,
                             const Vocabulary& vocab, int feature_dim) {
    if (indices.empty()) throw InvalidArgument("build_train_batch: empty batch");
    const auto& first = records.at(indices.front());
    const int k = static_cast<int>(first.sampled_features.size());
    if (k < 1) throw InvalidArgument("build_train_batch: record without features");

    std::vector<std::vector<int>> full_ids(indices.size());
    for (std::size_t s = 0; s < indices.size(); ++s) {
        const auto& rec = records.at(indices[s]);
        if (static_cast<int>(rec.sampled_features.size()) != k)
            throw InvalidArgument("build_train_batch: inconsistent frame count in batch");
        auto& ids = full_ids[s];
        ids.assign(static_cast<std::size_t>(k), vocab.feature_slot());
        ids.push_back(vocab.prompt_slot());
        ids.push_back(vocab.bos());
        switch (mode) {
            case LabelMode::integer_masked:
            case LabelMode::integer_full: {
                const auto digits = encode_integer_score(rec.label, vocab);
                ids.push_back(digits[0]);
                ids.push_back(digits[1]);
                ids.push_back(vocab.eos());
                break;
            }
            case LabelMode::decimal_full: {
                const auto toks = encode_decimal_score(rec.mos, vocab);
                ids.insert(ids.end(), toks.begin(), toks.end());
                ids.push_back(vocab.eos());
                break;
            }
            case LabelMode::grade_head:
                ids.push_back(vocab.label1());
                break;
        }
    }

    const bool shifted = mode != LabelMode::grade_head;
    const int full_len = static_cast<int>(full_ids.front().size());
    const int in_len = shifted ? full_len - 1 : full_len;

    TrainBatch tb;
    tb.mode = mode;
    tb.inputs.batch = static_cast<int>(indices.size());
    tb.inputs.len = in_len;
    tb.inputs.ids.assign(static_cast<std::size_t>(tb.inputs.rows()), vocab.pad());
    tb.inputs.lengths.assign(indices.size(), in_len);
    tb.inputs.is_feature.assign(static_cast<std::size_t>(tb.inputs.rows()), 0);
    tb.inputs.features = Mat::Zero(tb.inputs.rows(), feature_dim);
    tb.targets.assign(static_cast<std::size_t>(tb.inputs.rows()), vocab.pad());
    tb.loss_mask.assign(static_cast<std::size_t>(tb.inputs.rows()), 0);

    for (std::size_t s = 0; s < indices.size(); ++s) {
        const auto& rec = records.at(indices[s]);
        const auto& ids = full_ids[s];
        const std::size_t base = s * static_cast<std::size_t>(in_len);
        for (int t = 0; t < in_len; ++t) {
            tb.inputs.ids[base + static_cast<std::size_t>(t)] = ids[static_cast<std::size_t>(t)];
            if (t < k) {
                tb.inputs.is_feature[base + static_cast<std::size_t>(t)] = 1;
                const auto& frame = rec.sampled_features[static_cast<std::size_t>(t)];
                if (static_cast<int>(frame.size()) != feature_dim)
                    throw InvalidArgument("build_train_batch: feature_dim mismatch for " +
                                          rec.item_id);
                for (int f = 0; f < feature_dim; ++f)
                    tb.inputs.features(static_cast<Eigen::Index>(base) + t, f) =
                        frame[static_cast<std::size_t>(f)];
            }
        }
        if (shifted) {
            TokenSequence targets(std::vector<int>(ids.begin() + 1, ids.end()));
            if (mode == LabelMode::integer_masked) {
                targets.score_span = std::make_pair(k + 1, k + 3);
                targets = build_integer_only_mask(std::move(targets));
            } else {
                targets = build_full_mask(std::move(targets), vocab);
            }
            for (int t = 0; t < in_len; ++t) {
                tb.targets[base + static_cast<std::size_t>(t)] =
                    targets.ids[static_cast<std::size_t>(t)];
                tb.loss_mask[base + static_cast<std::size_t>(t)] =
                    targets.loss_mask[static_cast<std::size_t>(t)];
            }
        }
        tb.mos.push_back(rec.mos);
    }
    return tb;
}

namespace {

std::vector<int> last_row_indices(const PackedBatch& batch) {
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(batch.batch));
    for (int b = 0; b < batch.batch; ++b) rows.push_back(b * batch.len + batch.len - 1);
    return rows;
}

double grade_loss_forward(const ScorerModel& model, const TrainBatch& batch,
                          const ForwardResult& fwd, Mat* dlogits5, Mat* hidden_out) {
    const auto rows = last_row_indices(batch.inputs);
    const int b = batch.inputs.batch;
    Mat hidden(b, model.config().embed_dim);
    for (int i = 0; i < b; ++i)
        hidden.row(i) = fwd.final_hidden.row(rows[static_cast<std::size_t>(i)]);
    const Mat logits5 = model.grade_logits(hidden);
    if (dlogits5) dlogits5->setZero(b, 5);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
        Eigen::Matrix<double, 1, 5> row = logits5.row(i);
        const double mx = row.maxCoeff();
        Eigen::Matrix<double, 1, 5> p = (row.array() - mx).exp();
        p /= p.sum();
        double score = 0.0;
        for (int j = 0; j < 5; ++j) score += p(j) * (j + 1);
        const double mos = batch.mos[static_cast<std::size_t>(i)];
        loss += grade_head_loss(score, mos);
        if (dlogits5) {
            const double dscore = 2.0 * (score - mos) / static_cast<double>(b);
            for (int j = 0; j < 5; ++j)
                (*dlogits5)(i, j) = dscore * p(j) * ((j + 1) - score);
        }
    }
    if (hidden_out) *hidden_out = hidden;
    return loss / static_cast<double>(b);
}

double loss_only(const ScorerModel& model, const TrainBatch& batch) {
    const ForwardResult fwd = model.forward(batch.inputs, false);
    if (batch.mode != LabelMode::grade_head)
        return masked_cross_entropy(fwd.logits, batch.targets, batch.loss_mask, nullptr);
    return grade_loss_forward(model, batch, fwd, nullptr, nullptr);
}

}  // namespace

double loss_and_grads(const ScorerModel& model, const TrainBatch& batch, ParamStore& grads) {
    const ForwardResult fwd = model.forward(batch.inputs, true);
    const Eigen::Index rows = batch.inputs.rows();
    const int d = model.config().embed_dim;

    if (batch.mode != LabelMode::grade_head) {
        Mat dlogits;
        const double loss =
            masked_cross_entropy(fwd.logits, batch.targets, batch.loss_mask, &dlogits);
        const Mat dfinal = Mat::Zero(rows, d);
        model.backward(batch.inputs, fwd, dlogits, dfinal, grads);
        return loss;
    }

    Mat dlogits5, hidden;
    const double loss = grade_loss_forward(model, batch, fwd, &dlogits5, &hidden);
    Mat dhidden = Mat::Zero(batch.inputs.batch, d);
    model.grade_backward(hidden, dlogits5, dhidden, grads);
    Mat dfinal = Mat::Zero(rows, d);
    const auto last = last_row_indices(batch.inputs);
    for (int i = 0; i < batch.inputs.batch; ++i)
        dfinal.row(last[static_cast<std::size_t>(i)]) = dhidden.row(i);
    const Mat dlogits = Mat::Zero(rows, model.config().vocab_size);
    model.backward(batch.inputs, fwd, dlogits, dfinal, grads);
    return loss;
}

ScoreVector predict_scores(const ScorerModel& model, const std::vector<DatasetRecord>& records,
                           const Vocabulary& vocab, LabelMode mode, int batch_size) {
    if (batch_size < 1) throw InvalidArgument("predict_scores: batch_size must be >= 1");
    ScoreVector out;
    const int feature_dim = model.config().feature_dim;
    for (std::size_t start = 0; start < records.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop = std::min(records.size(), start + batch_size);
        const int b = static_cast<int>(stop - start);
        const int k = static_cast<int>(records[start].sampled_features.size());
        const int len = k + 2 + (mode == LabelMode::grade_head ? 1 : 0);

        PackedBatch prefixes;
        prefixes.batch = b;
        prefixes.len = len;
        prefixes.ids.assign(static_cast<std::size_t>(b) * len, vocab.pad());
        prefixes.lengths.assign(static_cast<std::size_t>(b), len);
        prefixes.is_feature.assign(static_cast<std::size_t>(b) * len, 0);
        prefixes.features = Mat::Zero(static_cast<Eigen::Index>(b) * len, feature_dim);
        for (int s = 0; s < b; ++s) {
            const auto& rec = records[start + static_cast<std::size_t>(s)];
            if (static_cast<int>(rec.sampled_features.size()) != k)
                throw InvalidArgument("predict_scores: inconsistent frame count");
            const std::size_t base = static_cast<std::size_t>(s) * len;
            for (int t = 0; t < k; ++t) {
                prefixes.ids[base + static_cast<std::size_t>(t)] = vocab.feature_slot();
                prefixes.is_feature[base + static_cast<std::size_t>(t)] = 1;
                const auto& frame = rec.sampled_features[static_cast<std::size_t>(t)];
                if (static_cast<int>(frame.size()) != feature_dim)
                    throw InvalidArgument("predict_scores: feature_dim mismatch for " +
                                          rec.item_id);
                for (int f = 0; f < feature_dim; ++f)
                    prefixes.features(static_cast<Eigen::Index>(base) + t, f) =
                        frame[static_cast<std::size_t>(f)];
            }
            prefixes.ids[base + static_cast<std::size_t>(k)] = vocab.prompt_slot();
            prefixes.ids[base + static_cast<std::size_t>(k) + 1] = vocab.bos();
            if (mode == LabelMode::grade_head)
                prefixes.ids[base + static_cast<std::size_t>(k) + 2] = vocab.label1();
            out.item_ids.push_back(rec.item_id);
        }

        switch (mode) {
            case LabelMode::integer_masked:
            case LabelMode::integer_full: {
                const auto labels = decode_integer_labels(model, std::move(prefixes), vocab);
                for (int label : labels)
                    out.values.push_back(label_to_mos(std::min(label, kMaxLabel)));
                break;
            }
            case LabelMode::decimal_full: {
                const auto scores = decode_decimal_scores(model, std::move(prefixes), vocab);
                for (double s : scores) out.values.push_back(std::min(s, 5.0));
                break;
            }
            case LabelMode::grade_head: {
                const auto scores = grade_head_scores(model, prefixes);
                out.values.insert(out.values.end(), scores.begin(), scores.end());
                break;
            }
        }
    }
    return out;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_history_csv: cannot open " + path.string());
    out << "epoch,train_loss,val_srcc,val_plcc,val_final\n";
    for (const auto& row : history)
        out << row.epoch << ',' << to_shortest(row.train_loss) << ','
            << to_shortest(row.val_srcc) << ',' << to_shortest(row.val_plcc) << ','
            << to_shortest(row.val_final) << '\n';
    if (!out) throw IoError("write_history_csv: write failed for " + path.string());
}

std::vector<EpochStats> read_history_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_history_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "epoch,train_loss,val_srcc,val_plcc,val_final")
        throw IoError("read_history_csv: " + path.string() + ": bad header");
    std::vector<EpochStats> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        EpochStats row;
        double* fields[] = {&row.train_loss, &row.val_srcc, &row.val_plcc, &row.val_final};
        const char* p = line.data();
        const char* end = line.data() + line.size();
        auto res = std::from_chars(p, end, row.epoch);
        if (res.ec != std::errc{}) throw IoError("read_history_csv: bad epoch in " + line);
        p = res.ptr;
        for (double* field : fields) {
            if (p == end || *p != ',')
                throw IoError("read_history_csv: malformed row in " + path.string());
            ++p;
            res = std::from_chars(p, end, *field);
            if (res.ec != std::errc{})
                throw IoError("read_history_csv: bad value in " + path.string());
            p = res.ptr;
        }
        if (p != end) throw IoError("read_history_csv: trailing data in " + path.string());
        rows.push_back(row);
    }
    return rows;
}

TrainResult train(ScorerModel& model, const std::vector<DatasetRecord>& train_records,
                  const std::vector<DatasetRecord>& val_records, const TrainConfig& config,
                  const Vocabulary& vocab, const std::filesystem::path& run_dir) {
    config.validate();
    if (train_records.empty()) throw InvalidArgument("train: empty training set");
    if (val_records.empty()) throw InvalidArgument("train: empty validation set");
    if (config.label_mode == LabelMode::grade_head && !model.config().grade_head)
        throw InvalidArgument("train: grade_head mode requires a model with a grade head");
    if (config.lora_r > 0 && model.config().lora_r != config.lora_r)
        throw InvalidArgument("train: model adapters do not match configured lora_r");

    std::filesystem::create_directories(run_dir / "checkpoints");

    const std::size_t n = train_records.size();
    const long long steps_per_epoch =
        static_cast<long long>((n + config.batch_size - 1) / config.batch_size);
    const long long total_steps = steps_per_epoch * config.epochs;

    TrainState state = make_train_state(model, config.lora_r > 0);
    ParamStore grads = model.params().like_zeros();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    double best_final = -std::numeric_limits<double>::infinity();

    ScoreVector truth;
    for (const auto& rec : val_records) {
        truth.item_ids.push_back(rec.item_id);
        truth.values.push_back(rec.mos);
    }

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        SplitMix64 rng(derive_seed(config.seed, "epoch_" + std::to_string(epoch)));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);

        double loss_sum = 0.0;
        long long batches = 0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(n, start + config.batch_size);
            const std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(stop));
            const TrainBatch batch = build_train_batch(train_records, chunk, config.label_mode,
                                                       vocab, model.config().feature_dim);
            grads.set_zero();
            const double loss = loss_and_grads(model, batch, grads);
            if (!std::isfinite(loss))
                throw TrainingDiverged("train: non-finite loss", state.step + 1);
            adam_step(state, model, grads, config, lr_at(state.step + 1, total_steps, config));
            loss_sum += loss;
            ++batches;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(batches);
        const ScoreVector pred =
            predict_scores(model, val_records, vocab, config.label_mode, config.batch_size);
        try {
            const EvalSummary s = evaluate(pred, truth);
            stats.val_srcc = s.srcc;
            stats.val_plcc = s.plcc;
            stats.val_final = s.final;
        } catch (const DegenerateInput&) {
            // Constant predictions (every item decoding to one label) carry
            // no ranking information; score the epoch 0 rather than abort.
            stats.val_srcc = 0.0;
            stats.val_plcc = 0.0;
            stats.val_final = 0.0;
        }
        result.history.push_back(stats);

        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
        const auto ckpt = run_dir / "checkpoints" / name;
        const auto tmp = run_dir / "checkpoints" / (std::string(name) + ".tmp");
        model.save(tmp);
        std::filesystem::rename(tmp, ckpt);

        if (stats.val_final > best_final) {
            best_final = stats.val_final;
            result.best_epoch = epoch;
            result.best_checkpoint = ckpt;
        }
    }

    write_history_csv(result.history, run_dir / "history.csv");
    return result;
}

namespace detail {

double gradient_check_impl(const ScorerModel& model, const TrainBatch& batch, double eps,
                           int max_samples, std::uint64_t seed, double grad_scale) {
    if (!(eps >= 1e-6 && eps <= 1e-3))
        throw InvalidArgument("gradient_check: eps must be in [1e-6, 1e-3]");
    if (max_samples < 1) throw InvalidArgument("gradient_check: max_samples must be >= 1");

    ParamStore grads = model.params().like_zeros();
    loss_and_grads(model, batch, grads);

    const std::size_t total = model.params().size();
    std::vector<std::size_t> picks;
    if (total <= static_cast<std::size_t>(max_samples)) {
        picks.resize(total);
        std::iota(picks.begin(), picks.end(), std::size_t{0});
    } else {
        SplitMix64 rng(derive_seed(seed, "gradient_check"));
        std::vector<std::uint8_t> taken(total, 0);
        while (picks.size() < static_cast<std::size_t>(max_samples)) {
            const std::size_t i = static_cast<std::size_t>(rng.below(total));
            if (!taken[i]) {
                taken[i] = 1;
                picks.push_back(i);
            }
        }
    }

    ScorerModel probe = model;
    double max_rel = 0.0;
    for (std::size_t i : picks) {
        const double orig = probe.params().raw()[i];
        probe.params().raw()[i] = orig + eps;
        const double lp = loss_only(probe, batch);
        probe.params().raw()[i] = orig - eps;
        const double lm = loss_only(probe, batch);
        probe.params().raw()[i] = orig;
        const double numeric = (lp - lm) / (2.0 * eps);
        const double analytic = grad_scale * grads.raw()[i];
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace detail

double gradient_check(const ScorerModel& model, const TrainBatch& batch, double eps,
                      int max_samples, std::uint64_t seed) {
    return detail::gradient_check_impl(model, batch, eps, max_samples, seed, 1.0);
}

}  // namespace iovqa

#include "iovqa/study.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "iovqa/rng.hpp"
#include "iovqa/strings.hpp"
#include "iovqa/synthetic.hpp"

namespace iovqa {

void DatasetSpec::validate() const {
    if (n_train < 1 || n_val < 2 || n_test < 2)
        throw InvalidArgument("dataset spec: splits too small to train and correlate");
    if (feature_dim < 1) throw InvalidArgument("dataset spec: feature_dim must be >= 1");
    if (frames_per_video < 1)
        throw InvalidArgument("dataset spec: frames_per_video must be >= 1");
    if (sample_k != 1 && sample_k != 2)
        throw InvalidArgument("dataset spec: sample_k must be 1 or 2");
    if (!(noise_sd >= 0.0)) throw InvalidArgument("dataset spec: noise_sd must be >= 0");
}

void to_json(nlohmann::json& j, const DatasetSpec& spec) {
    j = nlohmann::json{{"n_train", spec.n_train},
                       {"n_val", spec.n_val},
                       {"n_test", spec.n_test},
                       {"feature_dim", spec.feature_dim},
                       {"frames_per_video", spec.frames_per_video},
                       {"sample_k", spec.sample_k},
                       {"noise_sd", spec.noise_sd},
                       {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, DatasetSpec& spec) {
    DatasetSpec d;
    spec.n_train = j.value("n_train", d.n_train);
    spec.n_val = j.value("n_val", d.n_val);
    spec.n_test = j.value("n_test", d.n_test);
    spec.feature_dim = j.value("feature_dim", d.feature_dim);
    spec.frames_per_video = j.value("frames_per_video", d.frames_per_video);
    spec.sample_k = j.value("sample_k", d.sample_k);
    spec.noise_sd = j.value("noise_sd", d.noise_sd);
    spec.seed = j.value("seed", d.seed);
    spec.validate();
}

void ModelSpec::validate() const {
    if (name.empty()) throw InvalidArgument("model spec: empty name");
    if (embed_dim < 1 || n_layers < 1 || n_heads < 1 || context_len < 8)
        throw InvalidArgument("model spec: bad dimensions for " + name);
    if (embed_dim % n_heads != 0)
        throw InvalidArgument("model spec: n_heads must divide embed_dim for " + name);
}

ScorerConfig ModelSpec::scorer_config(const DatasetSpec& dataset, LabelMode mode, int lora_r,
                                      double lora_alpha, double lora_dropout) const {
    validate();
    ScorerConfig sc;
    sc.vocab_size = Vocabulary::standard().size();
    sc.context_len = context_len;
    sc.embed_dim = embed_dim;
    sc.n_layers = n_layers;
    sc.n_heads = n_heads;
    sc.feature_dim = dataset.feature_dim;
    sc.grade_head = mode == LabelMode::grade_head;
    sc.lora_r = lora_r;
    sc.lora_alpha = lora_alpha;
    sc.lora_dropout = lora_dropout;
    sc.validate();
    return sc;
}

void to_json(nlohmann::json& j, const ModelSpec& spec) {
    j = nlohmann::json{{"name", spec.name},
                       {"embed_dim", spec.embed_dim},
                       {"n_layers", spec.n_layers},
                       {"n_heads", spec.n_heads},
                       {"context_len", spec.context_len}};
}

void from_json(const nlohmann::json& j, ModelSpec& spec) {
    ModelSpec d;
    spec.name = j.value("name", d.name);
    spec.embed_dim = j.value("embed_dim", d.embed_dim);
    spec.n_layers = j.value("n_layers", d.n_layers);
    spec.n_heads = j.value("n_heads", d.n_heads);
    spec.context_len = j.value("context_len", d.context_len);
    spec.validate();
}

void to_json(nlohmann::json& j, const StudyArm& arm) {
    j = nlohmann::json{{"name", arm.name}, {"fine_tune", arm.fine_tune}, {"train", arm.train}};
}

void from_json(const nlohmann::json& j, StudyArm& arm) {
    arm.name = j.at("name").get<std::string>();
    arm.fine_tune = j.value("fine_tune", true);
    arm.train = j.value("train", TrainConfig{});
}

void to_json(nlohmann::json& j, const SizeGrid& grid) {
    j = nlohmann::json{{"sizes", grid.sizes}, {"lora_rs", grid.lora_rs}, {"train", grid.train}};
}

void from_json(const nlohmann::json& j, SizeGrid& grid) {
    grid.sizes = j.value("sizes", std::vector<ModelSpec>{});
    grid.lora_rs = j.value("lora_rs", std::vector<int>{});
    grid.train = j.value("train", TrainConfig{});
}

ExperimentPlan ExperimentPlan::standard() {
    ExperimentPlan plan;

    TrainConfig full;
    full.lora_r = 0;  // full-parameter updates for the tiny model
    // Three epochs, not the recipe's six: the synthetic task saturates by
    // epoch four, and the labeling arms differ in convergence speed, not in
    // their ceiling. The ablation must sample the pre-saturation regime to
    // measure anything.
    full.epochs = 3;

    StudyArm not_ft{"not_finetuned", false, full};
    not_ft.train.label_mode = LabelMode::integer_masked;  // decode path only

    StudyArm decimal{"decimal_full", true, full};
    decimal.train.label_mode = LabelMode::decimal_full;

    StudyArm integer_full{"integer_full", true, full};
    integer_full.train.label_mode = LabelMode::integer_full;

    StudyArm integer_masked{"integer_masked", true, full};
    integer_masked.train.label_mode = LabelMode::integer_masked;

    StudyArm grade{"grade_head", true, full};
    grade.train.label_mode = LabelMode::grade_head;

    plan.arms = {not_ft, decimal, integer_full, integer_masked, grade};

    plan.grid.sizes = {ModelSpec{"small", 32, 1, 2, 16}, ModelSpec{"base", 64, 2, 4, 16}};
    plan.grid.lora_rs = {32, 128};
    plan.grid.train.label_mode = LabelMode::integer_masked;
    plan.grid.train.lora_r = 32;  // per-cell override
    return plan;
}

ExperimentPlan ExperimentPlan::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("experiment plan: cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
        return doc.get<ExperimentPlan>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("experiment plan: " + path.string() + ": " + e.what());
    }
}

void ExperimentPlan::save(const std::filesystem::path& path) const {
    validate();
    std::ofstream out(path);
    if (!out) throw IoError("experiment plan: cannot open " + path.string());
    out << nlohmann::json(*this).dump(2) << '\n';
}

void ExperimentPlan::validate() const {
    dataset.validate();
    model.validate();
    if (arms.empty()) throw InvalidArgument("experiment plan: no arms");
    std::vector<std::string> names;
    for (const auto& arm : arms) {
        if (arm.name.empty()) throw InvalidArgument("experiment plan: arm with empty name");
        arm.train.validate();
        names.push_back(arm.name);
    }
    std::sort(names.begin(), names.end());
    if (std::adjacent_find(names.begin(), names.end()) != names.end())
        throw InvalidArgument("experiment plan: duplicate arm names");
    if (seeds.empty()) throw InvalidArgument("experiment plan: no seeds");
}

void to_json(nlohmann::json& j, const ExperimentPlan& plan) {
    j = nlohmann::json{{"dataset", plan.dataset},     {"model", plan.model},
                       {"arms", plan.arms},           {"seeds", plan.seeds},
                       {"size_grid", plan.grid},      {"output_dir", plan.output_dir.string()}};
}

void from_json(const nlohmann::json& j, ExperimentPlan& plan) {
    ExperimentPlan d;
    plan.dataset = j.value("dataset", d.dataset);
    plan.model = j.value("model", d.model);
    plan.arms = j.value("arms", std::vector<StudyArm>{});
    plan.seeds = j.value("seeds", d.seeds);
    plan.grid = j.value("size_grid", SizeGrid{});
    plan.output_dir = j.value("output_dir", d.output_dir.string());
    plan.validate();
}

StudyDataset build_dataset(const DatasetSpec& spec) {
    spec.validate();
    const auto items =
        generate_items(spec.total(), spec.feature_dim, spec.frames_per_video, spec.seed);
    std::vector<RawRecord> raw;
    raw.reserve(items.size());
    for (const auto& item : items) {
        const auto panel = simulate_annotators(
            item.latent_quality, spec.noise_sd, derive_seed(spec.seed, item.item_id + "/ratings"));
        raw.push_back({item.item_id, item.frame_features, item.user_prompt, panel.mos});
    }
    const auto records = curate(raw, spec.sample_k, PromptTemplate::standard());

    StudyDataset ds;
    auto cut = records.begin();
    ds.train.assign(cut, cut + spec.n_train);
    cut += spec.n_train;
    ds.val.assign(cut, cut + spec.n_val);
    cut += spec.n_val;
    ds.test.assign(cut, cut + spec.n_test);
    return ds;
}

ScoreVector truth_of(const std::vector<DatasetRecord>& records) {
    ScoreVector truth;
    for (const auto& rec : records) {
        truth.item_ids.push_back(rec.item_id);
        truth.values.push_back(rec.mos);
    }
    return truth;
}

std::string ReportTable::render(int decimals) const {
    std::vector<std::array<std::string, 7>> cells;
    cells.push_back({"id", "srcc", "plcc", "final", "sd", "best_epoch", "status"});
    for (const auto& row : rows) {
        if (row.failed) {
            cells.push_back({row.id, "-", "-", "-", "-", "-", "FAILED"});
            continue;
        }
        cells.push_back({row.id, format_fixed(row.srcc, decimals),
                         format_fixed(row.plcc, decimals),
                         format_fixed(row.final_value(), decimals),
                         format_fixed(row.final_sd, decimals),
                         row.best_epoch > 0 ? std::to_string(row.best_epoch) : "-", "ok"});
    }
    std::array<std::size_t, 7> width{};
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c)
            width[c] = std::max(width[c], line[c].size());
    std::ostringstream out;
    for (const auto& line : cells) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            out << line[c];
            if (c + 1 < line.size())
                out << std::string(width[c] - line[c].size() + 2, ' ');
        }
        out << '\n';
    }
    return out.str();
}

void ReportTable::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("report table: cannot open " + path.string());
    out << "id,srcc,plcc,final,final_sd,best_epoch,n_seeds,status\n";
    for (const auto& row : rows) {
        if (row.failed) {
            out << row.id << ",,,,,," << row.n_seeds << ",FAILED\n";
            continue;
        }
        out << row.id << ',' << to_shortest(row.srcc) << ',' << to_shortest(row.plcc) << ','
            << to_shortest(row.final_value()) << ',' << to_shortest(row.final_sd) << ','
            << row.best_epoch << ',' << row.n_seeds << ",ok\n";
    }
    if (!out) throw IoError("report table: write failed for " + path.string());
}

namespace {

ArmSeedResult run_one(const StudyArm& arm, std::uint64_t seed, const ExperimentPlan& plan,
                      const StudyDataset& ds, const Vocabulary& vocab,
                      const ModelSpec& model_spec, const std::filesystem::path& run_dir) {
    ArmSeedResult res;
    res.arm = arm.name;
    res.seed = seed;
    try {
        TrainConfig cfg = arm.train;
        cfg.seed = seed;
        const ScorerConfig sc = model_spec.scorer_config(
            plan.dataset, cfg.label_mode, cfg.lora_r, cfg.lora_alpha, cfg.lora_dropout);
        ScorerModel model = ScorerModel::randomized(sc, derive_seed(seed, "init/" + arm.name));

        std::filesystem::create_directories(run_dir);
        if (arm.fine_tune) {
            const TrainResult tr = train(model, ds.train, ds.val, cfg, vocab, run_dir);
            res.best_epoch = tr.best_epoch;
            model = ScorerModel::load(tr.best_checkpoint);
        }

        const ScoreVector preds =
            predict_scores(model, ds.test, vocab, cfg.label_mode, cfg.batch_size);
        write_scores_csv(preds, run_dir / "preds.csv");

        EvalSummary s;
        bool degenerate = false;
        try {
            s = evaluate(preds, truth_of(ds.test));
        } catch (const DegenerateInput&) {
            // A constant predictor scores zero correlation by convention,
            // the same convention the per-epoch validation uses. Only a
            // diverged run is a failure.
            degenerate = true;
        }
        res.srcc = s.srcc;
        res.plcc = s.plcc;
        res.final = s.final;

        nlohmann::ordered_json summary;
        summary["arm"] = arm.name;
        summary["seed"] = seed;
        summary["best_epoch"] = res.best_epoch;
        summary["degenerate_predictions"] = degenerate;
        summary["test"] = {{"srcc", res.srcc}, {"plcc", res.plcc}, {"final", res.final}};
        std::ofstream out(run_dir / "summary.json");
        out << summary.dump(2) << '\n';
    } catch (const TrainingDiverged& e) {
        res.failed = true;
        res.error = std::string(e.what()) + " (step " + std::to_string(e.step) + ")";
    } catch (const DegenerateInput& e) {
        res.failed = true;
        res.error = e.what();
    }
    return res;
}

}  // namespace

ArmSeedResult run_arm_seed(const ExperimentPlan& plan, const StudyArm& arm, std::uint64_t seed,
                           const StudyDataset& ds) {
    const auto run_dir = plan.output_dir / "runs" / arm.name / std::to_string(seed);
    return run_one(arm, seed, plan, ds, Vocabulary::standard(), plan.model, run_dir);
}

namespace {

ReportRow summarize(const std::string& id, const std::vector<ArmSeedResult>& results) {
    ReportRow row;
    row.id = id;
    std::vector<double> finals;
    double best_seed_final = -2.0;
    for (const auto& r : results) {
        if (r.failed) {
            if (row.error.empty()) row.error = r.error;
            continue;
        }
        row.srcc += r.srcc;
        row.plcc += r.plcc;
        finals.push_back(r.final);
        if (r.final > best_seed_final) {
            best_seed_final = r.final;
            row.best_epoch = r.best_epoch;
        }
    }
    row.n_seeds = static_cast<int>(finals.size());
    if (finals.empty()) {
        row.failed = true;
        return row;
    }
    row.srcc /= row.n_seeds;
    row.plcc /= row.n_seeds;
    if (finals.size() > 1) {
        const double mean = 0.5 * (row.srcc + row.plcc);
        double ss = 0.0;
        for (double f : finals) ss += (f - mean) * (f - mean);
        row.final_sd = std::sqrt(ss / (finals.size() - 1));
    }
    return row;
}

}  // namespace

ReportTable summarize_per_seed(const std::vector<ArmSeedResult>& results) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<ArmSeedResult>> by_arm;
    for (const auto& r : results) {
        if (by_arm.find(r.arm) == by_arm.end()) order.push_back(r.arm);
        by_arm[r.arm].push_back(r);
    }
    ReportTable table;
    for (const auto& name : order) table.rows.push_back(summarize(name, by_arm[name]));
    return table;
}

void write_per_seed_csv(const std::vector<ArmSeedResult>& rows,
                        const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("per-seed csv: cannot open " + path.string());
    out << "arm,seed,srcc,plcc,final,best_epoch,status\n";
    for (const auto& r : rows) {
        out << r.arm << ',' << r.seed << ',';
        if (r.failed)
            out << ",,," << r.best_epoch << ",FAILED\n";
        else
            out << to_shortest(r.srcc) << ',' << to_shortest(r.plcc) << ','
                << to_shortest(r.final) << ',' << r.best_epoch << ",ok\n";
    }
}

std::vector<ArmSeedResult> read_per_seed_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("per-seed csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "arm,seed,srcc,plcc,final,best_epoch,status")
        throw IoError("per-seed csv: bad header in " + path.string());
    std::vector<ArmSeedResult> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                cols.push_back(line.substr(start, i - start));
                start = i + 1;
            }
        }
        if (cols.size() != 7) throw IoError("per-seed csv: bad row: " + line);
        ArmSeedResult r;
        r.arm = cols[0];
        r.seed = std::stoull(cols[1]);
        r.failed = cols[6] == "FAILED";
        r.best_epoch = std::stoi(cols[5]);
        if (!r.failed) {
            r.srcc = std::stod(cols[2]);
            r.plcc = std::stod(cols[3]);
            r.final = std::stod(cols[4]);
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

AblationReport run_ablation(const ExperimentPlan& plan) {
    plan.validate();
    std::filesystem::create_directories(plan.output_dir);
    const StudyDataset ds = build_dataset(plan.dataset);

    AblationReport report;
    for (const auto& arm : plan.arms)  // plan order, never reordered
        for (const auto seed : plan.seeds)
            report.per_seed.push_back(run_arm_seed(plan, arm, seed, ds));
    report.table = summarize_per_seed(report.per_seed);

    std::map<std::string, const ReportRow*> rows_by_id;
    for (const auto& row : report.table.rows) rows_by_id[row.id] = &row;
    const char* canon[] = {"not_finetuned", "decimal_full", "integer_full", "integer_masked"};
    bool have_all = true;
    for (const char* name : canon) {
        const auto it = rows_by_id.find(name);
        if (it == rows_by_id.end() || it->second->failed) have_all = false;
    }
    if (have_all) {
        const double nf = rows_by_id["not_finetuned"]->final_value();
        const double dec = rows_by_id["decimal_full"]->final_value();
        const double intf = rows_by_id["integer_full"]->final_value();
        const double masked = rows_by_id["integer_masked"]->final_value();
        report.ordering_checked = true;
        report.ordering_ok = nf < dec && dec <= intf && intf <= masked;
        report.margin = masked - dec;
    }

    write_per_seed_csv(report.per_seed, plan.output_dir / "ablation_per_seed.csv");
    report.table.write_csv(plan.output_dir / "ablation_summary.csv");
    {
        std::ofstream out(plan.output_dir / "ablation_table.txt");
        out << report.table.render();
    }
    {
        nlohmann::ordered_json doc;
        doc["ordering_checked"] = report.ordering_checked;
        doc["ordering_ok"] = report.ordering_ok;
        doc["margin"] = report.margin;
        auto rows = nlohmann::ordered_json::array();
        for (const auto& row : report.table.rows) {
            nlohmann::ordered_json r;
            r["id"] = row.id;
            r["failed"] = row.failed;
            if (!row.failed) {
                r["srcc"] = row.srcc;
                r["plcc"] = row.plcc;
                r["final"] = row.final_value();
                r["final_sd"] = row.final_sd;
                r["best_epoch"] = row.best_epoch;
            } else {
                r["error"] = row.error;
            }
            r["n_seeds"] = row.n_seeds;
            rows.push_back(std::move(r));
        }
        doc["rows"] = std::move(rows);
        std::ofstream out(plan.output_dir / "ablation_report.json");
        out << doc.dump(2) << '\n';
    }
    return report;
}

GridReport run_size_grid(const ExperimentPlan& plan) {
    plan.validate();
    if (plan.grid.sizes.empty() || plan.grid.lora_rs.empty())
        throw InvalidArgument("size grid: needs at least one size and one rank");
    for (int r : plan.grid.lora_rs)
        if (r < 1) throw InvalidArgument("size grid: adapter ranks must be >= 1");
    std::filesystem::create_directories(plan.output_dir);
    const StudyDataset ds = build_dataset(plan.dataset);
    const Vocabulary vocab = Vocabulary::standard();
    const std::uint64_t seed = plan.seeds.front();

    GridReport report;
    for (const auto& size : plan.grid.sizes) {
        for (const int r : plan.grid.lora_rs) {
            StudyArm cell;
            cell.name = size.name + "/r" + std::to_string(r);
            cell.fine_tune = true;
            cell.train = plan.grid.train;
            cell.train.lora_r = r;
            const auto run_dir =
                plan.output_dir / "grid" / size.name / ("r" + std::to_string(r));
            ArmSeedResult res = run_one(cell, seed, plan, ds, vocab, size, run_dir);
            report.table.rows.push_back(summarize(cell.name, {res}));
            report.per_cell.push_back(std::move(res));
        }
    }

    report.table.write_csv(plan.output_dir / "grid_summary.csv");
    {
        std::ofstream out(plan.output_dir / "grid_table.txt");
        out << report.table.render();
    }
    return report;
}

std::string file_content_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("content hash: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    char out[32];
    std::snprintf(out, sizeof(out), "fnv1a64:%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return out;
}

void write_manifest(const std::filesystem::path& path, const std::string& command,
                    const nlohmann::ordered_json& config_snapshot,
                    const std::vector<std::filesystem::path>& inputs,
                    const std::vector<std::filesystem::path>& outputs) {
    nlohmann::ordered_json doc;
    doc["command"] = command;
    doc["config"] = config_snapshot;
    nlohmann::ordered_json in_hashes = nlohmann::ordered_json::object();
    for (const auto& p : inputs) in_hashes[p.string()] = file_content_hash(p);
    doc["inputs"] = std::move(in_hashes);
    nlohmann::ordered_json out_hashes = nlohmann::ordered_json::object();
    for (const auto& p : outputs) out_hashes[p.string()] = file_content_hash(p);
    doc["outputs"] = std::move(out_hashes);
    std::ofstream out(path);
    if (!out) throw IoError("manifest: cannot open " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("manifest: write failed for " + path.string());
}

}  // namespace iovqa

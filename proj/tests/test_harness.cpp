#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "iovqa/study.hpp"

using namespace iovqa;
namespace fs = std::filesystem;

namespace {

DatasetSpec micro_dataset() {
    DatasetSpec d;
    d.n_train = 40;
    d.n_val = 8;
    d.n_test = 8;
    d.feature_dim = 8;
    d.frames_per_video = 4;
    d.sample_k = 2;
    d.noise_sd = 0.5;
    d.seed = 3;
    return d;
}

ModelSpec micro_model() {
    ModelSpec m;
    m.name = "micro";
    m.embed_dim = 16;
    m.n_layers = 1;
    m.n_heads = 2;
    m.context_len = 16;
    return m;
}

ExperimentPlan micro_plan(const fs::path& out) {
    ExperimentPlan plan;
    plan.dataset = micro_dataset();
    plan.model = micro_model();
    plan.seeds = {1};
    plan.output_dir = out;

    StudyArm baseline;
    baseline.name = "not_finetuned";
    baseline.fine_tune = false;
    baseline.train.lora_r = 0;
    plan.arms.push_back(baseline);

    StudyArm masked;
    masked.name = "integer_masked";
    masked.train.label_mode = LabelMode::integer_masked;
    masked.train.epochs = 1;
    masked.train.batch_size = 16;
    masked.train.lora_r = 0;
    plan.arms.push_back(masked);

    plan.grid.sizes = {micro_model()};
    plan.grid.lora_rs = {2};
    plan.grid.train.epochs = 2;
    plan.grid.train.batch_size = 16;
    plan.grid.train.lora_r = 2;
    return plan;
}

fs::path fresh_dir(const std::string& leaf) {
    const fs::path p = fs::temp_directory_path() / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("plan specs validate and round trip through json") {
    ExperimentPlan plan = ExperimentPlan::standard();
    CHECK_NOTHROW(plan.validate());
    CHECK(plan.arms.size() == 5);
    CHECK(plan.arms[0].name == "not_finetuned");
    CHECK(plan.seeds == std::vector<std::uint64_t>{1, 2, 3});

    nlohmann::json j = plan;
    const auto back = j.get<ExperimentPlan>();
    CHECK(back.arms.size() == plan.arms.size());
    CHECK(back.dataset.n_train == plan.dataset.n_train);
    CHECK(back.model.embed_dim == plan.model.embed_dim);
    CHECK(back.grid.lora_rs == plan.grid.lora_rs);
    for (std::size_t i = 0; i < plan.arms.size(); ++i) {
        CHECK(back.arms[i].name == plan.arms[i].name);
        CHECK(back.arms[i].fine_tune == plan.arms[i].fine_tune);
        CHECK(back.arms[i].train.label_mode == plan.arms[i].train.label_mode);
    }

    ExperimentPlan dup = plan;
    dup.arms[1].name = dup.arms[0].name;
    CHECK_THROWS_AS(dup.validate(), InvalidArgument);

    ExperimentPlan no_seeds = plan;
    no_seeds.seeds.clear();
    CHECK_THROWS_AS(no_seeds.validate(), InvalidArgument);

    DatasetSpec bad = plan.dataset;
    bad.n_val = 1;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = plan.dataset;
    bad.sample_k = 3;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);

    ModelSpec badm = plan.model;
    badm.n_heads = 3;
    CHECK_THROWS_AS(badm.validate(), InvalidArgument);
}

TEST_CASE("plan file round trip") {
    const fs::path p = fs::temp_directory_path() / "iovqa_plan_test.json";
    const ExperimentPlan plan = ExperimentPlan::standard();
    plan.save(p);
    const ExperimentPlan back = ExperimentPlan::load(p);
    CHECK(back.arms.size() == plan.arms.size());
    CHECK(back.dataset.seed == plan.dataset.seed);
    fs::remove(p);
    CHECK_THROWS_AS(ExperimentPlan::load(p), IoError);
}

TEST_CASE("dataset builder splits deterministically and disjointly") {
    const DatasetSpec spec = micro_dataset();
    const StudyDataset ds = build_dataset(spec);
    CHECK(ds.train.size() == 40);
    CHECK(ds.val.size() == 8);
    CHECK(ds.test.size() == 8);

    std::set<std::string> ids;
    for (const auto* split : {&ds.train, &ds.val, &ds.test})
        for (const auto& rec : *split) {
            CHECK(ids.insert(rec.item_id).second);
            CHECK(rec.sampled_features.size() == 2);
            CHECK(rec.sampled_features[0].size() == 8);
            CHECK(rec.label == mos_to_label(rec.mos));
        }
    CHECK(ids.size() == 56);

    const StudyDataset again = build_dataset(spec);
    REQUIRE(again.test.size() == ds.test.size());
    for (std::size_t i = 0; i < ds.test.size(); ++i) {
        CHECK(again.test[i].item_id == ds.test[i].item_id);
        CHECK(again.test[i].mos == ds.test[i].mos);
        CHECK(again.test[i].sampled_features == ds.test[i].sampled_features);
    }

    const ScoreVector truth = truth_of(ds.val);
    CHECK(truth.size() == 8);
    CHECK(truth.values[0] == ds.val[0].mos);
}

TEST_CASE("report rows render display rounding but keep full precision in csv") {
    ReportTable table;
    ReportRow row;
    row.id = "integer_masked";
    row.srcc = 0.71;
    row.plcc = 0.72;
    row.final_sd = 0.004;
    row.best_epoch = 4;
    row.n_seeds = 3;
    table.rows.push_back(row);

    ReportRow failed;
    failed.id = "decimal_full";
    failed.failed = true;
    failed.error = "diverged";
    table.rows.push_back(failed);

    const std::string text = table.render(2);
    CHECK(text.find("0.72") != std::string::npos);   // 0.715 displayed at 2 decimals
    CHECK(text.find("0.715") == std::string::npos);  // display rounding only
    CHECK(text.find("FAILED") != std::string::npos);
    CHECK(text.find("best_epoch") != std::string::npos);

    const fs::path p = fs::temp_directory_path() / "iovqa_report_test.csv";
    table.write_csv(p);
    const std::string csv = read_file(p);
    CHECK(csv.rfind("id,srcc,plcc,final,final_sd,best_epoch,n_seeds,status\n", 0) == 0);
    CHECK(csv.find("0.715") != std::string::npos);  // the csv is the precise record
    CHECK(csv.find(",FAILED") != std::string::npos);
    fs::remove(p);
}

TEST_CASE("per-arm summary matches a hand computation") {
    std::vector<ArmSeedResult> results{
        {"a", 1, 0.90, 0.80, 0.85, 3, false, ""},
        {"a", 2, 0.70, 0.60, 0.65, 5, false, ""},
        {"a", 3, 0.80, 0.70, 0.75, 4, false, ""},
        {"b", 1, 0.50, 0.50, 0.50, 2, false, ""},
        {"b", 2, 0.0, 0.0, 0.0, 0, true, "diverged"},
        {"c", 1, 0.0, 0.0, 0.0, 0, true, "diverged"},
    };
    const ReportTable table = summarize_per_seed(results);
    REQUIRE(table.rows.size() == 3);

    const ReportRow& a = table.rows[0];
    CHECK(a.id == "a");
    CHECK(a.n_seeds == 3);
    CHECK(a.srcc == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(a.plcc == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(a.final_value() == doctest::Approx(0.75).epsilon(1e-15));
    // sample sd of the per-seed finals {0.85, 0.65, 0.75}
    CHECK(a.final_sd == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(a.best_epoch == 3);  // the best seed's epoch
    CHECK(!a.failed);

    const ReportRow& b = table.rows[1];
    CHECK(b.n_seeds == 1);  // the failed seed is excluded
    CHECK(b.final_sd == 0.0);
    CHECK(!b.failed);

    const ReportRow& c = table.rows[2];
    CHECK(c.failed);
    CHECK(c.n_seeds == 0);
    CHECK(c.error == "diverged");
}

TEST_CASE("per-seed csv round trip") {
    const std::vector<ArmSeedResult> rows{
        {"integer_masked", 1, 0.123456789012345, 0.9, 0.5117283945061725, 4, false, ""},
        {"decimal_full", 2, 0.0, 0.0, 0.0, 0, true, "diverged"},
    };
    const fs::path p = fs::temp_directory_path() / "iovqa_per_seed_test.csv";
    write_per_seed_csv(rows, p);
    const auto back = read_per_seed_csv(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].arm == "integer_masked");
    CHECK(back[0].seed == 1);
    CHECK(back[0].srcc == rows[0].srcc);
    CHECK(back[0].plcc == rows[0].plcc);
    CHECK(back[0].final == rows[0].final);
    CHECK(back[0].best_epoch == 4);
    CHECK(!back[0].failed);
    CHECK(back[1].failed);
    CHECK(back[1].seed == 2);
    fs::remove(p);
    CHECK_THROWS_AS(read_per_seed_csv(p), IoError);
}

TEST_CASE("micro ablation produces the full artifact layout and reruns identically") {
    const fs::path out1 = fresh_dir("iovqa_ablate_micro_1");
    const AblationReport rep = run_ablation(micro_plan(out1));

    REQUIRE(rep.per_seed.size() == 2);
    CHECK(rep.per_seed[0].arm == "not_finetuned");  // plan order
    CHECK(rep.per_seed[1].arm == "integer_masked");
    CHECK(!rep.ordering_checked);  // only two of the four canonical arms ran
    REQUIRE(rep.table.rows.size() == 2);
    CHECK(rep.table.rows[0].id == "not_finetuned");
    CHECK(rep.table.rows[0].best_epoch == 0);

    CHECK(fs::exists(out1 / "runs" / "not_finetuned" / "1" / "preds.csv"));
    CHECK(fs::exists(out1 / "runs" / "not_finetuned" / "1" / "summary.json"));
    CHECK(!fs::exists(out1 / "runs" / "not_finetuned" / "1" / "history.csv"));
    const fs::path mrun = out1 / "runs" / "integer_masked" / "1";
    CHECK(fs::exists(mrun / "checkpoints" / "epoch_001.ckpt"));
    CHECK(fs::exists(mrun / "history.csv"));
    CHECK(fs::exists(mrun / "preds.csv"));
    CHECK(fs::exists(mrun / "summary.json"));
    CHECK(fs::exists(out1 / "ablation_per_seed.csv"));
    CHECK(fs::exists(out1 / "ablation_summary.csv"));
    CHECK(fs::exists(out1 / "ablation_table.txt"));
    CHECK(fs::exists(out1 / "ablation_report.json"));

    const fs::path out2 = fresh_dir("iovqa_ablate_micro_2");
    run_ablation(micro_plan(out2));
    for (const char* rel :
         {"ablation_per_seed.csv", "ablation_summary.csv", "ablation_table.txt",
          "ablation_report.json", "runs/integer_masked/1/history.csv",
          "runs/integer_masked/1/preds.csv", "runs/integer_masked/1/checkpoints/epoch_001.ckpt",
          "runs/not_finetuned/1/preds.csv"}) {
        CHECK(file_content_hash(out1 / rel) == file_content_hash(out2 / rel));
    }

    fs::remove_all(out1);
    fs::remove_all(out2);
}

TEST_CASE("size grid reports the argmax epoch of its own history") {
    const fs::path out = fresh_dir("iovqa_grid_micro");
    const ExperimentPlan plan = micro_plan(out);
    const GridReport rep = run_size_grid(plan);
    REQUIRE(rep.per_cell.size() == 1);
    CHECK(rep.per_cell[0].arm == "micro/r2");
    REQUIRE(rep.table.rows.size() == 1);

    const auto history = read_history_csv(out / "grid" / "micro" / "r2" / "history.csv");
    REQUIRE(history.size() == 2);
    int argmax = 1;
    double best = history[0].val_final;
    for (const auto& e : history)
        if (e.val_final > best) {
            best = e.val_final;
            argmax = e.epoch;
        }
    CHECK(rep.per_cell[0].best_epoch == argmax);
    CHECK(fs::exists(out / "grid_summary.csv"));
    CHECK(fs::exists(out / "grid_table.txt"));
    fs::remove_all(out);
}

TEST_CASE("content hashes are stable and format-fixed") {
    const fs::path p = fs::temp_directory_path() / "iovqa_hash_test.txt";
    std::ofstream(p) << "abc";
    const std::string h1 = file_content_hash(p);
    CHECK(h1.rfind("fnv1a64:", 0) == 0);
    CHECK(h1.size() == 8 + 16);
    CHECK(h1 == file_content_hash(p));
    std::ofstream(p) << "abcd";
    CHECK(h1 != file_content_hash(p));
    fs::remove(p);
    CHECK_THROWS_AS(file_content_hash(p), IoError);
}

TEST_CASE("manifests carry hashes and no timestamps") {
    const fs::path dir = fresh_dir("iovqa_manifest_test");
    const fs::path input = dir / "in.txt";
    std::ofstream(input) << "payload";

    const fs::path m1 = dir / "m1.json";
    const fs::path m2 = dir / "m2.json";
    nlohmann::ordered_json snapshot;
    snapshot["n"] = 3;
    write_manifest(m1, "generate --n 3", snapshot, {input}, {input});
    write_manifest(m2, "generate --n 3", snapshot, {input}, {input});
    CHECK(read_file(m1) == read_file(m2));

    const auto doc = nlohmann::json::parse(read_file(m1));
    CHECK(doc.at("command") == "generate --n 3");
    CHECK(doc.at("config").at("n") == 3);
    CHECK(doc.at("inputs").at(input.string()) == file_content_hash(input));
    CHECK(doc.at("outputs").size() == 1);
    for (const auto& [key, value] : doc.items()) {
        CHECK(key != "timestamp");
        CHECK(key != "created_at");
    }
    fs::remove_all(dir);
}

// iovqa: desk-scale laboratory for the integer-label video quality recipe.
// Subcommands cover the full study pipeline: generate, curate, train, eval,
// ablate, ensemble, report. Exit codes: 0 ok, 1 validation error, 2 runtime
// failure.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "iovqa/curation.hpp"
#include "iovqa/errors.hpp"
#include "iovqa/evalkit.hpp"
#include "iovqa/rng.hpp"
#include "iovqa/strings.hpp"
#include "iovqa/study.hpp"
#include "iovqa/synthetic.hpp"

namespace fs = std::filesystem;
using namespace iovqa;

namespace {

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto token = text.substr(start, comma - start);
        if (token.empty()) throw InvalidArgument("seeds: empty entry in '" + text + "'");
        std::size_t used = 0;
        try {
            seeds.push_back(std::stoull(token, &used));
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != token.size())
            throw InvalidArgument("seeds: bad entry '" + token + "'");
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (seeds.empty()) throw InvalidArgument("seeds: empty list");
    return seeds;
}

ExperimentPlan load_plan(const std::string& config_path) {
    if (config_path.empty()) return ExperimentPlan::standard();
    return ExperimentPlan::load(config_path);
}

int cmd_generate(const std::string& out_path, int n, int feature_dim, int frames,
                 double noise_sd, std::uint64_t seed) {
    const auto items = generate_items(n, feature_dim, frames, seed);
    std::vector<AnnotationPanel> panels;
    panels.reserve(items.size());
    for (const auto& item : items)
        panels.push_back(simulate_annotators(item.latent_quality, noise_sd,
                                             derive_seed(seed, item.item_id + "/ratings")));
    emit_raw_dataset(items, panels, out_path);

    nlohmann::ordered_json snapshot{{"n", n},
                                    {"feature_dim", feature_dim},
                                    {"frames", frames},
                                    {"noise_sd", noise_sd},
                                    {"seed", seed}};
    write_manifest(out_path + ".manifest.json", "generate", snapshot, {}, {out_path});
    std::cout << "wrote " << items.size() << " raw items to " << out_path << '\n';
    return 0;
}

int cmd_curate(const std::string& in_path, const std::string& out_path, int sample_k,
               const std::string& template_path) {
    const auto raw = read_raw_dataset(in_path);
    const auto tmpl =
        template_path.empty() ? PromptTemplate::standard() : PromptTemplate::load(template_path);
    const auto records = curate(raw, sample_k, tmpl);
    write_curated(records, out_path);

    nlohmann::ordered_json snapshot{{"sample_k", sample_k},
                                    {"template", template_path.empty() ? "standard"
                                                                       : template_path}};
    std::vector<fs::path> inputs{in_path};
    if (!template_path.empty()) inputs.push_back(template_path);
    write_manifest(out_path + ".manifest.json", "curate", snapshot, inputs, {out_path});
    std::cout << "curated " << records.size() << " records to " << out_path << '\n';
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& arm_name, std::uint64_t seed,
              const std::string& out_dir) {
    ExperimentPlan plan = load_plan(config_path);
    if (!out_dir.empty()) plan.output_dir = out_dir;
    const StudyArm* arm = nullptr;
    for (const auto& a : plan.arms)
        if (a.name == arm_name) arm = &a;
    if (!arm) throw InvalidArgument("train: no arm named '" + arm_name + "' in the plan");

    const StudyDataset ds = build_dataset(plan.dataset);
    const ArmSeedResult res = run_arm_seed(plan, *arm, seed, ds);
    if (res.failed) {
        std::cerr << "run failed: " << res.error << '\n';
        return 2;
    }
    const auto run_dir = plan.output_dir / "runs" / arm->name / std::to_string(seed);

    nlohmann::ordered_json snapshot;
    snapshot["plan"] = nlohmann::json(plan);
    snapshot["arm"] = arm_name;
    snapshot["seed"] = seed;
    std::vector<fs::path> inputs;
    if (!config_path.empty()) inputs.push_back(config_path);
    write_manifest(run_dir / "manifest.json", "train", snapshot, inputs,
                   {run_dir / "preds.csv", run_dir / "summary.json"});
    std::cout << arm_name << " seed=" << seed << " best_epoch=" << res.best_epoch
              << " srcc=" << to_shortest(res.srcc) << " plcc=" << to_shortest(res.plcc)
              << " final=" << to_shortest(res.final) << '\n';
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path) {
    const ScoreVector pred = read_scores_csv(pred_path);
    const ScoreVector truth = read_scores_csv(truth_path);
    const EvalSummary s = evaluate(pred, truth);
    std::cout << "srcc=" << to_shortest(s.srcc) << '\n'
              << "plcc=" << to_shortest(s.plcc) << '\n'
              << "final=" << to_shortest(s.final) << '\n';
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& seeds_csv,
               const std::string& out_dir, bool grid) {
    ExperimentPlan plan = load_plan(config_path);
    if (!seeds_csv.empty()) plan.seeds = parse_seed_list(seeds_csv);
    if (!out_dir.empty()) plan.output_dir = out_dir;
    plan.validate();

    nlohmann::ordered_json snapshot;
    snapshot["plan"] = nlohmann::json(plan);
    std::vector<fs::path> inputs;
    if (!config_path.empty()) inputs.push_back(config_path);

    if (grid) {
        const GridReport report = run_size_grid(plan);
        std::cout << report.table.render();
        write_manifest(plan.output_dir / "grid_manifest.json", "ablate --grid", snapshot, inputs,
                       {plan.output_dir / "grid_summary.csv", plan.output_dir / "grid_table.txt"});
        return 0;
    }

    const AblationReport report = run_ablation(plan);
    std::cout << report.table.render();
    if (report.ordering_checked) {
        std::cout << "ordering not_finetuned < decimal_full <= integer_full <= integer_masked: "
                  << (report.ordering_ok ? "holds" : "VIOLATED")
                  << "  margin=" << to_shortest(report.margin) << '\n';
    } else {
        std::cout << "ordering check skipped (canonical arms missing or failed)\n";
    }
    write_manifest(plan.output_dir / "ablation_manifest.json", "ablate", snapshot, inputs,
                   {plan.output_dir / "ablation_per_seed.csv",
                    plan.output_dir / "ablation_summary.csv",
                    plan.output_dir / "ablation_table.txt",
                    plan.output_dir / "ablation_report.json"});
    return 0;
}

int cmd_ensemble(const std::string& spec_path, const std::vector<std::string>& pred_paths,
                 const std::string& out_path) {
    const EnsembleSpec spec =
        spec_path.empty() ? EnsembleSpec::challenge_default() : EnsembleSpec::load(spec_path);
    spec.validate();

    if (pred_paths.empty()) {
        for (const auto& m : spec.members)
            std::cout << m.name << " weight=" << to_shortest(m.weight) << " scale=" << m.scale
                      << '\n';
        return 0;
    }
    if (pred_paths.size() != spec.members.size())
        throw InvalidArgument("ensemble: " + std::to_string(spec.members.size()) +
                              " members but " + std::to_string(pred_paths.size()) +
                              " prediction files");
    std::vector<ScoreVector> member_scores;
    for (const auto& p : pred_paths) member_scores.push_back(read_scores_csv(p));
    const ScoreVector combined = ensemble(member_scores, spec);

    if (out_path.empty()) {
        for (std::size_t i = 0; i < combined.item_ids.size(); ++i)
            std::cout << combined.item_ids[i] << ',' << to_shortest(combined.values[i]) << '\n';
        return 0;
    }
    write_scores_csv(combined, out_path);
    nlohmann::ordered_json snapshot;
    snapshot["spec"] = spec_path.empty() ? "challenge_default" : spec_path;
    std::vector<fs::path> inputs(pred_paths.begin(), pred_paths.end());
    if (!spec_path.empty()) inputs.push_back(spec_path);
    write_manifest(out_path + ".manifest.json", "ensemble", snapshot, inputs, {out_path});
    std::cout << "wrote " << combined.item_ids.size() << " combined scores to " << out_path
              << '\n';
    return 0;
}

int cmd_report(const std::string& in_path, int decimals, const std::string& txt_path,
               const std::string& csv_path) {
    const auto rows = read_per_seed_csv(in_path);
    const ReportTable table = summarize_per_seed(rows);
    std::cout << table.render(decimals);

    std::vector<fs::path> outputs;
    if (!txt_path.empty()) {
        std::ofstream out(txt_path);
        if (!out) throw IoError("report: cannot open " + txt_path);
        out << table.render(decimals);
        outputs.push_back(txt_path);
    }
    if (!csv_path.empty()) {
        table.write_csv(csv_path);
        outputs.push_back(csv_path);
    }
    if (!outputs.empty()) {
        nlohmann::ordered_json snapshot{{"decimals", decimals}};
        write_manifest(fs::path(in_path).parent_path() / "report_manifest.json", "report",
                       snapshot, {in_path}, outputs);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale IOVQA laboratory"};
    app.require_subcommand(1);
    std::function<int()> action;

    {
        auto* c = app.add_subcommand("generate", "simulate raters and write a raw JSONL dataset");
        auto out = std::make_shared<std::string>();
        auto n = std::make_shared<int>(100);
        auto dim = std::make_shared<int>(32);
        auto frames = std::make_shared<int>(8);
        auto noise = std::make_shared<double>(0.8);
        auto seed = std::make_shared<std::uint64_t>(7);
        c->add_option("--out", *out, "output JSONL path")->required();
        c->add_option("--n", *n, "number of items");
        c->add_option("--feature-dim", *dim, "per-frame feature dimension");
        c->add_option("--frames", *frames, "frames per item");
        c->add_option("--noise-sd", *noise, "annotator noise standard deviation");
        c->add_option("--seed", *seed, "master seed");
        c->callback([=, &action] {
            action = [=] { return cmd_generate(*out, *n, *dim, *frames, *noise, *seed); };
        });
    }
    {
        auto* c = app.add_subcommand("curate", "frame sampling, prompt rendering, labels");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto k = std::make_shared<int>(2);
        auto tmpl = std::make_shared<std::string>();
        c->add_option("--in", *in, "raw JSONL path")->required();
        c->add_option("--out", *out, "curated JSONL path")->required();
        c->add_option("--frames-k", *k, "frames to keep per item (1 or 2)");
        c->add_option("--template", *tmpl, "prompt template file (default built-in)");
        c->callback([=, &action] {
            action = [=] { return cmd_curate(*in, *out, *k, *tmpl); };
        });
    }
    {
        auto* c = app.add_subcommand("train", "train one arm for one seed");
        auto cfg = std::make_shared<std::string>();
        auto arm = std::make_shared<std::string>();
        auto seed = std::make_shared<std::uint64_t>(1);
        auto out = std::make_shared<std::string>();
        c->add_option("--config", *cfg, "experiment plan JSON (default built-in plan)");
        c->add_option("--arm", *arm, "arm name from the plan")->required();
        c->add_option("--seed", *seed, "training seed");
        c->add_option("--out", *out, "output directory override");
        c->callback([=, &action] {
            action = [=] { return cmd_train(*cfg, *arm, *seed, *out); };
        });
    }
    {
        auto* c = app.add_subcommand("eval", "score a prediction CSV against a truth CSV");
        auto pred = std::make_shared<std::string>();
        auto truth = std::make_shared<std::string>();
        c->add_option("--pred", *pred, "predictions CSV (item_id,score)")->required();
        c->add_option("--truth", *truth, "ground truth CSV (item_id,score)")->required();
        c->callback([=, &action] {
            action = [=] { return cmd_eval(*pred, *truth); };
        });
    }
    {
        auto* c = app.add_subcommand("ablate", "run all arms x seeds (or --grid for size x rank)");
        auto cfg = std::make_shared<std::string>();
        auto seeds = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto grid = std::make_shared<bool>(false);
        c->add_option("--config", *cfg, "experiment plan JSON (default built-in plan)");
        c->add_option("--seeds", *seeds, "comma-separated seed override, e.g. 1,2,3");
        c->add_option("--out", *out, "output directory override");
        c->add_flag("--grid", *grid, "run the model-size x adapter-rank grid instead");
        c->callback([=, &action] {
            action = [=] { return cmd_ablate(*cfg, *seeds, *out, *grid); };
        });
    }
    {
        auto* c = app.add_subcommand("ensemble", "combine member prediction CSVs by spec weights");
        auto spec = std::make_shared<std::string>();
        auto preds = std::make_shared<std::vector<std::string>>();
        auto out = std::make_shared<std::string>();
        c->add_option("--spec", *spec, "ensemble spec JSON (default challenge five-member mix)");
        c->add_option("--pred", *preds, "member prediction CSV, repeat once per member");
        c->add_option("--out", *out, "combined CSV path (default print to stdout)");
        c->callback([=, &action] {
            action = [=] { return cmd_ensemble(*spec, *preds, *out); };
        });
    }
    {
        auto* c = app.add_subcommand("report", "aggregate a per-seed CSV into a study table");
        auto in = std::make_shared<std::string>();
        auto decimals = std::make_shared<int>(2);
        auto txt = std::make_shared<std::string>();
        auto csv = std::make_shared<std::string>();
        c->add_option("--in", *in, "per-seed CSV from ablate")->required();
        c->add_option("--decimals", *decimals, "display precision (2 or 3)");
        c->add_option("--txt", *txt, "also write the aligned text table here");
        c->add_option("--csv", *csv, "also write the full-precision summary here");
        c->callback([=, &action] {
            action = [=] { return cmd_report(*in, *decimals, *txt, *csv); };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        return action();
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

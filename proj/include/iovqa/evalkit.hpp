#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "iovqa/errors.hpp"

namespace iovqa {

/// Parallel arrays of item ids and scores, the unit of exchange between
/// prediction, ensembling and evaluation.
struct ScoreVector {
    std::vector<std::string> item_ids;
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
};

/// Pairs two score sets by item id (sets must match exactly, no duplicates)
/// and returns the aligned value arrays in sorted-id order.
std::pair<std::vector<double>, std::vector<double>> align_by_id(const ScoreVector& a,
                                                                const ScoreVector& b);

/// Average ranks, 1-based; tied values share the mean of their rank run.
std::vector<double> midranks(std::span<const double> v);

/// Spearman rank correlation. Without ties this is the closed form
/// 1 - 6*sum(d^2)/(n(n^2-1)); with ties it is the Pearson correlation of
/// midranks. Throws DegenerateInput for n < 2 or constant input.
double srcc(std::span<const double> a, std::span<const double> b);
double srcc(const ScoreVector& a, const ScoreVector& b);

/// Pearson linear correlation. Throws DegenerateInput for n < 2 or when
/// either side has zero variance.
double plcc(std::span<const double> a, std::span<const double> b);
double plcc(const ScoreVector& a, const ScoreVector& b);

/// The challenge ranking criterion: (SRCC + PLCC) / 2.
double final_score(double srcc_value, double plcc_value);

struct EvalSummary {
    double srcc = 0.0;
    double plcc = 0.0;
    double final = 0.0;
};

EvalSummary evaluate(const ScoreVector& predictions, const ScoreVector& ground_truth);

/// One ensemble member: where its predictions live is the caller's business,
/// here a member is just a name, a mixing weight and the scale its scores
/// arrive on ("mos_1_5" passes through, "label_10_50" divides by 10).
struct EnsembleMember {
    std::string name;
    double weight = 0.0;
    std::string scale = "mos_1_5";
};

struct EnsembleSpec {
    std::vector<EnsembleMember> members;

    /// The five-model mix used for the challenge submission:
    /// weights 0.25, 0.15, 0.25, 0.1, 0.25.
    static EnsembleSpec challenge_default();
    static EnsembleSpec load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    /// Non-empty, known scales, non-negative weights summing to 1 (1e-12).
    void validate() const;
};

/// Weighted sum of per-member scores after scale normalization. Member
/// score sets must cover the same item ids; output is in sorted-id order
/// on the 1..5 scale.
ScoreVector ensemble(const std::vector<ScoreVector>& member_scores,
                     const EnsembleSpec& spec);

/// CSV with header "item_id,score"; values round-trip exactly.
void write_scores_csv(const ScoreVector& scores, const std::filesystem::path& path);
ScoreVector read_scores_csv(const std::filesystem::path& path);

}  // namespace iovqa

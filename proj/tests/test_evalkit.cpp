#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "iovqa/evalkit.hpp"
#include "iovqa/rng.hpp"

using namespace iovqa;
namespace fs = std::filesystem;

namespace {

// independent oracle: rank with midranks, then a from-scratch Pearson
std::vector<double> oracle_midranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

double oracle_pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

double oracle_srcc(const std::vector<double>& a, const std::vector<double>& b) {
    return oracle_pearson(oracle_midranks(a), oracle_midranks(b));
}

}  // namespace

TEST_CASE("midranks average tied runs") {
    CHECK(midranks(std::vector<double>{3, 1, 2}) == std::vector<double>{3, 1, 2});
    CHECK(midranks(std::vector<double>{1, 2, 2, 3}) == std::vector<double>{1, 2.5, 2.5, 4});
    CHECK(midranks(std::vector<double>{5, 5, 5}) == std::vector<double>{2, 2, 2});
}

TEST_CASE("srcc known values") {
    CHECK(srcc(std::vector<double>{1, 2, 3, 4}, std::vector<double>{10, 20, 30, 40}) == 1.0);
    CHECK(srcc(std::vector<double>{1, 2, 3, 4}, std::vector<double>{4, 3, 2, 1}) == -1.0);
    CHECK(srcc(std::vector<double>{1, 3, 2}, std::vector<double>{1, 2, 3}) ==
          doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("srcc matches the rank-then-pearson oracle") {
    SplitMix64 rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 3 + rng.below(40);
        std::vector<double> a(n), b(n);
        const bool with_ties = trial % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = with_ties ? static_cast<double>(rng.below(6)) : rng.uniform();
            b[i] = with_ties ? static_cast<double>(rng.below(6)) : rng.uniform();
        }
        // constant vectors are a thrown error, not a comparison case
        if (std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; })) continue;
        if (std::all_of(b.begin(), b.end(), [&](double x) { return x == b[0]; })) continue;
        const double got = srcc(a, b);
        const double want = oracle_srcc(a, b);
        CHECK(std::abs(got - want) < 1e-9);
        if (!with_ties) CHECK(std::abs(got - want) < 1e-12);
    }
}

TEST_CASE("srcc degenerate inputs throw") {
    CHECK_THROWS_AS(srcc(std::vector<double>{1.0}, std::vector<double>{2.0}),
                    DegenerateInput);
    CHECK_THROWS_AS(srcc(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}),
                    DegenerateInput);
    CHECK_THROWS_AS(srcc(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}),
                    InvalidArgument);
}

TEST_CASE("plcc hand-derived value and invariances") {
    const double got = plcc(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 4});
    CHECK(got == doctest::Approx(3.0 / std::sqrt(84.0 / 9.0)).epsilon(1e-12));

    std::vector<double> a{0.3, 1.7, 2.9, 4.4};
    std::vector<double> shifted;
    for (double x : a) shifted.push_back(2.0 * x + 3.0);
    CHECK(plcc(a, shifted) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(plcc(std::vector<double>{1, 1}, std::vector<double>{1, 2}),
                    DegenerateInput);
}

TEST_CASE("final score is the plain mean") {
    CHECK(final_score(0.70, 0.70) == 0.70);
    CHECK(final_score(0.6, 0.8) == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(final_score(-1.0, 1.0) == 0.0);
}

TEST_CASE("align_by_id pairs scores regardless of row order") {
    ScoreVector a{{"b", "a", "c"}, {2.0, 1.0, 3.0}};
    ScoreVector b{{"c", "b", "a"}, {30.0, 20.0, 10.0}};
    const auto [av, bv] = align_by_id(a, b);
    CHECK(av == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(bv == std::vector<double>{10.0, 20.0, 30.0});

    ScoreVector missing{{"a", "b"}, {1.0, 2.0}};
    CHECK_THROWS_AS(align_by_id(a, missing), InvalidArgument);
    ScoreVector dup{{"a", "a", "c"}, {1.0, 2.0, 3.0}};
    CHECK_THROWS_AS(align_by_id(a, dup), InvalidArgument);
}

TEST_CASE("evaluate bundles the three metrics") {
    ScoreVector pred{{"a", "b", "c", "d"}, {1.1, 2.4, 2.9, 4.2}};
    ScoreVector truth{{"a", "b", "c", "d"}, {1.0, 2.0, 3.0, 4.0}};
    const EvalSummary s = evaluate(pred, truth);
    CHECK(s.srcc == 1.0);
    CHECK(s.final == doctest::Approx(0.5 * (s.srcc + s.plcc)).epsilon(1e-15));
}

TEST_CASE("challenge ensemble weights") {
    const EnsembleSpec spec = EnsembleSpec::challenge_default();
    REQUIRE(spec.members.size() == 5);
    const std::vector<double> expected{0.25, 0.15, 0.25, 0.1, 0.25};
    double sum = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(spec.members[i].weight == expected[i]);
        sum += spec.members[i].weight;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    CHECK_NOTHROW(spec.validate());
}

TEST_CASE("ensemble spec validation") {
    EnsembleSpec spec = EnsembleSpec::challenge_default();
    spec.members[0].weight += 1e-9;
    CHECK_THROWS_AS(spec.validate(), InvalidArgument);

    spec = EnsembleSpec::challenge_default();
    spec.members[0].scale = "kelvin";
    CHECK_THROWS_AS(spec.validate(), InvalidArgument);

    spec = EnsembleSpec::challenge_default();
    spec.members[0].weight = -0.25;
    spec.members[1].weight = 0.65;
    CHECK_THROWS_AS(spec.validate(), InvalidArgument);

    CHECK_THROWS_AS(EnsembleSpec{}.validate(), InvalidArgument);
}

TEST_CASE("ensemble weighted mix on one item") {
    const EnsembleSpec spec = EnsembleSpec::challenge_default();
    std::vector<ScoreVector> members;
    for (int i = 1; i <= 5; ++i)
        members.push_back(ScoreVector{{"x"}, {static_cast<double>(i)}});
    const ScoreVector mixed = ensemble(members, spec);
    REQUIRE(mixed.size() == 1);
    CHECK(std::abs(mixed.values[0] - 2.95) <= 1e-12);
}

TEST_CASE("ensemble respects scales and id alignment") {
    EnsembleSpec spec;
    spec.members = {{"m1", 0.5, "mos_1_5"}, {"m2", 0.5, "label_10_50"}};
    std::vector<ScoreVector> members{ScoreVector{{"b", "a"}, {3.0, 1.0}},
                                     ScoreVector{{"a", "b"}, {20.0, 40.0}}};
    const ScoreVector mixed = ensemble(members, spec);
    REQUIRE(mixed.item_ids == std::vector<std::string>{"a", "b"});
    CHECK(mixed.values[0] == doctest::Approx(0.5 * 1.0 + 0.5 * 2.0).epsilon(1e-15));
    CHECK(mixed.values[1] == doctest::Approx(0.5 * 3.0 + 0.5 * 4.0).epsilon(1e-15));

    members[1].item_ids[0] = "z";
    CHECK_THROWS_AS(ensemble(members, spec), InvalidArgument);
    CHECK_THROWS_AS(ensemble({members[0]}, spec), InvalidArgument);
}

TEST_CASE("ensemble output stays inside the member envelope") {
    const EnsembleSpec spec = EnsembleSpec::challenge_default();
    SplitMix64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<ScoreVector> members(5);
        const int n = 8;
        for (auto& m : members)
            for (int i = 0; i < n; ++i) {
                m.item_ids.push_back("it" + std::to_string(i));
                m.values.push_back(1.0 + 4.0 * rng.uniform());
            }
        const ScoreVector mixed = ensemble(members, spec);
        for (int i = 0; i < n; ++i) {
            const auto& id = mixed.item_ids[i];
            double lo = 5.0, hi = 1.0;
            for (const auto& m : members)
                for (std::size_t k = 0; k < m.item_ids.size(); ++k)
                    if (m.item_ids[k] == id) {
                        lo = std::min(lo, m.values[k]);
                        hi = std::max(hi, m.values[k]);
                    }
            CHECK(mixed.values[i] >= lo - 1e-12);
            CHECK(mixed.values[i] <= hi + 1e-12);
        }
    }
}

TEST_CASE("ensemble spec file round trip") {
    const fs::path p = fs::temp_directory_path() / "iovqa_ens_test.json";
    const EnsembleSpec spec = EnsembleSpec::challenge_default();
    spec.save(p);
    const EnsembleSpec back = EnsembleSpec::load(p);
    REQUIRE(back.members.size() == spec.members.size());
    for (std::size_t i = 0; i < spec.members.size(); ++i) {
        CHECK(back.members[i].name == spec.members[i].name);
        CHECK(back.members[i].weight == spec.members[i].weight);
        CHECK(back.members[i].scale == spec.members[i].scale);
    }
    fs::remove(p);
    CHECK_THROWS_AS(EnsembleSpec::load(p), IoError);
}

TEST_CASE("score csv round trips exact doubles") {
    ScoreVector v{{"a", "b"}, {1.0 / 3.0, 2.95}};
    const fs::path p = fs::temp_directory_path() / "iovqa_scores_test.csv";
    write_scores_csv(v, p);
    const ScoreVector back = read_scores_csv(p);
    CHECK(back.item_ids == v.item_ids);
    CHECK(back.values == v.values);
    fs::remove(p);
}

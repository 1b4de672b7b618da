#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "iovqa/rng.hpp"
#include "iovqa/scorer.hpp"

using namespace iovqa;
namespace fs = std::filesystem;

namespace {

ScorerConfig tiny_config() {
    ScorerConfig c;
    c.context_len = 16;
    c.embed_dim = 16;
    c.n_layers = 1;
    c.n_heads = 2;
    c.feature_dim = 4;
    return c;
}

PackedBatch token_batch(const ScorerConfig& config,
                        const std::vector<std::vector<int>>& seqs, int pad_id) {
    PackedBatch b;
    b.batch = static_cast<int>(seqs.size());
    b.len = 0;
    for (const auto& s : seqs) b.len = std::max(b.len, static_cast<int>(s.size()));
    b.ids.assign(static_cast<std::size_t>(b.rows()), pad_id);
    b.is_feature.assign(static_cast<std::size_t>(b.rows()), 0);
    b.features = Mat::Zero(b.rows(), config.feature_dim);
    for (std::size_t s = 0; s < seqs.size(); ++s) {
        b.lengths.push_back(static_cast<int>(seqs[s].size()));
        for (std::size_t t = 0; t < seqs[s].size(); ++t)
            b.ids[s * static_cast<std::size_t>(b.len) + t] = seqs[s][t];
    }
    b.validate(config);
    return b;
}

bool bitwise_equal(const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(),
                       sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("scorer config validation and json round trip") {
    ScorerConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());

    ScorerConfig bad = c;
    bad.n_heads = 3;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.lora_r = -1;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.lora_dropout = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = c;
    bad.vocab_size = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);

    c.grade_head = true;
    c.lora_r = 8;
    nlohmann::json j = c;
    const auto back = j.get<ScorerConfig>();
    CHECK(back.embed_dim == c.embed_dim);
    CHECK(back.grade_head == c.grade_head);
    CHECK(back.lora_r == c.lora_r);
    CHECK(back.lora_alpha == c.lora_alpha);
    CHECK(c.grade_hidden_or_default() == c.embed_dim);
}

TEST_CASE("param store shapes, lookup and like_zeros") {
    ParamStore p;
    const int wi = p.add("w", 2, 3);
    p.add("b", 1, 2);
    CHECK(p.size() == 8);
    CHECK(p.index("w") == wi);
    CHECK(p.has("b"));
    CHECK(!p.has("missing"));
    CHECK_THROWS_AS(p.index("missing"), InvalidArgument);
    CHECK_THROWS_AS(p.add("w", 1, 1), InvalidArgument);
    CHECK_THROWS_AS(p.add("z", 0, 1), InvalidArgument);

    p.view("w")(1, 2) = 7.0;
    CHECK(p.raw()[5] == 7.0);

    ParamStore z = p.like_zeros();
    CHECK(z.size() == p.size());
    CHECK(z.entries().size() == p.entries().size());
    for (double v : z.raw()) CHECK(v == 0.0);
    CHECK(p.raw()[5] == 7.0);
}

TEST_CASE("packed batch validation and append") {
    const ScorerConfig c = tiny_config();
    const Vocabulary vocab = Vocabulary::standard();
    PackedBatch b = token_batch(c, {{vocab.bos(), vocab.digit(3)}, {vocab.bos()}}, vocab.pad());
    CHECK(b.rows() == 4);

    PackedBatch bad = b;
    bad.ids[0] = c.vocab_size;
    CHECK_THROWS_AS(bad.validate(c), InvalidArgument);
    bad = b;
    bad.lengths[1] = 3;
    CHECK_THROWS_AS(bad.validate(c), InvalidArgument);
    bad = b;
    bad.features = Mat::Zero(1, c.feature_dim);
    CHECK_THROWS_AS(bad.validate(c), InvalidArgument);

    CHECK_THROWS_AS(b.append_token({vocab.digit(7), vocab.digit(7)}, vocab.pad()),
                    InvalidArgument);  // ragged lengths
    PackedBatch full = token_batch(c, {{vocab.bos()}, {vocab.digit(2)}}, vocab.pad());
    full.append_token({vocab.digit(1), vocab.digit(5)}, vocab.pad());
    CHECK(full.len == 2);
    CHECK(full.lengths == std::vector<int>{2, 2});
    CHECK(full.ids == std::vector<int>{vocab.bos(), vocab.digit(1), vocab.digit(2),
                                       vocab.digit(5)});
    CHECK_NOTHROW(full.validate(c));
}

TEST_CASE("lora_forward reduces to the base map when B is zero") {
    SplitMix64 rng(5);
    Mat x(3, 4), w(6, 4), a(2, 4);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.gaussian();
    for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.gaussian();
    for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.gaussian();
    const Mat b0 = Mat::Zero(6, 2);

    const Mat base = x * w.transpose();
    const Mat y = lora_forward(x, w, a, b0, 2, 32.0);
    CHECK(bitwise_equal(y, base));
}

TEST_CASE("lora_forward scales linearly in alpha") {
    SplitMix64 rng(6);
    Mat x(2, 3), w(4, 3), a(2, 3), b(4, 2);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.gaussian();
    for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.gaussian();
    for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.gaussian();
    for (int i = 0; i < b.size(); ++i) b.data()[i] = rng.gaussian();

    const Mat base = x * w.transpose();
    const Mat y1 = lora_forward(x, w, a, b, 2, 16.0);
    const Mat y2 = lora_forward(x, w, a, b, 2, 32.0);
    const Mat d1 = y1 - base;
    const Mat d2 = y2 - base;
    CHECK((d2 - 2.0 * d1).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(lora_forward(x, w, a, b, 0, 32.0), InvalidArgument);
    CHECK_THROWS_AS(lora_forward(x, w, a, b, 3, 32.0), InvalidArgument);
    CHECK_THROWS_AS(lora_forward(x, w, a, b, 2, 32.0, 1.0), InvalidArgument);
}

TEST_CASE("lora dropout runs only when an rng is supplied") {
    SplitMix64 rng(7);
    Mat x(8, 5), w(5, 5), a(4, 5), b(5, 4);
    for (int i = 0; i < x.size(); ++i) x.data()[i] = rng.gaussian();
    for (int i = 0; i < w.size(); ++i) w.data()[i] = rng.gaussian();
    for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.gaussian();
    for (int i = 0; i < b.size(); ++i) b.data()[i] = rng.gaussian();

    const Mat eval1 = lora_forward(x, w, a, b, 4, 32.0, 0.5);
    const Mat eval2 = lora_forward(x, w, a, b, 4, 32.0, 0.5);
    CHECK(bitwise_equal(eval1, eval2));

    SplitMix64 drop_rng(9);
    const Mat trained = lora_forward(x, w, a, b, 4, 32.0, 0.5, &drop_rng);
    CHECK(!bitwise_equal(trained, eval1));
}

TEST_CASE("grade expectation on hand-picked logits") {
    Eigen::Matrix<double, 1, 5> logits;
    logits << 0.4, 0.4, 0.4, 0.4, 0.4;
    CHECK(grade_expectation(logits) == 3.0);

    logits << 0.0, 0.0, 0.0, 0.0, std::log(4.0);
    CHECK(grade_expectation(logits) == doctest::Approx(3.75).epsilon(1e-9));

    SplitMix64 rng(3);
    for (int i = 0; i < 1000; ++i) {
        for (int k = 0; k < 5; ++k) logits(0, k) = 10.0 * rng.gaussian();
        const double e = grade_expectation(logits);
        CHECK(e > 1.0 - 1e-12);
        CHECK(e < 5.0 + 1e-12);
    }
}

TEST_CASE("randomized init is seeded per entry") {
    const ScorerConfig c = tiny_config();
    const ScorerModel m1 = ScorerModel::randomized(c, 42);
    const ScorerModel m2 = ScorerModel::randomized(c, 42);
    CHECK(m1.params().raw() == m2.params().raw());
    const ScorerModel m3 = ScorerModel::randomized(c, 43);
    CHECK(m1.params().raw() != m3.params().raw());

    for (const auto& e : m1.params().entries()) {
        if (e.name.ends_with(".b") || e.name.ends_with(".lora_b")) {
            const auto v = m1.params().view(e.name);
            CHECK(v.cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("shared entries are seed-stable across config variants") {
    ScorerConfig base = tiny_config();
    ScorerConfig with_lora = base;
    with_lora.lora_r = 4;
    ScorerConfig with_grade = base;
    with_grade.grade_head = true;

    const ScorerModel m0 = ScorerModel::randomized(base, 42);
    const ScorerModel ml = ScorerModel::randomized(with_lora, 42);
    const ScorerModel mg = ScorerModel::randomized(with_grade, 42);

    int shared = 0;
    for (const auto& e : m0.params().entries()) {
        for (const ScorerModel* other : {&ml, &mg}) {
            if (!other->params().has(e.name)) continue;
            const auto a = m0.params().view(e.name);
            const auto b = other->params().view(e.name);
            REQUIRE(a.rows() == b.rows());
            REQUIRE(a.cols() == b.cols());
            CHECK(bitwise_equal(Mat(a), Mat(b)));
            ++shared;
        }
    }
    CHECK(shared > 10);
    CHECK(ml.params().has("layers.0.attn.q.lora_a"));
    CHECK(mg.params().has("grade_head.fc1.w"));
    CHECK(!m0.params().has("grade_head.fc1.w"));
}

TEST_CASE("forward is deterministic") {
    const ScorerConfig c = tiny_config();
    const Vocabulary vocab = Vocabulary::standard();
    const ScorerModel m = ScorerModel::randomized(c, 11);
    const PackedBatch b = token_batch(
        c, {{vocab.bos(), vocab.digit(3), vocab.digit(7)}, {vocab.bos(), vocab.digit(1)}},
        vocab.pad());
    const ForwardResult r1 = m.forward(b);
    const ForwardResult r2 = m.forward(b);
    const ForwardResult r3 = m.forward(b);
    CHECK(bitwise_equal(r1.logits, r2.logits));
    CHECK(bitwise_equal(r1.logits, r3.logits));
    CHECK(bitwise_equal(r1.final_hidden, r3.final_hidden));
    CHECK(r1.logits.rows() == b.rows());
    CHECK(r1.logits.cols() == c.vocab_size);
}

TEST_CASE("attention is causal") {
    const ScorerConfig c = tiny_config();
    const Vocabulary vocab = Vocabulary::standard();
    const ScorerModel m = ScorerModel::randomized(c, 12);
    std::vector<int> seq{vocab.bos(), vocab.digit(2), vocab.digit(5), vocab.eos()};
    const PackedBatch b1 = token_batch(c, {seq}, vocab.pad());
    seq.back() = vocab.digit(9);
    const PackedBatch b2 = token_batch(c, {seq}, vocab.pad());

    const Mat l1 = m.forward(b1).logits;
    const Mat l2 = m.forward(b2).logits;
    CHECK(bitwise_equal(Mat(l1.topRows(3)), Mat(l2.topRows(3))));
    CHECK(!bitwise_equal(Mat(l1.row(3)), Mat(l2.row(3))));
}

TEST_CASE("sequences in a packed batch do not interact") {
    const ScorerConfig c = tiny_config();
    const Vocabulary vocab = Vocabulary::standard();
    const ScorerModel m = ScorerModel::randomized(c, 13);
    const std::vector<int> keep{vocab.bos(), vocab.digit(4), vocab.digit(0)};
    PackedBatch b1 = token_batch(c, {keep, {vocab.bos(), vocab.digit(1)}}, vocab.pad());
    PackedBatch b2 = token_batch(c, {keep, {vocab.eos(), vocab.digit(9)}}, vocab.pad());
    // also vary what sits in the pad slot of the second sequence
    b2.ids[static_cast<std::size_t>(b2.len) + 2] = vocab.digit(8);
    b2.validate(c);

    const Mat l1 = m.forward(b1).logits;
    const Mat l2 = m.forward(b2).logits;
    CHECK(bitwise_equal(Mat(l1.topRows(3)), Mat(l2.topRows(3))));
}

TEST_CASE("grade head gating") {
    const ScorerConfig plain = tiny_config();
    const ScorerModel m = ScorerModel::zeros(plain);
    CHECK_THROWS_AS(m.grade_logits(Mat::Zero(1, plain.embed_dim)), InvalidArgument);

    ScorerConfig graded = tiny_config();
    graded.grade_head = true;
    const ScorerModel g = ScorerModel::zeros(graded);
    const Mat logits5 = g.grade_logits(Mat::Zero(2, graded.embed_dim));
    CHECK(logits5.rows() == 2);
    CHECK(logits5.cols() == 5);
    CHECK(logits5.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("trainable entry selection") {
    ScorerConfig c = tiny_config();
    const ScorerModel full = ScorerModel::zeros(c);
    CHECK(full.trainable_entries(false).size() == full.params().entries().size());
    CHECK_THROWS_AS(full.trainable_entries(true), InvalidArgument);

    c.lora_r = 4;
    const ScorerModel adapted = ScorerModel::zeros(c);
    const auto lora_names = adapted.trainable_entries(true);
    CHECK(!lora_names.empty());
    for (const auto& n : lora_names)
        CHECK((n.ends_with(".lora_a") || n.ends_with(".lora_b")));
}

TEST_CASE("checkpoint round trip is exact at f32") {
    const fs::path p = fs::temp_directory_path() / "iovqa_ckpt_test.bin";
    ScorerConfig c = tiny_config();
    c.grade_head = true;
    c.lora_r = 2;
    const ScorerModel m = ScorerModel::randomized(c, 99);
    m.save(p);

    const ScorerModel back = ScorerModel::load(p);
    REQUIRE(back.params().size() == m.params().size());
    for (std::size_t i = 0; i < m.params().raw().size(); ++i)
        CHECK(back.params().raw()[i] == static_cast<double>(
                                            static_cast<float>(m.params().raw()[i])));

    const fs::path p2 = fs::temp_directory_path() / "iovqa_ckpt_test2.bin";
    back.save(p2);
    CHECK(read_file(p) == read_file(p2));
    fs::remove(p);
    fs::remove(p2);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const fs::path p = fs::temp_directory_path() / "iovqa_ckpt_corrupt.bin";
    const ScorerModel m = ScorerModel::zeros(tiny_config());
    m.save(p);
    const std::string good = read_file(p);

    write_file(p, good + "x");
    CHECK_THROWS_AS(ScorerModel::load(p), IoError);

    write_file(p, good.substr(0, good.size() - 8));
    CHECK_THROWS_AS(ScorerModel::load(p), IoError);

    std::string bad = good;
    bad.replace(bad.find("iovqa-scorer"), 12, "other-format");
    write_file(p, bad);
    CHECK_THROWS_AS(ScorerModel::load(p), IoError);

    bad = good;
    bad.replace(bad.find("f32"), 3, "f64");
    write_file(p, bad);
    CHECK_THROWS_AS(ScorerModel::load(p), IoError);

    write_file(p, "not json\n");
    CHECK_THROWS_AS(ScorerModel::load(p), IoError);

    fs::remove(p);
    CHECK_THROWS_AS(ScorerModel::load(p), IoError);
}

TEST_CASE("constrained greedy decode breaks ties toward low token ids") {
    const ScorerConfig c = tiny_config();
    const Vocabulary vocab = Vocabulary::standard();
    const ScorerModel zeros = ScorerModel::zeros(c);
    const PackedBatch prefixes =
        token_batch(c, {{vocab.bos()}, {vocab.bos()}}, vocab.pad());

    // every logit is zero, so the tens digit resolves to 1 and the ones to 0
    const auto labels = decode_integer_labels(zeros, prefixes, vocab);
    CHECK(labels == std::vector<int>{10, 10});

    const auto decimals = decode_decimal_scores(zeros, prefixes, vocab);
    CHECK(decimals == std::vector<double>{1.0, 1.0});
}

TEST_CASE("constrained decode clamps the tens digit to 1..5") {
    const ScorerConfig c = tiny_config();
    const Vocabulary vocab = Vocabulary::standard();
    ScorerModel m = ScorerModel::zeros(c);
    // bias the output toward 9 overall and 5 among the tens candidates
    m.params().view("out_proj.b")(0, vocab.digit(9)) = 5.0;
    m.params().view("out_proj.b")(0, vocab.digit(5)) = 3.0;

    const PackedBatch prefixes = token_batch(c, {{vocab.bos()}}, vocab.pad());
    const auto labels = decode_integer_labels(m, prefixes, vocab);
    CHECK(labels == std::vector<int>{59});

    const auto decimals = decode_decimal_scores(m, prefixes, vocab);
    CHECK(decimals == std::vector<double>{5.9});
}

TEST_CASE("grade head scores on the zero model") {
    ScorerConfig c = tiny_config();
    c.grade_head = true;
    const Vocabulary vocab = Vocabulary::standard();
    const ScorerModel m = ScorerModel::zeros(c);
    const PackedBatch prefixes = token_batch(
        c, {{vocab.bos(), vocab.label1()}, {vocab.bos(), vocab.label1()}}, vocab.pad());
    const auto scores = grade_head_scores(m, prefixes);
    REQUIRE(scores.size() == 2);
    CHECK(scores[0] == 3.0);
    CHECK(scores[1] == 3.0);
}

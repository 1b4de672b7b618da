#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "iovqa/curation.hpp"
#include "iovqa/synthetic.hpp"

using namespace iovqa;
namespace fs = std::filesystem;

TEST_CASE("mos_to_label scales by ten and rounds half away from zero") {
    CHECK(mos_to_label(3.666) == 37);
    CHECK(mos_to_label(1.0) == 10);
    CHECK(mos_to_label(5.0) == 50);
    CHECK(mos_to_label(4.25) == 43);
    CHECK(mos_to_label(4.24999) == 42);
    CHECK(mos_to_label(2.0) == 20);
    CHECK_THROWS_AS(mos_to_label(0.999), InvalidArgument);
    CHECK_THROWS_AS(mos_to_label(5.001), InvalidArgument);
    CHECK_THROWS_AS(mos_to_label(std::numeric_limits<double>::quiet_NaN()), InvalidArgument);
}

TEST_CASE("label_to_mos inverts the scaling") {
    CHECK(label_to_mos(37) == 3.7);
    CHECK(label_to_mos(10) == 1.0);
    CHECK(label_to_mos(50) == 5.0);
    for (int label = 10; label <= 50; ++label)
        CHECK(mos_to_label(label_to_mos(label)) == label);
    CHECK_THROWS_AS(label_to_mos(9), InvalidArgument);
    CHECK_THROWS_AS(label_to_mos(51), InvalidArgument);
}

TEST_CASE("frame sampling picks fixed relative positions") {
    auto one = sample_frames(9, 1);
    CHECK(one.indices == std::vector<int>{4});
    CHECK_FALSE(one.duplicated);

    auto two = sample_frames(9, 2);
    CHECK(two.indices == std::vector<int>{2, 6});
    CHECK_FALSE(two.duplicated);

    auto five = sample_frames(5, 2);
    CHECK(five.indices == std::vector<int>{1, 3});

    auto tiny = sample_frames(1, 2);
    CHECK(tiny.indices == std::vector<int>{0, 0});
    CHECK(tiny.duplicated);

    CHECK_THROWS_AS(sample_frames(0, 1), InvalidArgument);
    CHECK_THROWS_AS(sample_frames(8, 3), InvalidArgument);
    CHECK_THROWS_AS(sample_frames(8, 0), InvalidArgument);
}

TEST_CASE("standard template renders a well-formed prompt") {
    const std::string text = render_prompt(PromptTemplate::standard(), "a cat on a beach");
    CHECK(prompt_is_well_formed(text));
    CHECK(text.find("a cat on a beach") != std::string::npos);
    for (const char* dim : kDimensions) CHECK(text.find(dim) != std::string::npos);
    CHECK(text.find("between 10 and 50") != std::string::npos);
    CHECK(text.find('{') == std::string::npos);
}

TEST_CASE("template construction fails fast on malformed text") {
    CHECK_NOTHROW(PromptTemplate::from_text(
        "Video \"{user_prompt}\", judge {dimensions}. {output_instruction}"));
    // each placeholder must appear exactly once
    CHECK_THROWS_AS(PromptTemplate::from_text("{user_prompt} {dimensions}"), InvalidArgument);
    CHECK_THROWS_AS(PromptTemplate::from_text(
                        "{user_prompt} {user_prompt} {dimensions} {output_instruction}"),
                    InvalidArgument);
    CHECK_THROWS_AS(PromptTemplate::from_text(
                        "{user_prompt} {dimensions} {output_instruction} {bogus}"),
                    InvalidArgument);
    CHECK_THROWS_AS(PromptTemplate::from_text(
                        "{user_prompt {dimensions} {output_instruction}"),
                    InvalidArgument);
}

TEST_CASE("template file loading") {
    const fs::path p = fs::temp_directory_path() / "iovqa_tmpl_test.txt";
    {
        std::ofstream out(p);
        out << "Clip \"{user_prompt}\". Consider {dimensions}. {output_instruction}\n";
    }
    const PromptTemplate tmpl = PromptTemplate::load(p);
    CHECK(prompt_is_well_formed(render_prompt(tmpl, "x")));
    fs::remove(p);
    CHECK_THROWS_AS(PromptTemplate::load(p), IoError);
}

namespace {

std::vector<RawRecord> toy_raw() {
    std::vector<RawRecord> raw;
    for (int i = 0; i < 4; ++i) {
        RawRecord r;
        r.item_id = "vid_" + std::to_string(9 - i);  // reversed on purpose
        r.frame_features = {{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};
        r.user_prompt = "p" + std::to_string(i);
        r.mos = 1.0 + i;
        raw.push_back(r);
    }
    return raw;
}

}  // namespace

TEST_CASE("curate builds labeled records in item_id order") {
    const auto records = curate(toy_raw(), 2, PromptTemplate::standard());
    REQUIRE(records.size() == 4);
    for (std::size_t i = 1; i < records.size(); ++i)
        CHECK(records[i - 1].item_id < records[i].item_id);
    for (const auto& rec : records) {
        CHECK(rec.label == mos_to_label(rec.mos));
        CHECK(rec.sampled_features.size() == 2);
        CHECK(prompt_is_well_formed(rec.rendered_prompt));
    }
    // 3 frames, k=2 -> indices 0 and 1 of (n-1)/4 and 3(n-1)/4
    const auto picks = sample_frames(3, 2);
    CHECK(records[0].sampled_features[0] ==
          toy_raw()[0].frame_features[picks.indices[0]]);
    CHECK_THROWS_AS(curate(toy_raw(), 3, PromptTemplate::standard()), InvalidArgument);
}

TEST_CASE("curated files round trip") {
    const auto records = curate(toy_raw(), 1, PromptTemplate::standard());
    const fs::path p = fs::temp_directory_path() / "iovqa_curated_test.jsonl";
    write_curated(records, p);
    const auto back = read_curated(p);
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].item_id == records[i].item_id);
        CHECK(back[i].sampled_features == records[i].sampled_features);
        CHECK(back[i].rendered_prompt == records[i].rendered_prompt);
        CHECK(back[i].mos == records[i].mos);
        CHECK(back[i].label == records[i].label);
    }
    fs::remove(p);
    CHECK_THROWS_AS(read_curated(p), IoError);
}

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "iovqa/errors.hpp"
#include "iovqa/synthetic.hpp"

namespace iovqa {

/// The four quality dimensions every rendered prompt must name.
inline constexpr std::array<const char*, 4> kDimensions = {
    "aesthetic quality",
    "image quality",
    "temporal quality",
    "text-video alignment",
};

/// MOS in [1,5] -> integer label in [10,50]. The score is first rounded to
/// one decimal place (half away from zero), then scaled by 10:
/// 3.666 -> 37, 4.25 -> 43.
int mos_to_label(double mos);

/// Inverse of the x10 scaling: label in [10,50] -> score in [1.0,5.0].
double label_to_mos(int label);

struct SampledFrames {
    std::vector<int> indices;
    bool duplicated = false;  // k=2 collapsed onto one frame
};

/// Picks k representative frame indices from n evenly around the quartiles:
/// k=1 takes (n-1)/2, k=2 takes floor((n-1)/4) and floor(3(n-1)/4). When the
/// two k=2 picks coincide (n <= 2) the frame is used twice and `duplicated`
/// is set.
SampledFrames sample_frames(int n_frames, int k);

/// A prompt template with three required placeholders: {user_prompt},
/// {dimensions}, {output_instruction}. Construction fails fast: each
/// placeholder must appear exactly once, no unknown placeholders are
/// allowed, and a probe render must pass prompt_is_well_formed().
struct PromptTemplate {
    std::string text;

    static PromptTemplate standard();
    static PromptTemplate from_text(const std::string& text);
    static PromptTemplate load(const std::filesystem::path& path);
};

/// Substitutes the placeholders. {dimensions} becomes the four dimension
/// names joined with ", "; {output_instruction} asks for a single integer
/// score between 10 and 50.
std::string render_prompt(const PromptTemplate& tmpl, const std::string& user_prompt);

/// True when the rendered text names all four dimensions and instructs an
/// integer answer in the 10..50 range.
bool prompt_is_well_formed(const std::string& rendered);

/// One training-ready example.
struct DatasetRecord {
    std::string item_id;
    std::vector<std::vector<double>> sampled_features;  // k frames x feature_dim
    std::string rendered_prompt;
    double mos = 0.0;
    int label = 0;
};

/// Raw rows -> curated examples: frame sampling, prompt rendering, label
/// construction. Every output record satisfies label == mos_to_label(mos).
std::vector<DatasetRecord> curate(const std::vector<RawRecord>& raw, int sample_k,
                                  const PromptTemplate& tmpl);

/// JSON Lines with exactly the fields item_id, sampled_features,
/// rendered_prompt, mos, label.
void write_curated(const std::vector<DatasetRecord>& records,
                   const std::filesystem::path& path);

std::vector<DatasetRecord> read_curated(const std::filesystem::path& path);

}  // namespace iovqa

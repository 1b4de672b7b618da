#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "iovqa/errors.hpp"

namespace iovqa {

inline constexpr int kPanelSize = 15;

/// One synthetic "video": a latent quality in [1,5] and frame features built
/// so that the mean of each frame's entries equals the latent quality plus
/// bounded noise. That fixed linear functional is what makes the downstream
/// regression task learnable by construction.
struct LatentItem {
    std::string item_id;
    double latent_quality = 0.0;
    std::vector<std::vector<double>> frame_features;  // frames x feature_dim
    std::string user_prompt;
};

/// A 15-rater annotation round: integer ratings in 1..5, the anomaly-filter
/// keep mask, and the mean opinion score over kept ratings.
struct AnnotationPanel {
    std::vector<int> ratings;            // exactly kPanelSize
    std::vector<std::uint8_t> kept_mask; // parallel to ratings
    double mos = 0.0;
};

/// A raw dataset row as serialized to JSON Lines.
struct RawRecord {
    std::string item_id;
    std::vector<std::vector<double>> frame_features;
    std::string user_prompt;
    double mos = 0.0;
};

/// Deterministic for a given seed; item streams are seeded per item as
/// hash(seed, item_id), so generation order never matters.
std::vector<LatentItem> generate_items(int n, int feature_dim, int frames_per_video,
                                       std::uint64_t seed);

/// Ratings are clamp(round(latent_quality + N(0, noise_sd)), 1, 5). The
/// anomaly filter drops ratings more than 2 levels from the panel median,
/// which always keeps at least 8 of 15. MOS is the mean of kept ratings.
AnnotationPanel simulate_annotators(double latent_quality, double noise_sd,
                                    std::uint64_t seed);

/// Writes JSON Lines: {"item_id", "frame_features", "user_prompt", "mos"}
/// per row. Requires one panel per item.
void emit_raw_dataset(const std::vector<LatentItem>& items,
                      const std::vector<AnnotationPanel>& panels,
                      const std::filesystem::path& path);

std::vector<RawRecord> read_raw_dataset(const std::filesystem::path& path);

/// The fixed scene-description bank user prompts are drawn from.
const std::vector<std::string>& prompt_bank();

}  // namespace iovqa

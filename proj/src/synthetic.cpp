#include "iovqa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "iovqa/rng.hpp"
#include "json.hpp"

namespace iovqa {

const std::vector<std::string>& prompt_bank() {
    static const std::vector<std::string> bank = {
        "A golden retriever chasing a frisbee across a sunlit park",
        "Time-lapse of storm clouds rolling over a mountain ridge",
        "A barista pouring latte art in a slow overhead shot",
        "Neon-lit street market in the rain, handheld camera",
        "A paper boat drifting down a gutter stream after rain",
        "Close-up of a hummingbird feeding on a trumpet flower",
        "A cable car climbing through fog above a harbor city",
        "Children flying kites on a windy beach at low tide",
        "Macro shot of ink diffusing through a glass of water",
        "A freight train crossing a steel bridge at dusk",
        "Street performer juggling flaming torches at night",
        "Drone orbit of a lighthouse on a rocky headland",
        "A potter shaping a clay bowl on a spinning wheel",
        "Autumn leaves swirling in an alley between brick walls",
        "A chess player sliding a queen forward in slow motion",
        "Northern lights shifting above a frozen lake",
    };
    return bank;
}

std::vector<LatentItem> generate_items(int n, int feature_dim, int frames_per_video,
                                       std::uint64_t seed) {
    if (n < 1) throw InvalidArgument("generate_items: n must be positive");
    if (feature_dim < 1) throw InvalidArgument("generate_items: feature_dim must be positive");
    if (frames_per_video < 1)
        throw InvalidArgument("generate_items: frames_per_video must be positive");

    const auto& bank = prompt_bank();
    std::vector<LatentItem> items;
    items.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        LatentItem it;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "vid_%06d", i);
        it.item_id = buf;
        SplitMix64 rng(derive_seed(seed, it.item_id));
        it.latent_quality = rng.truncated_gaussian(3.0, 1.0, 1.0, 5.0);
        it.user_prompt = bank[static_cast<std::size_t>(rng.below(bank.size()))];
        it.frame_features.resize(static_cast<std::size_t>(frames_per_video));
        for (auto& frame : it.frame_features) {
            frame.resize(static_cast<std::size_t>(feature_dim));
            double sum = 0.0;
            for (auto& v : frame) {
                v = rng.gaussian();
                sum += v;
            }
            // Center the noise, then shift every entry so the frame mean is
            // exactly latent_quality plus a bounded per-frame offset.
            const double mean = sum / feature_dim;
            const double offset = it.latent_quality + (rng.uniform() * 0.5 - 0.25);
            for (auto& v : frame) v = v - mean + offset;
        }
        items.push_back(std::move(it));
    }
    return items;
}

AnnotationPanel simulate_annotators(double latent_quality, double noise_sd,
                                    std::uint64_t seed) {
    if (!(latent_quality >= 1.0 && latent_quality <= 5.0))
        throw InvalidArgument("simulate_annotators: latent_quality must be in [1,5]");
    if (!(noise_sd >= 0.0))
        throw InvalidArgument("simulate_annotators: noise_sd must be non-negative");

    SplitMix64 rng(seed);
    AnnotationPanel panel;
    panel.ratings.resize(kPanelSize);
    for (auto& r : panel.ratings) {
        const double raw = latent_quality + noise_sd * rng.gaussian();
        r = static_cast<int>(std::clamp<long long>(std::llround(raw), 1, 5));
    }

    std::vector<int> sorted = panel.ratings;
    std::sort(sorted.begin(), sorted.end());
    const int median = sorted[kPanelSize / 2];

    panel.kept_mask.resize(kPanelSize);
    double sum = 0.0;
    int kept = 0;
    for (int i = 0; i < kPanelSize; ++i) {
        const bool keep = std::abs(panel.ratings[i] - median) <= 2;
        panel.kept_mask[i] = keep ? 1 : 0;
        if (keep) {
            sum += panel.ratings[i];
            ++kept;
        }
    }
    // Integer ratings in [1,5]: the 8 sorted values on the median's side of
    // the scale are always within 2 levels of it, so kept >= 8 > 0.
    panel.mos = sum / kept;
    return panel;
}

void emit_raw_dataset(const std::vector<LatentItem>& items,
                      const std::vector<AnnotationPanel>& panels,
                      const std::filesystem::path& path) {
    if (items.size() != panels.size())
        throw InvalidArgument("emit_raw_dataset: one panel per item required");
    std::ofstream out(path);
    if (!out) throw IoError("emit_raw_dataset: cannot open " + path.string());
    for (std::size_t i = 0; i < items.size(); ++i) {
        nlohmann::ordered_json row;
        row["item_id"] = items[i].item_id;
        row["frame_features"] = items[i].frame_features;
        row["user_prompt"] = items[i].user_prompt;
        row["mos"] = panels[i].mos;
        out << row.dump() << '\n';
    }
    if (!out) throw IoError("emit_raw_dataset: write failed for " + path.string());
}

std::vector<RawRecord> read_raw_dataset(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_raw_dataset: cannot open " + path.string());
    std::vector<RawRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("read_raw_dataset: " + path.string() + " line " +
                          std::to_string(line_no) + ": " + e.what());
        }
        RawRecord rec;
        try {
            rec.item_id = row.at("item_id").get<std::string>();
            rec.frame_features = row.at("frame_features").get<std::vector<std::vector<double>>>();
            rec.user_prompt = row.at("user_prompt").get<std::string>();
            rec.mos = row.at("mos").get<double>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError("read_raw_dataset: " + path.string() + " line " +
                          std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace iovqa

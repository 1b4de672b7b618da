#include "iovqa/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace iovqa {

int mos_to_label(double mos) {
    if (!(mos >= 1.0 && mos <= 5.0))
        throw InvalidArgument("mos_to_label: score must be in [1,5], got " +
                              std::to_string(mos));
    const long long label = std::llround(mos * 10.0);
    return static_cast<int>(std::clamp<long long>(label, 10, 50));
}

double label_to_mos(int label) {
    if (label < 10 || label > 50)
        throw InvalidArgument("label_to_mos: label must be in [10,50], got " +
                              std::to_string(label));
    return label / 10.0;
}

SampledFrames sample_frames(int n_frames, int k) {
    if (n_frames < 1) throw InvalidArgument("sample_frames: need at least one frame");
    if (k != 1 && k != 2) throw InvalidArgument("sample_frames: k must be 1 or 2");
    SampledFrames out;
    if (k == 1) {
        out.indices = {(n_frames - 1) / 2};
    } else {
        const int lo = (n_frames - 1) / 4;
        const int hi = 3 * (n_frames - 1) / 4;
        out.indices = {lo, hi};
        out.duplicated = (lo == hi);
    }
    return out;
}

namespace {

const char* kPlaceholders[] = {"{user_prompt}", "{dimensions}", "{output_instruction}"};

std::string joined_dimensions() {
    std::string s;
    for (std::size_t i = 0; i < kDimensions.size(); ++i) {
        if (i) s += ", ";
        s += kDimensions[i];
    }
    return s;
}

std::string substitute(const std::string& text, const std::string& user_prompt) {
    const std::string instruction =
        "Rate the overall quality with a single integer between 10 and 50.";
    std::string out = text;
    const std::pair<const char*, std::string> repl[] = {
        {"{user_prompt}", user_prompt},
        {"{dimensions}", joined_dimensions()},
        {"{output_instruction}", instruction},
    };
    for (const auto& [key, value] : repl) {
        const auto pos = out.find(key);
        if (pos != std::string::npos) out.replace(pos, std::string(key).size(), value);
    }
    return out;
}

void validate_template(const std::string& text) {
    for (const char* ph : kPlaceholders) {
        const auto first = text.find(ph);
        if (first == std::string::npos)
            throw InvalidArgument(std::string("prompt template: missing placeholder ") + ph);
        if (text.find(ph, first + 1) != std::string::npos)
            throw InvalidArgument(std::string("prompt template: duplicate placeholder ") + ph);
    }
    // Any other {...} token is a typo we want surfaced at load time.
    std::size_t pos = 0;
    while ((pos = text.find('{', pos)) != std::string::npos) {
        const auto end = text.find('}', pos);
        if (end == std::string::npos)
            throw InvalidArgument("prompt template: unbalanced '{'");
        const std::string token = text.substr(pos, end - pos + 1);
        if (std::none_of(std::begin(kPlaceholders), std::end(kPlaceholders),
                         [&](const char* ph) { return token == ph; }))
            throw InvalidArgument("prompt template: unknown placeholder " + token);
        pos = end + 1;
    }
    if (!prompt_is_well_formed(substitute(text, "probe")))
        throw InvalidArgument("prompt template: probe render is not well formed");
}

}  // namespace

PromptTemplate PromptTemplate::standard() {
    return from_text(
        "You are scoring a short video generated from the description: "
        "\"{user_prompt}\". Judge it along {dimensions}. {output_instruction}");
}

PromptTemplate PromptTemplate::from_text(const std::string& text) {
    validate_template(text);
    return PromptTemplate{text};
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("prompt template: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    return from_text(text);
}

std::string render_prompt(const PromptTemplate& tmpl, const std::string& user_prompt) {
    return substitute(tmpl.text, user_prompt);
}

bool prompt_is_well_formed(const std::string& rendered) {
    for (const char* dim : kDimensions)
        if (rendered.find(dim) == std::string::npos) return false;
    return rendered.find("integer") != std::string::npos &&
           rendered.find("10") != std::string::npos &&
           rendered.find("50") != std::string::npos;
}

std::vector<DatasetRecord> curate(const std::vector<RawRecord>& raw, int sample_k,
                                  const PromptTemplate& tmpl) {
    std::vector<DatasetRecord> out;
    out.reserve(raw.size());
    for (const auto& rec : raw) {
        if (rec.frame_features.empty())
            throw InvalidArgument("curate: item " + rec.item_id + " has no frames");
        const auto picks =
            sample_frames(static_cast<int>(rec.frame_features.size()), sample_k);
        DatasetRecord d;
        d.item_id = rec.item_id;
        for (int idx : picks.indices)
            d.sampled_features.push_back(rec.frame_features[static_cast<std::size_t>(idx)]);
        d.rendered_prompt = render_prompt(tmpl, rec.user_prompt);
        d.mos = rec.mos;
        d.label = mos_to_label(rec.mos);
        out.push_back(std::move(d));
    }
    // Records are independent, so a parallel implementation stays legal as
    // long as this ordering is restored.
    std::sort(out.begin(), out.end(),
              [](const DatasetRecord& a, const DatasetRecord& b) {
                  return a.item_id < b.item_id;
              });
    return out;
}

void write_curated(const std::vector<DatasetRecord>& records,
                   const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("write_curated: cannot open " + path.string());
    for (const auto& rec : records) {
        nlohmann::ordered_json row;
        row["item_id"] = rec.item_id;
        row["sampled_features"] = rec.sampled_features;
        row["rendered_prompt"] = rec.rendered_prompt;
        row["mos"] = rec.mos;
        row["label"] = rec.label;
        out << row.dump() << '\n';
    }
    if (!out) throw IoError("write_curated: write failed for " + path.string());
}

std::vector<DatasetRecord> read_curated(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_curated: cannot open " + path.string());
    std::vector<DatasetRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto row = nlohmann::json::parse(line);
            DatasetRecord rec;
            rec.item_id = row.at("item_id").get<std::string>();
            rec.sampled_features =
                row.at("sampled_features").get<std::vector<std::vector<double>>>();
            rec.rendered_prompt = row.at("rendered_prompt").get<std::string>();
            rec.mos = row.at("mos").get<double>();
            rec.label = row.at("label").get<int>();
            records.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("read_curated: " + path.string() + " line " +
                          std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace iovqa

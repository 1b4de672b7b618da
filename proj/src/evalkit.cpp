#include "iovqa/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "iovqa/strings.hpp"
#include "json.hpp"

namespace iovqa {

namespace {

void check_finite(std::span<const double> v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) throw InvalidArgument(std::string(what) + ": non-finite value");
}

std::map<std::string, double> to_map(const ScoreVector& s, const char* what) {
    if (s.item_ids.size() != s.values.size())
        throw InvalidArgument(std::string(what) + ": ids and values differ in length");
    std::map<std::string, double> m;
    for (std::size_t i = 0; i < s.item_ids.size(); ++i)
        if (!m.emplace(s.item_ids[i], s.values[i]).second)
            throw InvalidArgument(std::string(what) + ": duplicate item id " + s.item_ids[i]);
    return m;
}

double pearson(std::span<const double> a, std::span<const double> b) {
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
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) throw DegenerateInput("correlation: constant input");
    return sab / std::sqrt(saa * sbb);
}

bool has_ties(std::span<const double> v) {
    std::vector<double> sorted(v.begin(), v.end());
    std::sort(sorted.begin(), sorted.end());
    return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

}  // namespace

std::pair<std::vector<double>, std::vector<double>> align_by_id(const ScoreVector& a,
                                                                const ScoreVector& b) {
    const auto ma = to_map(a, "align_by_id lhs");
    const auto mb = to_map(b, "align_by_id rhs");
    if (ma.size() != mb.size())
        throw InvalidArgument("align_by_id: id sets differ in size (" +
                              std::to_string(ma.size()) + " vs " + std::to_string(mb.size()) +
                              ")");
    std::pair<std::vector<double>, std::vector<double>> out;
    out.first.reserve(ma.size());
    out.second.reserve(ma.size());
    for (const auto& [id, value] : ma) {
        const auto it = mb.find(id);
        if (it == mb.end())
            throw InvalidArgument("align_by_id: item " + id + " missing from one side");
        out.first.push_back(value);
        out.second.push_back(it->second);
    }
    return out;
}

std::vector<double> midranks(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

double srcc(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("srcc: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw DegenerateInput("srcc: need at least two points");
    check_finite(a, "srcc");
    check_finite(b, "srcc");
    const auto ra = midranks(a);
    const auto rb = midranks(b);
    // the closed form assumes both rank vectors are permutations of 1..n;
    // odd tie runs keep integral midranks, so ties must be checked directly
    if (!has_ties(a) && !has_ties(b)) {
        double sum_d2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = ra[i] - rb[i];
            sum_d2 += d * d;
        }
        const double nn = static_cast<double>(n);
        return 1.0 - 6.0 * sum_d2 / (nn * (nn * nn - 1.0));
    }
    return pearson(ra, rb);
}

double srcc(const ScoreVector& a, const ScoreVector& b) {
    const auto [va, vb] = align_by_id(a, b);
    return srcc(std::span<const double>(va), std::span<const double>(vb));
}

double plcc(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("plcc: length mismatch");
    if (a.size() < 2) throw DegenerateInput("plcc: need at least two points");
    check_finite(a, "plcc");
    check_finite(b, "plcc");
    return pearson(a, b);
}

double plcc(const ScoreVector& a, const ScoreVector& b) {
    const auto [va, vb] = align_by_id(a, b);
    return plcc(std::span<const double>(va), std::span<const double>(vb));
}

double final_score(double srcc_value, double plcc_value) {
    return 0.5 * (srcc_value + plcc_value);
}

EvalSummary evaluate(const ScoreVector& predictions, const ScoreVector& ground_truth) {
    const auto [p, g] = align_by_id(predictions, ground_truth);
    EvalSummary s;
    s.srcc = srcc(std::span<const double>(p), std::span<const double>(g));
    s.plcc = plcc(std::span<const double>(p), std::span<const double>(g));
    s.final = final_score(s.srcc, s.plcc);
    return s;
}

EnsembleSpec EnsembleSpec::challenge_default() {
    EnsembleSpec spec;
    const double weights[] = {0.25, 0.15, 0.25, 0.1, 0.25};
    for (int i = 0; i < 5; ++i)
        spec.members.push_back({"variant_" + std::to_string(i + 1), weights[i], "mos_1_5"});
    return spec;
}

EnsembleSpec EnsembleSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("ensemble spec: cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("ensemble spec: " + path.string() + ": " + e.what());
    }
    EnsembleSpec spec;
    try {
        for (const auto& m : doc.at("members")) {
            EnsembleMember member;
            member.name = m.at("name").get<std::string>();
            member.weight = m.at("weight").get<double>();
            member.scale = m.value("scale", "mos_1_5");
            spec.members.push_back(std::move(member));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("ensemble spec: " + path.string() + ": " + e.what());
    }
    spec.validate();
    return spec;
}

void EnsembleSpec::save(const std::filesystem::path& path) const {
    validate();
    nlohmann::ordered_json doc;
    doc["members"] = nlohmann::ordered_json::array();
    for (const auto& m : members) {
        nlohmann::ordered_json jm;
        jm["name"] = m.name;
        jm["weight"] = m.weight;
        jm["scale"] = m.scale;
        doc["members"].push_back(std::move(jm));
    }
    std::ofstream out(path);
    if (!out) throw IoError("ensemble spec: cannot open " + path.string());
    out << doc.dump(2) << '\n';
}

void EnsembleSpec::validate() const {
    if (members.empty()) throw InvalidArgument("ensemble spec: no members");
    double total = 0.0;
    for (const auto& m : members) {
        if (m.name.empty()) throw InvalidArgument("ensemble spec: member with empty name");
        if (!(m.weight >= 0.0))
            throw InvalidArgument("ensemble spec: negative weight for " + m.name);
        if (m.scale != "mos_1_5" && m.scale != "label_10_50")
            throw InvalidArgument("ensemble spec: unknown scale " + m.scale);
        total += m.weight;
    }
    if (std::abs(total - 1.0) > 1e-12)
        throw InvalidArgument("ensemble spec: weights sum to " + to_shortest(total) +
                              ", expected 1");
}

ScoreVector ensemble(const std::vector<ScoreVector>& member_scores,
                     const EnsembleSpec& spec) {
    spec.validate();
    if (member_scores.size() != spec.members.size())
        throw InvalidArgument("ensemble: got " + std::to_string(member_scores.size()) +
                              " score sets for " + std::to_string(spec.members.size()) +
                              " members");
    std::vector<std::map<std::string, double>> maps;
    maps.reserve(member_scores.size());
    for (std::size_t i = 0; i < member_scores.size(); ++i)
        maps.push_back(to_map(member_scores[i], spec.members[i].name.c_str()));
    for (std::size_t i = 1; i < maps.size(); ++i) {
        if (maps[i].size() != maps[0].size())
            throw InvalidArgument("ensemble: member " + spec.members[i].name +
                                  " covers a different item set");
        for (const auto& [id, _] : maps[0])
            if (!maps[i].count(id))
                throw InvalidArgument("ensemble: member " + spec.members[i].name +
                                      " is missing item " + id);
    }
    ScoreVector out;
    for (const auto& [id, _] : maps[0]) {
        double acc = 0.0;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            double v = maps[i].at(id);
            if (spec.members[i].scale == "label_10_50") v /= 10.0;
            acc += spec.members[i].weight * v;
        }
        out.item_ids.push_back(id);
        out.values.push_back(acc);
    }
    return out;
}

void write_scores_csv(const ScoreVector& scores, const std::filesystem::path& path) {
    if (scores.item_ids.size() != scores.values.size())
        throw InvalidArgument("write_scores_csv: ids and values differ in length");
    std::ofstream out(path);
    if (!out) throw IoError("write_scores_csv: cannot open " + path.string());
    out << "item_id,score\n";
    for (std::size_t i = 0; i < scores.size(); ++i)
        out << scores.item_ids[i] << ',' << to_shortest(scores.values[i]) << '\n';
    if (!out) throw IoError("write_scores_csv: write failed for " + path.string());
}

ScoreVector read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_scores_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "item_id,score")
        throw IoError("read_scores_csv: " + path.string() + ": bad header");
    ScoreVector out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || comma == 0)
            throw IoError("read_scores_csv: " + path.string() + " line " +
                          std::to_string(line_no) + ": expected item_id,score");
        double value = 0.0;
        const char* begin = line.data() + comma + 1;
        const char* end = line.data() + line.size();
        const auto res = std::from_chars(begin, end, value);
        if (res.ec != std::errc{} || res.ptr != end)
            throw IoError("read_scores_csv: " + path.string() + " line " +
                          std::to_string(line_no) + ": bad score value");
        out.item_ids.push_back(line.substr(0, comma));
        out.values.push_back(value);
    }
    return out;
}

}  // namespace iovqa

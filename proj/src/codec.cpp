#include "iovqa/codec.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace iovqa {

using nlohmann::json;

Vocabulary Vocabulary::standard() {
    std::vector<std::string> toks = {"<PAD>", "<BOS>", "<EOS>", "."};
    for (int d = 0; d < 10; ++d) toks.push_back(std::string(1, static_cast<char>('0' + d)));
    toks.push_back("<LABEL_1>");
    toks.push_back("<FEAT>");
    toks.push_back("<PROMPT>");
    return from_tokens(std::move(toks));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.index_specials();
    return v;
}

void Vocabulary::index_specials() {
    auto find_one = [this](std::string_view name) {
        int at = -1;
        for (int i = 0; i < size(); ++i) {
            if (tokens_[static_cast<std::size_t>(i)] == name) {
                if (at >= 0)
                    throw InvalidArgument("vocabulary: duplicate token " + std::string(name));
                at = i;
            }
        }
        if (at < 0) throw InvalidArgument("vocabulary: missing token " + std::string(name));
        return at;
    };
    pad_ = find_one("<PAD>");
    bos_ = find_one("<BOS>");
    eos_ = find_one("<EOS>");
    dot_ = find_one(".");
    label1_ = find_one("<LABEL_1>");
    feat_ = find_one("<FEAT>");
    prompt_ = find_one("<PROMPT>");
    digit0_ = find_one("0");
    for (int d = 1; d < 10; ++d) {
        const int at = find_one(std::string(1, static_cast<char>('0' + d)));
        if (at != digit0_ + d)
            throw InvalidArgument("vocabulary: digit tokens must be contiguous");
    }
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw InvalidArgument("vocabulary: token id out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(std::string_view token) const {
    for (int i = 0; i < size(); ++i)
        if (tokens_[static_cast<std::size_t>(i)] == token) return i;
    throw InvalidArgument("vocabulary: unknown token " + std::string(token));
}

int Vocabulary::digit(int value) const {
    if (value < 0 || value > 9) throw InvalidArgument("vocabulary: digit value out of range");
    return digit0_ + value;
}

int Vocabulary::digit_value(int id) const {
    if (!is_digit(id)) throw InvalidArgument("vocabulary: token is not a digit");
    return id - digit0_;
}

Vocabulary Vocabulary::load(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open vocabulary file " + file.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InvalidArgument("vocabulary file is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_array()) throw InvalidArgument("vocabulary file must be a JSON array of strings");
    std::vector<std::string> toks;
    for (const auto& t : j) {
        if (!t.is_string()) throw InvalidArgument("vocabulary entries must be strings");
        toks.push_back(t.get<std::string>());
    }
    return from_tokens(std::move(toks));
}

void Vocabulary::save(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write vocabulary file " + file.string());
    out << json(tokens_).dump(2) << '\n';
}

std::array<int, 2> encode_integer_score(int label, const Vocabulary& vocab) {
    if (label < kMinLabel || label > kMaxLabel)
        throw InvalidArgument("integer score " + std::to_string(label) + " outside [10,50]");
    return {vocab.digit(label / 10), vocab.digit(label % 10)};
}

int decode_integer_score(const std::array<int, 2>& tokens, const Vocabulary& vocab) {
    const int value = vocab.digit_value(tokens[0]) * 10 + vocab.digit_value(tokens[1]);
    if (value < kMinLabel || value > kMaxLabel)
        throw ScoreRangeError("decoded integer " + std::to_string(value) + " outside [10,50]");
    return value;
}

std::vector<int> encode_decimal_score(double score, const Vocabulary& vocab,
                                      bool round_to_one_decimal) {
    if (!(score >= 1.0 && score <= 5.95))
        throw InvalidArgument("decimal score must have a single integer digit in [1,5]");
    long long tenths;
    if (round_to_one_decimal) {
        tenths = std::llround(score * 10.0);
    } else {
        const double scaled = score * 10.0;
        tenths = std::llround(scaled);
        if (std::abs(scaled - static_cast<double>(tenths)) > 1e-9)
            throw InvalidArgument("decimal score is not on the one-decimal grid");
    }
    if (tenths < 10 || tenths > 59)
        throw InvalidArgument("decimal score out of encodable range");
    return {vocab.digit(static_cast<int>(tenths / 10)), vocab.dot(),
            vocab.digit(static_cast<int>(tenths % 10))};
}

TokenSequence build_integer_only_mask(TokenSequence target) {
    if (!target.score_span)
        throw InvalidArgument("integer-only mask requires a score span");
    const auto [start, end] = *target.score_span;
    const int n = static_cast<int>(target.ids.size());
    if (start < 0 || end > n || end - start != 2)
        throw InvalidArgument("score span must cover exactly two positions in range");
    target.loss_mask.assign(target.ids.size(), 0);
    target.loss_mask[static_cast<std::size_t>(start)] = 1;
    target.loss_mask[static_cast<std::size_t>(start) + 1] = 1;
    return target;
}

TokenSequence build_full_mask(TokenSequence target, const Vocabulary& vocab) {
    target.loss_mask.assign(target.ids.size(), 0);
    for (std::size_t i = 0; i < target.ids.size(); ++i)
        target.loss_mask[i] = target.ids[i] != vocab.pad() ? 1 : 0;
    return target;
}

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

int validate_range(long long value) {
    if (value < kMinLabel || value > kMaxLabel)
        throw ScoreRangeError("integer score " + std::to_string(value) + " outside [10,50]");
    return static_cast<int>(value);
}

/// First maximal digit run that reads as a standalone integer: neighbors may
/// not be alphanumeric, and an adjacent '.' may not connect to another digit
/// (that would make the run part of a decimal number).
std::optional<long long> first_standalone_integer(const std::string& s) {
    const std::size_t n = s.size();
    std::size_t i = 0;
    while (i < n) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
        bool ok = true;
        if (i > 0) {
            const char left = s[i - 1];
            if (std::isalnum(static_cast<unsigned char>(left))) ok = false;
            if (left == '.' && i >= 2 && std::isdigit(static_cast<unsigned char>(s[i - 2])))
                ok = false;
        }
        if (j < n) {
            const char right = s[j];
            if (std::isalnum(static_cast<unsigned char>(right))) ok = false;
            if (right == '.' && j + 1 < n &&
                std::isdigit(static_cast<unsigned char>(s[j + 1])))
                ok = false;
        }
        if (ok && j - i <= 18) return std::stoll(s.substr(i, j - i));
        i = j;
    }
    return std::nullopt;
}

}  // namespace

int parse_score_output(const std::string& text, ParseMode mode) {
    if (mode == ParseMode::strict) {
        std::size_t b = 0, e = text.size();
        while (b < e && is_space(text[b])) ++b;
        while (e > b && is_space(text[e - 1])) --e;
        if (e - b != 2 || !std::isdigit(static_cast<unsigned char>(text[b])) ||
            !std::isdigit(static_cast<unsigned char>(text[b + 1])))
            throw ScoreFormatError("expected a bare two-digit integer, got \"" + text + "\"");
        return validate_range((text[b] - '0') * 10 + (text[b + 1] - '0'));
    }
    const auto value = first_standalone_integer(text);
    if (!value)
        throw ScoreFormatError("no standalone integer found in \"" + text + "\"");
    return validate_range(*value);
}

std::string render_mask_rows(const TokenSequence& seq, const Vocabulary& vocab) {
    if (seq.ids.size() != seq.loss_mask.size())
        throw InvalidArgument("token/mask length mismatch");
    std::ostringstream tokens, flags;
    tokens << "tokens:";
    flags << "loss:  ";
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        const std::string& t = vocab.token(seq.ids[i]);
        const std::string f = seq.loss_mask[i] ? "*" : ".";
        const std::size_t w = t.size();
        tokens << ' ' << t;
        flags << ' ' << f << std::string(w > 1 ? w - 1 : 0, ' ');
    }
    return tokens.str() + "\n" + flags.str() + "\n";
}

}  // namespace iovqa

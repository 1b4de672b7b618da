#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "iovqa/errors.hpp"

namespace iovqa {

inline constexpr int kMinLabel = 10;
inline constexpr int kMaxLabel = 50;

/// Token inventory of the scorer. One token per digit by construction, so a
/// two-digit integer score is always exactly two tokens and the integer-only
/// mask covers a fixed span. Ids are dense 0..V-1 with the ten digit tokens
/// contiguous.
class Vocabulary {
public:
    /// The fixed default layout:
    ///   <PAD> <BOS> <EOS> . 0 1 2 3 4 5 6 7 8 9 <LABEL_1> <FEAT> <PROMPT>
    static Vocabulary standard();

    /// Reads a JSON array of token strings; validates the invariants.
    static Vocabulary load(const std::filesystem::path& file);
    void save(const std::filesystem::path& file) const;

    static Vocabulary from_tokens(std::vector<std::string> tokens);

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const;
    int id(std::string_view token) const;  // throws InvalidArgument if unknown

    int pad() const { return pad_; }
    int bos() const { return bos_; }
    int eos() const { return eos_; }
    int dot() const { return dot_; }
    int label1() const { return label1_; }
    int feature_slot() const { return feat_; }
    int prompt_slot() const { return prompt_; }

    int digit(int value) const;         // 0..9 -> token id
    bool is_digit(int id) const { return id >= digit0_ && id < digit0_ + 10; }
    int digit_value(int id) const;      // token id -> 0..9

private:
    Vocabulary() = default;
    void index_specials();  // locates specials and checks invariants

    std::vector<std::string> tokens_;
    int pad_ = -1, bos_ = -1, eos_ = -1, dot_ = -1;
    int digit0_ = -1, label1_ = -1, feat_ = -1, prompt_ = -1;
};

/// A token id sequence with a parallel loss mask. `score_span` is the
/// half-open [start,end) index range of the two score digits, when the
/// sequence carries an integer score target.
struct TokenSequence {
    std::vector<int> ids;
    std::vector<std::uint8_t> loss_mask;  // same length as ids
    std::optional<std::pair<int, int>> score_span;

    TokenSequence() = default;
    explicit TokenSequence(std::vector<int> token_ids,
                           std::optional<std::pair<int, int>> span = std::nullopt)
        : ids(std::move(token_ids)),
          loss_mask(ids.size(), 0),
          score_span(span) {}
};

/// Two digit tokens, tens then ones. Label must lie in [10,50].
std::array<int, 2> encode_integer_score(int label, const Vocabulary& vocab);

/// Inverse of encode_integer_score; validates both tokens are digits and the
/// value is in range.
int decode_integer_score(const std::array<int, 2>& tokens, const Vocabulary& vocab);

/// Three tokens: integer digit, ".", fractional digit. Used only by the
/// decimal-label training arm. `round_to_one_decimal` controls whether the
/// input is snapped to the one-decimal grid or required to be on it already.
std::vector<int> encode_decimal_score(double score, const Vocabulary& vocab,
                                      bool round_to_one_decimal = true);

/// Loss restricted to the two score digits: mask true exactly on score_span,
/// false everywhere else. Requires score_span.
TokenSequence build_integer_only_mask(TokenSequence target);

/// Loss over the whole target: mask true on every non-PAD position.
TokenSequence build_full_mask(TokenSequence target, const Vocabulary& vocab);

enum class ParseMode { strict, lenient };

/// Strict mode accepts only an optional-whitespace-wrapped two-digit integer.
/// Lenient mode salvages the first standalone integer from free text (for
/// non-fine-tuned baselines); it still rejects decimals. Throws
/// ScoreFormatError / ScoreRangeError.
int parse_score_output(const std::string& text, ParseMode mode = ParseMode::strict);

/// Aligned token/flag rows for terminal display of a mask.
std::string render_mask_rows(const TokenSequence& seq, const Vocabulary& vocab);

}  // namespace iovqa

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "iovqa/codec.hpp"
#include "iovqa/errors.hpp"
#include "json.hpp"

namespace iovqa {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ScorerConfig {
    int vocab_size = 17;
    int context_len = 64;
    int embed_dim = 64;
    int n_layers = 2;
    int n_heads = 4;
    int feature_dim = 32;
    bool grade_head = false;
    int grade_hidden = 0;  // 0 means embed_dim
    int lora_r = 0;        // 0 disables adapters
    double lora_alpha = 32.0;
    double lora_dropout = 0.1;

    int head_dim() const { return embed_dim / n_heads; }
    int grade_hidden_or_default() const { return grade_hidden > 0 ? grade_hidden : embed_dim; }
    void validate() const;
};

/// One named tensor inside the flat parameter buffer.
struct ParamEntry {
    std::string name;
    std::size_t offset = 0;
    int rows = 0;
    int cols = 0;

    std::size_t count() const { return static_cast<std::size_t>(rows) * cols; }
};

/// All parameters in one contiguous double buffer with named row-major
/// views. Entry order is the checkpoint serialization order. Views are
/// invalidated by add().
class ParamStore {
public:
    using MapT = Eigen::Map<Mat>;
    using ConstMapT = Eigen::Map<const Mat>;

    int add(const std::string& name, int rows, int cols);
    bool has(const std::string& name) const;
    int index(const std::string& name) const;  // throws InvalidArgument if absent

    MapT view(int idx);
    ConstMapT view(int idx) const;
    MapT view(const std::string& name) { return view(index(name)); }
    ConstMapT view(const std::string& name) const { return view(index(name)); }

    const std::vector<ParamEntry>& entries() const { return entries_; }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }
    std::size_t size() const { return data_.size(); }

    void set_zero();
    /// Same layout, zero values (gradient and moment buffers).
    ParamStore like_zeros() const;

private:
    std::vector<ParamEntry> entries_;
    std::vector<std::pair<std::string, int>> lookup_;  // sorted by name
    std::vector<double> data_;
};

/// A batch of packed token sequences, one row per (sequence, position).
/// Feature slots carry a frame feature vector instead of a token embedding.
/// Sequences are front-aligned; ids beyond a sequence length are PAD.
struct PackedBatch {
    int batch = 0;
    int len = 0;
    std::vector<int> ids;                   // batch*len
    std::vector<int> lengths;               // batch
    std::vector<std::uint8_t> is_feature;   // batch*len
    Mat features;                           // (batch*len) x feature_dim, zero elsewhere

    int rows() const { return batch * len; }
    void validate(const ScorerConfig& config) const;
    /// Appends one token to every sequence (all must share the same length).
    void append_token(const std::vector<int>& token_per_seq, int pad_id);
};

struct ForwardCache;

struct ForwardResult {
    Mat logits;        // rows x vocab_size
    Mat final_hidden;  // rows x embed_dim, after the final layer norm
    std::shared_ptr<ForwardCache> cache;
};

class SplitMix64;

/// Standalone low-rank adapter op on row vectors: y = x W^T + s (x A^T) B^T
/// with s = alpha/r. Dropout (on the adapter input) runs only when an RNG is
/// supplied, i.e. in training mode; evaluation is exact, and B == 0 gives
/// the base linear bit for bit.
Mat lora_forward(const Mat& x, const Mat& w, const Mat& a, const Mat& b_up, int r,
                 double alpha, double dropout_rate = 0.0, SplitMix64* rng = nullptr);

/// softmax(logits) dotted with grades 1..5.
double grade_expectation(const Eigen::Matrix<double, 1, 5>& logits);

/// Decoder-only transformer over the score vocabulary: learned token and
/// position embeddings, a linear projection for frame-feature slots, pre-LN
/// blocks with causal multi-head attention and a GELU MLP, tied to nothing.
/// Optional low-rank adapters on every linear; optional softmax-regression
/// grade head read at the last position.
class ScorerModel {
public:
    static ScorerModel zeros(const ScorerConfig& config);
    static ScorerModel randomized(const ScorerConfig& config, std::uint64_t seed);

    const ScorerConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    ForwardResult forward(const PackedBatch& batch, bool want_cache = false) const;

    /// Accumulates into grads (same layout as params()). dlogits and
    /// dfinal_hidden must be zero on rows that should not contribute.
    void backward(const PackedBatch& batch, const ForwardResult& fwd, const Mat& dlogits,
                  const Mat& dfinal_hidden, ParamStore& grads) const;

    /// hidden: rows x embed_dim -> rows x 5 grade logits.
    Mat grade_logits(const Mat& hidden) const;
    void grade_backward(const Mat& hidden, const Mat& dlogits5, Mat& dhidden,
                        ParamStore& grads) const;

    /// Names of entries updated in each training regime. With lora_only the
    /// base weights are frozen and only adapter factors move.
    std::vector<std::string> trainable_entries(bool lora_only) const;

    void save(const std::filesystem::path& path) const;
    static ScorerModel load(const std::filesystem::path& path);

private:
    explicit ScorerModel(const ScorerConfig& config);

    struct LinearRef {
        int w = -1, b = -1, la = -1, lb = -1;
    };

    LinearRef make_linear(const std::string& base, int out, int in);
    Mat linear_fwd(const LinearRef& l, const Mat& x) const;
    void linear_bwd(const LinearRef& l, const Mat& x, const Mat& dy, Mat* dx,
                    ParamStore& grads) const;
    double lora_scale() const { return config_.lora_r > 0 ? config_.lora_alpha / config_.lora_r : 0.0; }

    ScorerConfig config_;
    ParamStore params_;

    int tok_embed_ = -1, pos_embed_ = -1;
    LinearRef feat_proj_;
    struct LayerRefs {
        int ln1_g = -1, ln1_b = -1, ln2_g = -1, ln2_b = -1;
        LinearRef q, k, v, o, fc1, fc2;
    };
    std::vector<LayerRefs> layers_;
    int lnf_g_ = -1, lnf_b_ = -1;
    LinearRef out_proj_;
    LinearRef gh_fc1_, gh_fc2_;
};

/// Greedy temperature-zero decode of the two score digits with the output
/// constrained to valid positions: tens in 1..5, ones in 0..9. Ties pick the
/// lowest token id. All prefixes must share one length. Returns raw labels
/// in [10,59]; range policy is the caller's.
std::vector<int> decode_integer_labels(const ScorerModel& model, PackedBatch prefixes,
                                       const Vocabulary& vocab);

/// Greedy decode of "<d>.<d>" with the same constraints per position;
/// returns scores in [1.0, 5.9].
std::vector<double> decode_decimal_scores(const ScorerModel& model, PackedBatch prefixes,
                                          const Vocabulary& vocab);

/// Reads the grade head at the last position of each sequence (the
/// <LABEL_1> slot) and returns expectation scores on the 1..5 scale.
std::vector<double> grade_head_scores(const ScorerModel& model, const PackedBatch& prefixes);

void to_json(nlohmann::json& j, const ScorerConfig& config);
void from_json(const nlohmann::json& j, ScorerConfig& config);

}  // namespace iovqa

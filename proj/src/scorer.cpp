#include "iovqa/scorer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "iovqa/rng.hpp"

namespace iovqa {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double u) { return 0.5 * u * (1.0 + std::erf(u / std::sqrt(2.0))); }

double gelu_grad(double u) {
    return 0.5 * (1.0 + std::erf(u / std::sqrt(2.0))) +
           u * std::exp(-0.5 * u * u) / std::sqrt(2.0 * kPi);
}

void layer_norm_fwd(const Mat& x, ParamStore::ConstMapT g, ParamStore::ConstMapT b, Mat& y,
                    Mat& xhat, Eigen::VectorXd& inv_std) {
    const Eigen::Index n = x.rows(), d = x.cols();
    y.resize(n, d);
    xhat.resize(n, d);
    inv_std.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_std(i) = inv;
        xhat.row(i) = (x.row(i).array() - mean) * inv;
        y.row(i) = xhat.row(i).array() * g.row(0).array() + b.row(0).array();
    }
}

void layer_norm_bwd(const Mat& dy, const Mat& xhat, const Eigen::VectorXd& inv_std,
                    ParamStore::ConstMapT g, Mat& dx, ParamStore::MapT dg,
                    ParamStore::MapT db) {
    const Eigen::Index n = dy.rows(), d = dy.cols();
    dx.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double dxhat = dy(i, j) * g(0, j);
            m1 += dxhat;
            m2 += dxhat * xhat(i, j);
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double dxhat = dy(i, j) * g(0, j);
            dx(i, j) = inv_std(i) * (dxhat - m1 - xhat(i, j) * m2);
            dg(0, j) += dy(i, j) * xhat(i, j);
            db(0, j) += dy(i, j);
        }
    }
}

}  // namespace

void ScorerConfig::validate() const {
    if (vocab_size < 1) throw InvalidArgument("scorer config: vocab_size must be positive");
    if (context_len < 1) throw InvalidArgument("scorer config: context_len must be positive");
    if (embed_dim < 1) throw InvalidArgument("scorer config: embed_dim must be positive");
    if (n_layers < 1) throw InvalidArgument("scorer config: n_layers must be positive");
    if (n_heads < 1 || embed_dim % n_heads != 0)
        throw InvalidArgument("scorer config: n_heads must divide embed_dim");
    if (feature_dim < 1) throw InvalidArgument("scorer config: feature_dim must be positive");
    if (grade_hidden < 0) throw InvalidArgument("scorer config: grade_hidden must be >= 0");
    if (lora_r < 0) throw InvalidArgument("scorer config: lora_r must be >= 0");
    if (lora_r > 0 && !(lora_alpha > 0.0))
        throw InvalidArgument("scorer config: lora_alpha must be positive");
    if (!(lora_dropout >= 0.0 && lora_dropout < 1.0))
        throw InvalidArgument("scorer config: lora_dropout must be in [0,1)");
}

void to_json(nlohmann::json& j, const ScorerConfig& config) {
    j = nlohmann::json{{"vocab_size", config.vocab_size},
                       {"context_len", config.context_len},
                       {"embed_dim", config.embed_dim},
                       {"n_layers", config.n_layers},
                       {"n_heads", config.n_heads},
                       {"feature_dim", config.feature_dim},
                       {"grade_head", config.grade_head},
                       {"grade_hidden", config.grade_hidden},
                       {"lora_r", config.lora_r},
                       {"lora_alpha", config.lora_alpha},
                       {"lora_dropout", config.lora_dropout}};
}

void from_json(const nlohmann::json& j, ScorerConfig& config) {
    j.at("vocab_size").get_to(config.vocab_size);
    j.at("context_len").get_to(config.context_len);
    j.at("embed_dim").get_to(config.embed_dim);
    j.at("n_layers").get_to(config.n_layers);
    j.at("n_heads").get_to(config.n_heads);
    j.at("feature_dim").get_to(config.feature_dim);
    j.at("grade_head").get_to(config.grade_head);
    config.grade_hidden = j.value("grade_hidden", 0);
    j.at("lora_r").get_to(config.lora_r);
    config.lora_alpha = j.value("lora_alpha", 32.0);
    config.lora_dropout = j.value("lora_dropout", 0.1);
    config.validate();
}

int ParamStore::add(const std::string& name, int rows, int cols) {
    if (rows < 1 || cols < 1) throw InvalidArgument("param store: bad shape for " + name);
    if (has(name)) throw InvalidArgument("param store: duplicate entry " + name);
    ParamEntry e{name, data_.size(), rows, cols};
    data_.resize(data_.size() + e.count(), 0.0);
    entries_.push_back(e);
    const int idx = static_cast<int>(entries_.size()) - 1;
    lookup_.emplace_back(name, idx);
    std::sort(lookup_.begin(), lookup_.end());
    return idx;
}

bool ParamStore::has(const std::string& name) const {
    const auto it = std::lower_bound(lookup_.begin(), lookup_.end(),
                                     std::make_pair(name, 0));
    return it != lookup_.end() && it->first == name;
}

int ParamStore::index(const std::string& name) const {
    const auto it = std::lower_bound(lookup_.begin(), lookup_.end(),
                                     std::make_pair(name, 0));
    if (it == lookup_.end() || it->first != name)
        throw InvalidArgument("param store: no entry named " + name);
    return it->second;
}

ParamStore::MapT ParamStore::view(int idx) {
    const auto& e = entries_.at(static_cast<std::size_t>(idx));
    return MapT(data_.data() + e.offset, e.rows, e.cols);
}

ParamStore::ConstMapT ParamStore::view(int idx) const {
    const auto& e = entries_.at(static_cast<std::size_t>(idx));
    return ConstMapT(data_.data() + e.offset, e.rows, e.cols);
}

void ParamStore::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

ParamStore ParamStore::like_zeros() const {
    ParamStore out;
    out.entries_ = entries_;
    out.lookup_ = lookup_;
    out.data_.assign(data_.size(), 0.0);
    return out;
}

void PackedBatch::validate(const ScorerConfig& config) const {
    if (batch < 1 || len < 1) throw InvalidArgument("packed batch: empty");
    if (len > config.context_len)
        throw InvalidArgument("packed batch: length " + std::to_string(len) +
                              " exceeds context " + std::to_string(config.context_len));
    const std::size_t n = static_cast<std::size_t>(rows());
    if (ids.size() != n || is_feature.size() != n)
        throw InvalidArgument("packed batch: ids/is_feature size mismatch");
    if (lengths.size() != static_cast<std::size_t>(batch))
        throw InvalidArgument("packed batch: lengths size mismatch");
    for (int l : lengths)
        if (l < 1 || l > len) throw InvalidArgument("packed batch: bad sequence length");
    for (int id : ids)
        if (id < 0 || id >= config.vocab_size)
            throw InvalidArgument("packed batch: token id out of range");
    if (features.rows() != rows() || features.cols() != config.feature_dim)
        throw InvalidArgument("packed batch: features shape mismatch");
}

void PackedBatch::append_token(const std::vector<int>& token_per_seq, int pad_id) {
    if (token_per_seq.size() != static_cast<std::size_t>(batch))
        throw InvalidArgument("append_token: one token per sequence required");
    for (int b = 0; b < batch; ++b)
        if (lengths[static_cast<std::size_t>(b)] != len)
            throw InvalidArgument("append_token: sequences must all be full length");
    const int new_len = len + 1;
    std::vector<int> new_ids(static_cast<std::size_t>(batch) * new_len, pad_id);
    std::vector<std::uint8_t> new_feat(static_cast<std::size_t>(batch) * new_len, 0);
    Mat new_features = Mat::Zero(static_cast<Eigen::Index>(batch) * new_len, features.cols());
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < len; ++t) {
            new_ids[static_cast<std::size_t>(b) * new_len + t] =
                ids[static_cast<std::size_t>(b) * len + t];
            new_feat[static_cast<std::size_t>(b) * new_len + t] =
                is_feature[static_cast<std::size_t>(b) * len + t];
            new_features.row(static_cast<Eigen::Index>(b) * new_len + t) =
                features.row(static_cast<Eigen::Index>(b) * len + t);
        }
        new_ids[static_cast<std::size_t>(b) * new_len + len] =
            token_per_seq[static_cast<std::size_t>(b)];
        lengths[static_cast<std::size_t>(b)] = new_len;
    }
    ids = std::move(new_ids);
    is_feature = std::move(new_feat);
    features = std::move(new_features);
    len = new_len;
}

Mat lora_forward(const Mat& x, const Mat& w, const Mat& a, const Mat& b_up, int r,
                 double alpha, double dropout_rate, SplitMix64* rng) {
    if (r < 1) throw InvalidArgument("lora_forward: rank must be >= 1");
    if (w.cols() != x.cols()) throw InvalidArgument("lora_forward: W/x shape mismatch");
    if (a.rows() != r || a.cols() != x.cols())
        throw InvalidArgument("lora_forward: A must be r x in");
    if (b_up.rows() != w.rows() || b_up.cols() != r)
        throw InvalidArgument("lora_forward: B must be out x r");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw InvalidArgument("lora_forward: dropout_rate must be in [0,1)");
    const double scale = alpha / static_cast<double>(r);
    Mat y = x * w.transpose();
    if (rng != nullptr && dropout_rate > 0.0) {
        Mat xd = x;
        const double keep = 1.0 - dropout_rate;
        for (Eigen::Index i = 0; i < xd.rows(); ++i)
            for (Eigen::Index j = 0; j < xd.cols(); ++j)
                xd(i, j) = rng->uniform() < dropout_rate ? 0.0 : xd(i, j) / keep;
        y.noalias() += scale * ((xd * a.transpose()) * b_up.transpose());
    } else {
        y.noalias() += scale * ((x * a.transpose()) * b_up.transpose());
    }
    return y;
}

double grade_expectation(const Eigen::Matrix<double, 1, 5>& logits) {
    const double mx = logits.maxCoeff();
    Eigen::Matrix<double, 1, 5> e = (logits.array() - mx).exp();
    const double z = e.sum();
    double acc = 0.0;
    for (int i = 0; i < 5; ++i) acc += (e(i) / z) * (i + 1);
    return acc;
}

struct ForwardCache {
    struct Layer {
        Mat x_in, xhat1, a, q, k, v, attn_concat, x_mid, xhat2, m, u, h;
        Eigen::VectorXd inv1, inv2;
        std::vector<Mat> probs;  // per sequence, heads stacked vertically
    };
    std::vector<Layer> layers;
    Mat x_last, xhatf;
    Eigen::VectorXd invf;
};

ScorerModel::ScorerModel(const ScorerConfig& config) : config_(config) {
    config_.validate();
    const int d = config_.embed_dim;
    tok_embed_ = params_.add("tok_embed", config_.vocab_size, d);
    pos_embed_ = params_.add("pos_embed", config_.context_len, d);
    feat_proj_ = make_linear("feat_proj", d, config_.feature_dim);
    layers_.resize(static_cast<std::size_t>(config_.n_layers));
    for (int i = 0; i < config_.n_layers; ++i) {
        const std::string p = "layers." + std::to_string(i) + ".";
        auto& L = layers_[static_cast<std::size_t>(i)];
        L.ln1_g = params_.add(p + "ln1.g", 1, d);
        L.ln1_b = params_.add(p + "ln1.b", 1, d);
        L.q = make_linear(p + "attn.q", d, d);
        L.k = make_linear(p + "attn.k", d, d);
        L.v = make_linear(p + "attn.v", d, d);
        L.o = make_linear(p + "attn.o", d, d);
        L.ln2_g = params_.add(p + "ln2.g", 1, d);
        L.ln2_b = params_.add(p + "ln2.b", 1, d);
        L.fc1 = make_linear(p + "mlp.fc1", 4 * d, d);
        L.fc2 = make_linear(p + "mlp.fc2", d, 4 * d);
    }
    lnf_g_ = params_.add("final_ln.g", 1, d);
    lnf_b_ = params_.add("final_ln.b", 1, d);
    out_proj_ = make_linear("out_proj", config_.vocab_size, d);
    if (config_.grade_head) {
        const int h = config_.grade_hidden_or_default();
        gh_fc1_ = make_linear("grade_head.fc1", h, d);
        gh_fc2_ = make_linear("grade_head.fc2", 5, h);
    }
}

ScorerModel::LinearRef ScorerModel::make_linear(const std::string& base, int out, int in) {
    LinearRef l;
    l.w = params_.add(base + ".w", out, in);
    l.b = params_.add(base + ".b", 1, out);
    if (config_.lora_r > 0) {
        l.la = params_.add(base + ".lora_a", config_.lora_r, in);
        l.lb = params_.add(base + ".lora_b", out, config_.lora_r);
    }
    return l;
}

ScorerModel ScorerModel::zeros(const ScorerConfig& config) { return ScorerModel(config); }

ScorerModel ScorerModel::randomized(const ScorerConfig& config, std::uint64_t seed) {
    ScorerModel model(config);
    for (const auto& e : model.params_.entries()) {
        auto view = model.params_.view(model.params_.index(e.name));
        if (e.name.ends_with(".g")) {
            view.setConstant(1.0);
            continue;
        }
        if (e.name.ends_with(".b") || e.name.ends_with(".lora_b")) continue;  // stay zero
        SplitMix64 rng(derive_seed(seed, e.name));
        double sd = 0.02;
        if (e.name.ends_with(".lora_a")) sd = 1.0 / std::sqrt(static_cast<double>(config.lora_r));
        for (int r = 0; r < e.rows; ++r)
            for (int c = 0; c < e.cols; ++c) view(r, c) = sd * rng.gaussian();
    }
    return model;
}

Mat ScorerModel::linear_fwd(const LinearRef& l, const Mat& x) const {
    auto w = params_.view(l.w);
    auto b = params_.view(l.b);
    Mat y = x * w.transpose();
    y.rowwise() += b.row(0);
    if (l.la >= 0) {
        auto a = params_.view(l.la);
        auto bu = params_.view(l.lb);
        y.noalias() += lora_scale() * ((x * a.transpose()) * bu.transpose());
    }
    return y;
}

void ScorerModel::linear_bwd(const LinearRef& l, const Mat& x, const Mat& dy, Mat* dx,
                             ParamStore& grads) const {
    auto w = params_.view(l.w);
    grads.view(l.w).noalias() += dy.transpose() * x;
    grads.view(l.b).row(0) += dy.colwise().sum();
    if (dx) dx->noalias() += dy * w;
    if (l.la >= 0) {
        auto a = params_.view(l.la);
        auto bu = params_.view(l.lb);
        const double s = lora_scale();
        const Mat p = x * a.transpose();
        grads.view(l.lb).noalias() += s * (dy.transpose() * p);
        const Mat dp = s * (dy * bu);
        grads.view(l.la).noalias() += dp.transpose() * x;
        if (dx) dx->noalias() += dp * a;
    }
}

ForwardResult ScorerModel::forward(const PackedBatch& batch, bool want_cache) const {
    batch.validate(config_);
    const int B = batch.batch, L = batch.len, d = config_.embed_dim;
    const int N = B * L;
    const int H = config_.n_heads, hd = config_.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));

    auto cache = std::make_shared<ForwardCache>();
    cache->layers.resize(static_cast<std::size_t>(config_.n_layers));

    Mat x(N, d);
    {
        auto tok = params_.view(tok_embed_);
        auto pos = params_.view(pos_embed_);
        const Mat feat = linear_fwd(feat_proj_, batch.features);
        for (int n = 0; n < N; ++n) {
            const int t = n % L;
            if (batch.is_feature[static_cast<std::size_t>(n)])
                x.row(n) = feat.row(n);
            else
                x.row(n) = tok.row(batch.ids[static_cast<std::size_t>(n)]);
            x.row(n) += pos.row(t);
        }
    }

    for (int li = 0; li < config_.n_layers; ++li) {
        const auto& L_refs = layers_[static_cast<std::size_t>(li)];
        auto& lc = cache->layers[static_cast<std::size_t>(li)];
        lc.x_in = x;
        layer_norm_fwd(lc.x_in, params_.view(L_refs.ln1_g), params_.view(L_refs.ln1_b), lc.a,
                       lc.xhat1, lc.inv1);
        lc.q = linear_fwd(L_refs.q, lc.a);
        lc.k = linear_fwd(L_refs.k, lc.a);
        lc.v = linear_fwd(L_refs.v, lc.a);
        lc.attn_concat = Mat::Zero(N, d);
        lc.probs.resize(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) {
            const int Lb = batch.lengths[static_cast<std::size_t>(b)];
            const int r0 = b * L;
            Mat& probs = lc.probs[static_cast<std::size_t>(b)];
            probs.resize(static_cast<Eigen::Index>(H) * Lb, Lb);
            for (int h = 0; h < H; ++h) {
                const auto Qh = lc.q.block(r0, h * hd, Lb, hd);
                const auto Kh = lc.k.block(r0, h * hd, Lb, hd);
                const auto Vh = lc.v.block(r0, h * hd, Lb, hd);
                Mat s = (Qh * Kh.transpose()) * att_scale;
                auto Ph = probs.middleRows(static_cast<Eigen::Index>(h) * Lb, Lb);
                for (int i = 0; i < Lb; ++i) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (int j = 0; j <= i; ++j) mx = std::max(mx, s(i, j));
                    double z = 0.0;
                    for (int j = 0; j <= i; ++j) {
                        const double e = std::exp(s(i, j) - mx);
                        Ph(i, j) = e;
                        z += e;
                    }
                    for (int j = 0; j <= i; ++j) Ph(i, j) /= z;
                    for (int j = i + 1; j < Lb; ++j) Ph(i, j) = 0.0;
                }
                lc.attn_concat.block(r0, h * hd, Lb, hd).noalias() = Ph * Vh;
            }
        }
        const Mat o = linear_fwd(L_refs.o, lc.attn_concat);
        lc.x_mid = lc.x_in + o;
        layer_norm_fwd(lc.x_mid, params_.view(L_refs.ln2_g), params_.view(L_refs.ln2_b), lc.m,
                       lc.xhat2, lc.inv2);
        lc.u = linear_fwd(L_refs.fc1, lc.m);
        lc.h = lc.u.unaryExpr([](double v) { return gelu(v); });
        const Mat f = linear_fwd(L_refs.fc2, lc.h);
        x = lc.x_mid + f;
    }

    cache->x_last = x;
    ForwardResult out;
    Mat xf;
    layer_norm_fwd(cache->x_last, params_.view(lnf_g_), params_.view(lnf_b_), xf, cache->xhatf,
                   cache->invf);
    out.final_hidden = xf;
    out.logits = linear_fwd(out_proj_, xf);
    if (want_cache) out.cache = cache;
    return out;
}

void ScorerModel::backward(const PackedBatch& batch, const ForwardResult& fwd,
                           const Mat& dlogits, const Mat& dfinal_hidden,
                           ParamStore& grads) const {
    if (!fwd.cache) throw InvalidArgument("backward: forward was run without cache");
    const ForwardCache& cache = *fwd.cache;
    const int B = batch.batch, L = batch.len, d = config_.embed_dim;
    const int N = B * L;
    const int H = config_.n_heads, hd = config_.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    if (dlogits.rows() != N || dlogits.cols() != config_.vocab_size)
        throw InvalidArgument("backward: dlogits shape mismatch");
    if (dfinal_hidden.rows() != N || dfinal_hidden.cols() != d)
        throw InvalidArgument("backward: dfinal_hidden shape mismatch");

    Mat dxf = Mat::Zero(N, d);
    linear_bwd(out_proj_, fwd.final_hidden, dlogits, &dxf, grads);
    dxf += dfinal_hidden;

    Mat dx;
    layer_norm_bwd(dxf, cache.xhatf, cache.invf, params_.view(lnf_g_), dx, grads.view(lnf_g_),
                   grads.view(lnf_b_));

    for (int li = config_.n_layers - 1; li >= 0; --li) {
        const auto& L_refs = layers_[static_cast<std::size_t>(li)];
        const auto& lc = cache.layers[static_cast<std::size_t>(li)];

        // x_out = x_mid + fc2(gelu(fc1(LN2(x_mid))))
        Mat dh = Mat::Zero(N, 4 * d);
        linear_bwd(L_refs.fc2, lc.h, dx, &dh, grads);
        Mat du = dh.array() * lc.u.unaryExpr([](double v) { return gelu_grad(v); }).array();
        Mat dm = Mat::Zero(N, d);
        linear_bwd(L_refs.fc1, lc.m, du, &dm, grads);
        Mat dx_mid_ln;
        layer_norm_bwd(dm, lc.xhat2, lc.inv2, params_.view(L_refs.ln2_g), dx_mid_ln,
                       grads.view(L_refs.ln2_g), grads.view(L_refs.ln2_b));
        Mat dx_mid = dx + dx_mid_ln;

        // x_mid = x_in + o(attention(LN1(x_in)))
        Mat dconcat = Mat::Zero(N, d);
        linear_bwd(L_refs.o, lc.attn_concat, dx_mid, &dconcat, grads);
        Mat dq = Mat::Zero(N, d), dk = Mat::Zero(N, d), dv = Mat::Zero(N, d);
        for (int b = 0; b < B; ++b) {
            const int Lb = batch.lengths[static_cast<std::size_t>(b)];
            const int r0 = b * L;
            const Mat& probs = lc.probs[static_cast<std::size_t>(b)];
            for (int h = 0; h < H; ++h) {
                const auto Ph = probs.middleRows(static_cast<Eigen::Index>(h) * Lb, Lb);
                const auto dOh = dconcat.block(r0, h * hd, Lb, hd);
                const auto Qh = lc.q.block(r0, h * hd, Lb, hd);
                const auto Kh = lc.k.block(r0, h * hd, Lb, hd);
                const auto Vh = lc.v.block(r0, h * hd, Lb, hd);
                const Mat dP = dOh * Vh.transpose();
                dv.block(r0, h * hd, Lb, hd).noalias() += Ph.transpose() * dOh;
                Mat dS(Lb, Lb);
                for (int i = 0; i < Lb; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j <= i; ++j) dot += dP(i, j) * Ph(i, j);
                    for (int j = 0; j < Lb; ++j)
                        dS(i, j) = j <= i ? Ph(i, j) * (dP(i, j) - dot) : 0.0;
                }
                dq.block(r0, h * hd, Lb, hd).noalias() += (dS * Kh) * att_scale;
                dk.block(r0, h * hd, Lb, hd).noalias() += (dS.transpose() * Qh) * att_scale;
            }
        }
        Mat da = Mat::Zero(N, d);
        linear_bwd(L_refs.q, lc.a, dq, &da, grads);
        linear_bwd(L_refs.k, lc.a, dk, &da, grads);
        linear_bwd(L_refs.v, lc.a, dv, &da, grads);
        Mat dx_in_ln;
        layer_norm_bwd(da, lc.xhat1, lc.inv1, params_.view(L_refs.ln1_g), dx_in_ln,
                       grads.view(L_refs.ln1_g), grads.view(L_refs.ln1_b));
        dx = dx_mid + dx_in_ln;
    }

    // dx is now the gradient at the embedding sum.
    auto dtok = grads.view(tok_embed_);
    auto dpos = grads.view(pos_embed_);
    Mat dfeat_in = Mat::Zero(N, config_.feature_dim);
    Mat dfeat_out = Mat::Zero(N, d);
    for (int n = 0; n < N; ++n) {
        const int t = n % L;
        dpos.row(t) += dx.row(n);
        if (batch.is_feature[static_cast<std::size_t>(n)])
            dfeat_out.row(n) = dx.row(n);
        else
            dtok.row(batch.ids[static_cast<std::size_t>(n)]) += dx.row(n);
    }
    linear_bwd(feat_proj_, batch.features, dfeat_out, nullptr, grads);
}

Mat ScorerModel::grade_logits(const Mat& hidden) const {
    if (!config_.grade_head) throw InvalidArgument("grade_logits: model has no grade head");
    const Mat u1 = linear_fwd(gh_fc1_, hidden);
    const Mat h1 = u1.unaryExpr([](double v) { return gelu(v); });
    return linear_fwd(gh_fc2_, h1);
}

void ScorerModel::grade_backward(const Mat& hidden, const Mat& dlogits5, Mat& dhidden,
                                 ParamStore& grads) const {
    if (!config_.grade_head) throw InvalidArgument("grade_backward: model has no grade head");
    const Mat u1 = linear_fwd(gh_fc1_, hidden);
    const Mat h1 = u1.unaryExpr([](double v) { return gelu(v); });
    Mat dh1 = Mat::Zero(hidden.rows(), h1.cols());
    linear_bwd(gh_fc2_, h1, dlogits5, &dh1, grads);
    const Mat du1 =
        dh1.array() * u1.unaryExpr([](double v) { return gelu_grad(v); }).array();
    if (dhidden.rows() != hidden.rows() || dhidden.cols() != hidden.cols())
        dhidden = Mat::Zero(hidden.rows(), hidden.cols());
    linear_bwd(gh_fc1_, hidden, du1, &dhidden, grads);
}

std::vector<std::string> ScorerModel::trainable_entries(bool lora_only) const {
    std::vector<std::string> names;
    for (const auto& e : params_.entries()) {
        const bool is_lora =
            e.name.ends_with(".lora_a") || e.name.ends_with(".lora_b");
        if (lora_only ? is_lora : true) names.push_back(e.name);
    }
    if (lora_only && names.empty())
        throw InvalidArgument("trainable_entries: lora_only on a model without adapters");
    return names;
}

void ScorerModel::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["format"] = "iovqa-scorer";
    header["version"] = 1;
    header["dtype"] = "f32";
    header["config"] = config_;
    auto entries = nlohmann::json::array();
    for (const auto& e : params_.entries())
        entries.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}});
    header["entries"] = std::move(entries);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
    out << header.dump() << '\n';
    std::vector<float> buf;
    for (const auto& e : params_.entries()) {
        buf.resize(e.count());
        const double* src = params_.raw().data() + e.offset;
        for (std::size_t i = 0; i < e.count(); ++i) buf[i] = static_cast<float>(src[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

ScorerModel ScorerModel::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("checkpoint: missing header in " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: bad header in " + path.string() + ": " + e.what());
    }
    try {
        if (header.at("format") != "iovqa-scorer")
            throw IoError("checkpoint: unknown format in " + path.string());
        if (header.at("version") != 1)
            throw IoError("checkpoint: unsupported version in " + path.string());
        if (header.at("dtype") != "f32")
            throw IoError("checkpoint: unsupported dtype in " + path.string());
        ScorerConfig config = header.at("config").get<ScorerConfig>();
        ScorerModel model(config);
        const auto& entries = header.at("entries");
        const auto& expect = model.params_.entries();
        if (entries.size() != expect.size())
            throw IoError("checkpoint: entry count mismatch in " + path.string());
        for (std::size_t i = 0; i < expect.size(); ++i) {
            if (entries[i].at("name") != expect[i].name ||
                entries[i].at("rows") != expect[i].rows ||
                entries[i].at("cols") != expect[i].cols)
                throw IoError("checkpoint: entry mismatch at index " + std::to_string(i) +
                              " in " + path.string());
        }
        std::vector<float> buf;
        for (const auto& e : expect) {
            buf.resize(e.count());
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(buf.size() * sizeof(float)));
            if (!in) throw IoError("checkpoint: truncated blob for " + e.name);
            double* dst = model.params_.raw().data() + e.offset;
            for (std::size_t i = 0; i < e.count(); ++i) dst[i] = buf[i];
        }
        char extra;
        if (in.read(&extra, 1))
            throw IoError("checkpoint: trailing bytes in " + path.string());
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint: bad header field in " + path.string() + ": " + e.what());
    }
}

namespace {

std::vector<int> pick_constrained(const Mat& logits, const std::vector<int>& row_index,
                                  const std::vector<int>& candidate_ids) {
    std::vector<int> out;
    out.reserve(row_index.size());
    for (int r : row_index) {
        int best = candidate_ids.front();
        double best_logit = logits(r, best);
        for (int id : candidate_ids) {
            if (logits(r, id) > best_logit) {  // ties keep the lowest id
                best_logit = logits(r, id);
                best = id;
            }
        }
        out.push_back(best);
    }
    return out;
}

std::vector<int> last_rows(const PackedBatch& batch) {
    std::vector<int> rows(static_cast<std::size_t>(batch.batch));
    for (int b = 0; b < batch.batch; ++b) rows[static_cast<std::size_t>(b)] = b * batch.len + batch.len - 1;
    return rows;
}

std::vector<int> digit_ids(const Vocabulary& vocab, int lo, int hi) {
    std::vector<int> ids;
    for (int v = lo; v <= hi; ++v) ids.push_back(vocab.digit(v));
    return ids;
}

}  // namespace

std::vector<int> decode_integer_labels(const ScorerModel& model, PackedBatch prefixes,
                                       const Vocabulary& vocab) {
    const auto tens = digit_ids(vocab, 1, 5);
    const auto ones = digit_ids(vocab, 0, 9);
    const int pad = vocab.pad();

    Mat logits = model.forward(prefixes).logits;
    const auto d1 = pick_constrained(logits, last_rows(prefixes), tens);
    prefixes.append_token(d1, pad);
    logits = model.forward(prefixes).logits;
    const auto d2 = pick_constrained(logits, last_rows(prefixes), ones);

    std::vector<int> labels(d1.size());
    for (std::size_t i = 0; i < d1.size(); ++i)
        labels[i] = 10 * vocab.digit_value(d1[i]) + vocab.digit_value(d2[i]);
    return labels;
}

std::vector<double> decode_decimal_scores(const ScorerModel& model, PackedBatch prefixes,
                                          const Vocabulary& vocab) {
    const auto tens = digit_ids(vocab, 1, 5);
    const auto ones = digit_ids(vocab, 0, 9);
    const std::vector<int> period = {vocab.dot()};
    const int pad = vocab.pad();

    Mat logits = model.forward(prefixes).logits;
    const auto d1 = pick_constrained(logits, last_rows(prefixes), tens);
    prefixes.append_token(d1, pad);
    logits = model.forward(prefixes).logits;
    const auto dot = pick_constrained(logits, last_rows(prefixes), period);
    prefixes.append_token(dot, pad);
    logits = model.forward(prefixes).logits;
    const auto d2 = pick_constrained(logits, last_rows(prefixes), ones);

    std::vector<double> scores(d1.size());
    for (std::size_t i = 0; i < d1.size(); ++i)
        scores[i] = vocab.digit_value(d1[i]) + 0.1 * vocab.digit_value(d2[i]);
    return scores;
}

std::vector<double> grade_head_scores(const ScorerModel& model, const PackedBatch& prefixes) {
    const ForwardResult fwd = model.forward(prefixes);
    const auto rows = last_rows(prefixes);
    Mat hidden(static_cast<Eigen::Index>(rows.size()), model.config().embed_dim);
    for (std::size_t i = 0; i < rows.size(); ++i)
        hidden.row(static_cast<Eigen::Index>(i)) = fwd.final_hidden.row(rows[i]);
    const Mat logits5 = model.grade_logits(hidden);
    std::vector<double> scores(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        Eigen::Matrix<double, 1, 5> row = logits5.row(static_cast<Eigen::Index>(i));
        scores[i] = grade_expectation(row);
    }
    return scores;
}

}  // namespace iovqa

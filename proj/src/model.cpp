#include "goct/model.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>

namespace goct::nn {

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
    const auto fail = [](const std::string& what) { throw ValidationError("model config: " + what); };
    if (n_layers < 1) fail("n_layers must be >= 1");
    if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
    if (d_ff < 1) fail("d_ff must be >= 1");
    if (token_embed_dim < 1 || difficulty_embed_dim < 1 || token_embed_dim + difficulty_embed_dim != d_model) {
        fail("token_embed_dim + difficulty_embed_dim must equal d_model");
    }
    if (vocab != tokens::kVocabSize) fail("vocab must be " + std::to_string(tokens::kVocabSize));
    if (max_target_tokens < static_cast<int>(tokens::kMaxWindowTokens)) {
        fail("max_target_tokens must be >= " + std::to_string(tokens::kMaxWindowTokens));
    }
    if (!(dropout >= 0.0f && dropout < 1.0f)) fail("dropout must lie in [0, 1)");
    if (encoder_frames < 1) fail("encoder_frames must be >= 1");
    if (n_mels < 1) fail("n_mels must be >= 1");
}

std::map<std::string, std::string> ModelConfig::to_entries() const {
    return {
        {"n_layers", std::to_string(n_layers)},
        {"d_model", std::to_string(d_model)},
        {"n_heads", std::to_string(n_heads)},
        {"d_ff", std::to_string(d_ff)},
        {"token_embed_dim", std::to_string(token_embed_dim)},
        {"difficulty_embed_dim", std::to_string(difficulty_embed_dim)},
        {"vocab", std::to_string(vocab)},
        {"max_target_tokens", std::to_string(max_target_tokens)},
        {"dropout", text::format_real(dropout)},
        {"time_only", time_only ? "1" : "0"},
        {"encoder_frames", std::to_string(encoder_frames)},
        {"n_mels", std::to_string(n_mels)},
    };
}

bool ModelConfig::set(std::string_view key, std::string_view value) {
    const auto as_int = [&](int& field) {
        const auto v = text::parse_int(value);
        if (!v) {
            throw ValidationError("model config: '" + std::string(key) + "' expects an integer");
        }
        field = static_cast<int>(*v);
    };
    if (key == "n_layers") as_int(n_layers);
    else if (key == "d_model") as_int(d_model);
    else if (key == "n_heads") as_int(n_heads);
    else if (key == "d_ff") as_int(d_ff);
    else if (key == "token_embed_dim") as_int(token_embed_dim);
    else if (key == "difficulty_embed_dim") as_int(difficulty_embed_dim);
    else if (key == "vocab") as_int(vocab);
    else if (key == "max_target_tokens") as_int(max_target_tokens);
    else if (key == "encoder_frames") as_int(encoder_frames);
    else if (key == "n_mels") as_int(n_mels);
    else if (key == "dropout") {
        const auto v = text::parse_real(value);
        if (!v) {
            throw ValidationError("model config: 'dropout' expects a number");
        }
        dropout = static_cast<float>(*v);
    } else if (key == "time_only") {
        if (value == "1" || value == "true") time_only = true;
        else if (value == "0" || value == "false") time_only = false;
        else throw ValidationError("model config: 'time_only' expects 0/1/true/false");
    } else {
        return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// ParamSet

std::size_t ParamSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    names_.push_back(std::move(name));
    values_.emplace_back(Matrix::Zero(rows, cols));
    return values_.size() - 1;
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) {
            return i;
        }
    }
    return std::nullopt;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    for (std::size_t i = 0; i < size(); ++i) {
        out.add(names_[i], values_[i].rows(), values_[i].cols());
    }
    return out;
}

void ParamSet::set_zero() {
    for (auto& v : values_) {
        v.setZero();
    }
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) {
        n += static_cast<std::size_t>(v.size());
    }
    return n;
}

bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.names_ != b.names_) {
        return false;
    }
    for (std::size_t i = 0; i < a.values_.size(); ++i) {
        const auto& x = a.values_[i];
        const auto& y = b.values_[i];
        if (x.rows() != y.rows() || x.cols() != y.cols() || x != y) {
            return false;
        }
    }
    return true;
}

// ---------------------------------------------------------------------------
// Layout

namespace {

struct LinearIds {
    std::size_t w = 0;
    std::optional<std::size_t> b;
};
struct NormIds {
    std::size_t gain = 0;
    std::size_t bias = 0;
};
struct AttentionIds {
    LinearIds q, k, v, o;
};
struct FfnIds {
    LinearIds fc1, fc2;
};
struct EncoderLayerIds {
    NormIds norm1;
    AttentionIds attn;
    NormIds norm2;
    FfnIds ffn;
};
struct DecoderLayerIds {
    NormIds norm1;
    AttentionIds self_attn;
    NormIds norm2;
    AttentionIds cross_attn;
    NormIds norm3;
    FfnIds ffn;
};

enum class Init { glorot, zero, one };

struct TensorSpec {
    std::string name;
    Eigen::Index rows;
    Eigen::Index cols;
    Init init;
};

/// Tensor order of a config; indices into ParamSet follow it.
struct Layout {
    LinearIds enc_in;
    std::vector<EncoderLayerIds> enc;
    NormIds enc_norm;
    std::size_t tok_emb = 0;
    std::size_t diff_emb = 0;
    std::vector<DecoderLayerIds> dec;
    NormIds dec_norm;
    LinearIds out;
    std::vector<TensorSpec> specs;

    explicit Layout(const ModelConfig& c) {
        const Eigen::Index d = c.d_model;
        enc_in = linear("encoder.input", c.n_mels, d);
        for (int l = 0; l < c.n_layers; ++l) {
            const std::string p = "encoder.layer" + std::to_string(l) + ".";
            EncoderLayerIds ids;
            ids.norm1 = norm(p + "norm1", d);
            ids.attn = attention(p + "self_attn", d);
            ids.norm2 = norm(p + "norm2", d);
            ids.ffn = ffn(p + "ffn", d, c.d_ff);
            enc.push_back(ids);
        }
        enc_norm = norm("encoder.final_norm", d);
        tok_emb = add("decoder.token_embedding", c.vocab, c.token_embed_dim, Init::glorot);
        diff_emb = add("decoder.difficulty_embedding", kDifficultyBuckets, c.difficulty_embed_dim, Init::glorot);
        for (int l = 0; l < c.n_layers; ++l) {
            const std::string p = "decoder.layer" + std::to_string(l) + ".";
            DecoderLayerIds ids;
            ids.norm1 = norm(p + "norm1", d);
            ids.self_attn = attention(p + "self_attn", d);
            ids.norm2 = norm(p + "norm2", d);
            ids.cross_attn = attention(p + "cross_attn", d);
            ids.norm3 = norm(p + "norm3", d);
            ids.ffn = ffn(p + "ffn", d, c.d_ff);
            dec.push_back(ids);
        }
        dec_norm = norm("decoder.final_norm", d);
        out = linear("output", d, c.vocab);
    }

private:
    std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols, Init init) {
        specs.push_back({std::move(name), rows, cols, init});
        return specs.size() - 1;
    }
    LinearIds linear(const std::string& p, Eigen::Index in, Eigen::Index out_dim) {
        return {add(p + ".weight", in, out_dim, Init::glorot), add(p + ".bias", 1, out_dim, Init::zero)};
    }
    LinearIds linear_no_bias(const std::string& p, Eigen::Index in, Eigen::Index out_dim) {
        return {add(p + ".weight", in, out_dim, Init::glorot), std::nullopt};
    }
    NormIds norm(const std::string& p, Eigen::Index d) {
        return {add(p + ".gain", 1, d, Init::one), add(p + ".bias", 1, d, Init::zero)};
    }
    AttentionIds attention(const std::string& p, Eigen::Index d) {
        return {linear(p + ".query", d, d), linear_no_bias(p + ".key", d, d), linear(p + ".value", d, d),
                linear(p + ".out", d, d)};
    }
    FfnIds ffn(const std::string& p, Eigen::Index d, Eigen::Index hidden) {
        return {linear(p + ".fc1", d, hidden), linear(p + ".fc2", hidden, d)};
    }
};

void check_params(const ModelParams& params, const Layout& layout) {
    const auto& w = params.weights;
    if (w.size() != layout.specs.size()) {
        throw ValidationError("model params: expected " + std::to_string(layout.specs.size()) + " tensors, found " +
                              std::to_string(w.size()));
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto& s = layout.specs[i];
        if (w.name(i) != s.name || w[i].rows() != s.rows || w[i].cols() != s.cols) {
            throw ValidationError("model params: tensor '" + w.name(i) + "' does not match expected '" + s.name +
                                  "' [" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]");
        }
    }
}

// ---------------------------------------------------------------------------
// Layers

constexpr float kNormEps = 1e-5f;

struct NormCache {
    Matrix xhat;
    Eigen::VectorXf rstd;
};

struct AttentionCache {
    Matrix xq;
    Matrix xkv;
    Matrix q, k, v;
    std::vector<Matrix> probs;
    Matrix concat;
};

struct FfnCache {
    Matrix x;
    Matrix hidden;  // post-ReLU
};

Matrix linear(const Matrix& x, const ParamSet& p, LinearIds ids) {
    Matrix y(x.rows(), p[ids.w].cols());
    y.noalias() = x * p[ids.w];
    if (ids.b) {
        y.rowwise() += p[*ids.b].row(0);
    }
    return y;
}

Matrix linear_backward(const Matrix& x, const Matrix& dy, const ParamSet& p, ParamSet& g, LinearIds ids) {
    g[ids.w].noalias() += x.transpose() * dy;
    if (ids.b) {
        g[*ids.b].row(0) += dy.colwise().sum();
    }
    Matrix dx(dy.rows(), p[ids.w].rows());
    dx.noalias() = dy * p[ids.w].transpose();
    return dx;
}

Matrix layer_norm(const Matrix& x, const ParamSet& p, NormIds ids, NormCache* cache) {
    const Eigen::VectorXf mean = x.rowwise().mean();
    Matrix xc = x.colwise() - mean;
    const Eigen::VectorXf var = xc.array().square().rowwise().mean();
    const Eigen::VectorXf rstd = (var.array() + kNormEps).rsqrt();
    Matrix xhat = xc.array().colwise() * rstd.array();
    Matrix y = (xhat.array().rowwise() * p[ids.gain].row(0).array()).rowwise() + p[ids.bias].row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = rstd;
    }
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const NormCache& cache, const ParamSet& p, ParamSet& g, NormIds ids) {
    g[ids.gain].row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    g[ids.bias].row(0) += dy.colwise().sum();
    const Matrix dxhat = dy.array().rowwise() * p[ids.gain].row(0).array();
    const auto n = static_cast<float>(dy.cols());
    const Eigen::VectorXf sum_dxhat = dxhat.rowwise().sum();
    const Eigen::VectorXf sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().sum();
    Matrix dx = (dxhat.array() * n).colwise() - sum_dxhat.array();
    dx.array() -= cache.xhat.array().colwise() * sum_dxhat_xhat.array();
    dx.array().colwise() *= cache.rstd.array() / n;
    return dx;
}

void softmax_rows(Matrix& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        auto row = s.row(i);
        const float m = row.maxCoeff();
        row.array() = (row.array() - m).exp();
        row /= row.sum();
    }
}

Matrix attention(const Matrix& xq, const Matrix& xkv, bool causal, int heads, const ParamSet& p,
                 const AttentionIds& ids, AttentionCache* cache) {
    Matrix q = linear(xq, p, ids.q);
    Matrix k = linear(xkv, p, ids.k);
    Matrix v = linear(xkv, p, ids.v);
    const Eigen::Index dh = q.cols() / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    Matrix concat(xq.rows(), q.cols());
    std::vector<Matrix> probs;
    if (cache) {
        probs.reserve(static_cast<std::size_t>(heads));
    }
    for (int h = 0; h < heads; ++h) {
        const Eigen::Index off = h * dh;
        Matrix s(q.rows(), k.rows());
        s.noalias() = q.middleCols(off, dh) * k.middleCols(off, dh).transpose();
        s *= scale;
        if (causal) {
            for (Eigen::Index i = 0; i < s.rows(); ++i) {
                for (Eigen::Index j = i + 1; j < s.cols(); ++j) {
                    s(i, j) = -std::numeric_limits<float>::infinity();
                }
            }
        }
        softmax_rows(s);
        concat.middleCols(off, dh).noalias() = s * v.middleCols(off, dh);
        if (cache) {
            probs.push_back(std::move(s));
        }
    }
    Matrix out = linear(concat, p, ids.o);
    if (cache) {
        cache->xq = xq;
        cache->xkv = xkv;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->probs = std::move(probs);
        cache->concat = std::move(concat);
    }
    return out;
}

struct AttentionGrads {
    Matrix dxq;
    Matrix dxkv;
};

AttentionGrads attention_backward(const Matrix& dout, const AttentionCache& c, int heads, const ParamSet& p,
                                  ParamSet& g, const AttentionIds& ids) {
    const Matrix dconcat = linear_backward(c.concat, dout, p, g, ids.o);
    const Eigen::Index dh = c.q.cols() / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    Matrix dq(c.q.rows(), c.q.cols());
    Matrix dk(c.k.rows(), c.k.cols());
    Matrix dv(c.v.rows(), c.v.cols());
    for (int h = 0; h < heads; ++h) {
        const Eigen::Index off = h * dh;
        const Matrix& prob = c.probs[static_cast<std::size_t>(h)];
        const auto d_head = dconcat.middleCols(off, dh);
        dv.middleCols(off, dh).noalias() = prob.transpose() * d_head;
        Matrix dprob(prob.rows(), prob.cols());
        dprob.noalias() = d_head * c.v.middleCols(off, dh).transpose();
        const Eigen::VectorXf row_dot = (dprob.array() * prob.array()).rowwise().sum();
        Matrix ds = prob.array() * (dprob.array().colwise() - row_dot.array());
        ds *= scale;
        dq.middleCols(off, dh).noalias() = ds * c.k.middleCols(off, dh);
        dk.middleCols(off, dh).noalias() = ds.transpose() * c.q.middleCols(off, dh);
    }
    AttentionGrads out;
    out.dxq = linear_backward(c.xq, dq, p, g, ids.q);
    out.dxkv = linear_backward(c.xkv, dk, p, g, ids.k);
    out.dxkv += linear_backward(c.xkv, dv, p, g, ids.v);
    return out;
}

Matrix ffn(const Matrix& x, const ParamSet& p, const FfnIds& ids, FfnCache* cache) {
    Matrix hidden = linear(x, p, ids.fc1).cwiseMax(0.0f);
    Matrix y = linear(hidden, p, ids.fc2);
    if (cache) {
        cache->x = x;
        cache->hidden = std::move(hidden);
    }
    return y;
}

Matrix ffn_backward(const Matrix& dy, const FfnCache& c, const ParamSet& p, ParamSet& g, const FfnIds& ids) {
    Matrix dhidden = linear_backward(c.hidden, dy, p, g, ids.fc2);
    dhidden.array() *= (c.hidden.array() > 0.0f).cast<float>();
    return linear_backward(c.x, dhidden, p, g, ids.fc1);
}

/// Applies inverted dropout in place and records the mask. No-op without an rng.
void dropout(Matrix& x, float rate, DropoutRng* rng, Matrix& mask) {
    if (rng == nullptr || rate <= 0.0f) {
        mask.resize(0, 0);
        return;
    }
    mask.resize(x.rows(), x.cols());
    const float keep = 1.0f / (1.0f - rate);
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = rng->uniform() >= rate ? keep : 0.0f;
    }
    x.array() *= mask.array();
}

Matrix dropout_backward(const Matrix& dy, const Matrix& mask) {
    if (mask.size() == 0) {
        return dy;
    }
    return dy.array() * mask.array();
}

// ---------------------------------------------------------------------------
// Whole model

struct EncoderLayerCache {
    NormCache norm1;
    AttentionCache attn;
    Matrix mask1;
    NormCache norm2;
    FfnCache ffn;
    Matrix mask2;
};

struct DecoderLayerCache {
    NormCache norm1;
    AttentionCache self_attn;
    Matrix mask1;
    NormCache norm2;
    AttentionCache cross_attn;
    Matrix mask2;
    NormCache norm3;
    FfnCache ffn;
    Matrix mask3;
};

struct ForwardCache {
    Matrix enc_input;
    Matrix enc_mask0;
    std::vector<EncoderLayerCache> enc;
    NormCache enc_norm;
    Matrix enc_out;
    std::vector<TokenId> tokens;
    int bucket = 0;
    Matrix dec_mask0;
    std::vector<DecoderLayerCache> dec;
    NormCache dec_norm;
    Matrix dec_hidden;
};

Matrix normalized_frames(const ModelParams& params, const FeatureMatrix& frames) {
    const auto& c = params.config;
    if (frames.cols() != c.n_mels) {
        throw ValidationError("forward: tensor 'encoder_frames' has " + std::to_string(frames.cols()) +
                              " columns, expected " + std::to_string(c.n_mels));
    }
    if (frames.rows() != c.encoder_frames) {
        throw ValidationError("forward: tensor 'encoder_frames' has " + std::to_string(frames.rows()) +
                              " rows, expected " + std::to_string(c.encoder_frames));
    }
    Matrix x = frames;
    if (!params.norm.empty()) {
        if (params.norm.mean.size() != c.n_mels || params.norm.stddev.size() != c.n_mels) {
            throw ValidationError("forward: tensor 'feature_norm' does not have n_mels entries");
        }
        x = (x.rowwise() - params.norm.mean).array().rowwise() / params.norm.stddev.array();
    }
    return x;
}

void check_tokens(const ModelConfig& c, std::span<const TokenId> tokens) {
    if (tokens.empty() || static_cast<int>(tokens.size()) > c.max_decoder_length()) {
        throw ValidationError("forward: tensor 'decoder_tokens' length " + std::to_string(tokens.size()) +
                              " outside [1, " + std::to_string(c.max_decoder_length()) + "]");
    }
    for (const auto t : tokens) {
        if (t < 0 || t >= c.vocab) {
            throw ValidationError("forward: tensor 'decoder_tokens' holds id " + std::to_string(t) +
                                  " outside the vocabulary");
        }
    }
}

Matrix encode(const ModelParams& params, const Layout& L, const FeatureMatrix& frames, DropoutRng* rng,
              ForwardCache* cache) {
    const auto& c = params.config;
    const auto& p = params.weights;
    Matrix input = normalized_frames(params, frames);
    Matrix x = linear(input, p, L.enc_in) + positional_encoding(static_cast<int>(frames.rows()), c.d_model);
    Matrix scratch;
    dropout(x, c.dropout, rng, cache ? cache->enc_mask0 : scratch);
    if (cache) {
        cache->enc_input = std::move(input);
        cache->enc.resize(L.enc.size());
    }
    for (std::size_t l = 0; l < L.enc.size(); ++l) {
        const auto& ids = L.enc[l];
        EncoderLayerCache* lc = cache ? &cache->enc[l] : nullptr;
        Matrix h = layer_norm(x, p, ids.norm1, lc ? &lc->norm1 : nullptr);
        Matrix a = attention(h, h, false, c.n_heads, p, ids.attn, lc ? &lc->attn : nullptr);
        dropout(a, c.dropout, rng, lc ? lc->mask1 : scratch);
        x += a;
        h = layer_norm(x, p, ids.norm2, lc ? &lc->norm2 : nullptr);
        Matrix f = ffn(h, p, ids.ffn, lc ? &lc->ffn : nullptr);
        dropout(f, c.dropout, rng, lc ? lc->mask2 : scratch);
        x += f;
    }
    Matrix out = layer_norm(x, p, L.enc_norm, cache ? &cache->enc_norm : nullptr);
    if (cache) {
        cache->enc_out = out;
    }
    return out;
}

Matrix embed_decoder(const ModelParams& params, const Layout& L, std::span<const TokenId> tokens, int bucket) {
    const auto& c = params.config;
    const auto& p = params.weights;
    const auto n = static_cast<Eigen::Index>(tokens.size());
    Matrix x(n, c.d_model);
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i).head(c.token_embed_dim) = p[L.tok_emb].row(tokens[static_cast<std::size_t>(i)]);
        x.row(i).tail(c.difficulty_embed_dim) = p[L.diff_emb].row(bucket);
    }
    x += positional_encoding(static_cast<int>(n), c.d_model);
    return x;
}

Matrix decode(const ModelParams& params, const Layout& L, const Matrix& enc_out, std::span<const TokenId> tokens,
              int bucket, DropoutRng* rng, ForwardCache* cache) {
    const auto& c = params.config;
    const auto& p = params.weights;
    Matrix x = embed_decoder(params, L, tokens, bucket);
    Matrix scratch;
    dropout(x, c.dropout, rng, cache ? cache->dec_mask0 : scratch);
    if (cache) {
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->bucket = bucket;
        cache->dec.resize(L.dec.size());
    }
    for (std::size_t l = 0; l < L.dec.size(); ++l) {
        const auto& ids = L.dec[l];
        DecoderLayerCache* lc = cache ? &cache->dec[l] : nullptr;
        Matrix h = layer_norm(x, p, ids.norm1, lc ? &lc->norm1 : nullptr);
        Matrix a = attention(h, h, true, c.n_heads, p, ids.self_attn, lc ? &lc->self_attn : nullptr);
        dropout(a, c.dropout, rng, lc ? lc->mask1 : scratch);
        x += a;
        h = layer_norm(x, p, ids.norm2, lc ? &lc->norm2 : nullptr);
        Matrix ca = attention(h, enc_out, false, c.n_heads, p, ids.cross_attn, lc ? &lc->cross_attn : nullptr);
        dropout(ca, c.dropout, rng, lc ? lc->mask2 : scratch);
        x += ca;
        h = layer_norm(x, p, ids.norm3, lc ? &lc->norm3 : nullptr);
        Matrix f = ffn(h, p, ids.ffn, lc ? &lc->ffn : nullptr);
        dropout(f, c.dropout, rng, lc ? lc->mask3 : scratch);
        x += f;
    }
    Matrix hidden = layer_norm(x, p, L.dec_norm, cache ? &cache->dec_norm : nullptr);
    Matrix logits = linear(hidden, p, L.out);
    if (cache) {
        cache->dec_hidden = std::move(hidden);
    }
    return logits;
}

void backward(const ModelParams& params, const Layout& L, const ForwardCache& cache, const Matrix& dlogits,
              ParamSet& g) {
    const auto& c = params.config;
    const auto& p = params.weights;

    Matrix dx = linear_backward(cache.dec_hidden, dlogits, p, g, L.out);
    dx = layer_norm_backward(dx, cache.dec_norm, p, g, L.dec_norm);
    Matrix denc = Matrix::Zero(cache.enc_out.rows(), cache.enc_out.cols());
    for (std::size_t l = L.dec.size(); l-- > 0;) {
        const auto& ids = L.dec[l];
        const auto& lc = cache.dec[l];
        {
            const Matrix df = dropout_backward(dx, lc.mask3);
            const Matrix dh = ffn_backward(df, lc.ffn, p, g, ids.ffn);
            dx += layer_norm_backward(dh, lc.norm3, p, g, ids.norm3);
        }
        {
            const Matrix dca = dropout_backward(dx, lc.mask2);
            const auto grads = attention_backward(dca, lc.cross_attn, c.n_heads, p, g, ids.cross_attn);
            denc += grads.dxkv;
            dx += layer_norm_backward(grads.dxq, lc.norm2, p, g, ids.norm2);
        }
        {
            const Matrix da = dropout_backward(dx, lc.mask1);
            const auto grads = attention_backward(da, lc.self_attn, c.n_heads, p, g, ids.self_attn);
            const Matrix dh = grads.dxq + grads.dxkv;
            dx += layer_norm_backward(dh, lc.norm1, p, g, ids.norm1);
        }
    }
    const Matrix demb = dropout_backward(dx, cache.dec_mask0);
    for (Eigen::Index i = 0; i < demb.rows(); ++i) {
        g[L.tok_emb].row(cache.tokens[static_cast<std::size_t>(i)]) += demb.row(i).head(c.token_embed_dim);
    }
    g[L.diff_emb].row(cache.bucket) += demb.rightCols(c.difficulty_embed_dim).colwise().sum();

    dx = layer_norm_backward(denc, cache.enc_norm, p, g, L.enc_norm);
    for (std::size_t l = L.enc.size(); l-- > 0;) {
        const auto& ids = L.enc[l];
        const auto& lc = cache.enc[l];
        {
            const Matrix df = dropout_backward(dx, lc.mask2);
            const Matrix dh = ffn_backward(df, lc.ffn, p, g, ids.ffn);
            dx += layer_norm_backward(dh, lc.norm2, p, g, ids.norm2);
        }
        {
            const Matrix da = dropout_backward(dx, lc.mask1);
            const auto grads = attention_backward(da, lc.attn, c.n_heads, p, g, ids.attn);
            const Matrix dh = grads.dxq + grads.dxkv;
            dx += layer_norm_backward(dh, lc.norm1, p, g, ids.norm1);
        }
    }
    const Matrix din = dropout_backward(dx, cache.enc_mask0);
    g[L.enc_in.w].noalias() += cache.enc_input.transpose() * din;
    g[*L.enc_in.b].row(0) += din.colwise().sum();
}

} // namespace

// ---------------------------------------------------------------------------
// Public API

int difficulty_bucket(double difficulty) {
    if (!std::isfinite(difficulty)) {
        return 0;
    }
    const double b = std::floor(difficulty / kDifficultyBucketWidth);
    return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(kDifficultyBuckets - 1)));
}

Matrix positional_encoding(int length, int d_model) {
    static std::mutex mutex;
    static std::map<std::pair<int, int>, Matrix> cache;
    const std::lock_guard<std::mutex> lock(mutex);
    auto& pe = cache[{length, d_model}];
    if (pe.rows() != length || pe.cols() != d_model) {
        pe.resize(length, d_model);
        for (int pos = 0; pos < length; ++pos) {
            for (int i = 0; i < d_model; i += 2) {
                const double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
                pe(pos, i) = static_cast<float>(std::sin(pos * freq));
                if (i + 1 < d_model) {
                    pe(pos, i + 1) = static_cast<float>(std::cos(pos * freq));
                }
            }
        }
    }
    return pe;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const Layout layout(config);
    ModelParams params;
    params.config = config;
    std::mt19937_64 rng(seed);
    for (const auto& spec : layout.specs) {
        const std::size_t id = params.weights.add(spec.name, spec.rows, spec.cols);
        auto& m = params.weights[id];
        switch (spec.init) {
        case Init::zero:
            m.setZero();
            break;
        case Init::one:
            m.setOnes();
            break;
        case Init::glorot: {
            const double limit = std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
                m.data()[i] = static_cast<float>((2.0 * u - 1.0) * limit);
            }
            break;
        }
        }
    }
    return params;
}

std::vector<TokenId> decoder_input(std::span<const TokenId> context, std::span<const TokenId> target) {
    std::vector<TokenId> out(context.begin(), context.end());
    out.push_back(tokens::kSeparator);
    for (const auto t : target) {
        if (t == tokens::kEos) {
            break;
        }
        out.push_back(t);
    }
    return out;
}

Matrix forward(const ModelParams& params, const FeatureMatrix& encoder_frames, std::span<const TokenId> decoder_tokens,
               double difficulty) {
    params.config.validate();
    const Layout L(params.config);
    check_params(params, L);
    check_tokens(params.config, decoder_tokens);
    const Matrix enc = encode(params, L, encoder_frames, nullptr, nullptr);
    return decode(params, L, enc, decoder_tokens, difficulty_bucket(difficulty), nullptr, nullptr);
}

LossResult sequence_loss(const Matrix& logits, std::span<const TokenId> targets, std::size_t first_row,
                         float smoothing) {
    LossResult result;
    result.grad = Matrix::Zero(logits.rows(), logits.cols());
    const auto vocab = static_cast<float>(logits.cols());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(first_row + i);
        if (row >= logits.rows()) {
            throw ValidationError("loss: target " + std::to_string(i) + " has no logits row");
        }
        const TokenId t = targets[i];
        if (t < 0 || t >= logits.cols()) {
            throw ValidationError("loss: target id " + std::to_string(t) + " outside the vocabulary");
        }
        const auto z = logits.row(row);
        const float m = z.maxCoeff();
        const Eigen::RowVectorXf shifted = z.array() - m;
        const float lse = std::log(shifted.array().exp().sum());
        const Eigen::RowVectorXf logp = shifted.array() - lse;
        // target distribution: (1 - eps) one-hot + eps / V
        const double loss = -(1.0 - smoothing) * logp(t) - (smoothing / vocab) * logp.sum();
        result.sum += loss;
        result.count += 1;
        auto g = result.grad.row(row);
        g = logp.array().exp();
        g.array() -= smoothing / vocab;
        g(t) -= 1.0f - smoothing;
        if (t == tokens::kEos) {
            break;
        }
    }
    if (result.count == 0) {
        throw ValidationError("loss: no scored positions");
    }
    return result;
}

LossResult accumulate_gradients(const ModelParams& params, const TrainSample& sample, ParamSet& grads, float grad_scale,
                                DropoutRng* rng) {
    const Layout L(params.config);
    check_params(params, L);
    const auto dec_in = decoder_input(sample.context, sample.target);
    check_tokens(params.config, dec_in);
    ForwardCache cache;
    encode(params, L, sample.encoder_frames, rng, &cache);
    const Matrix logits =
        decode(params, L, cache.enc_out, dec_in, difficulty_bucket(sample.difficulty), rng, &cache);
    LossResult loss = sequence_loss(logits, sample.target, sample.context.size());
    const Matrix dlogits = loss.grad * grad_scale;
    backward(params, L, cache, dlogits, grads);
    return loss;
}

LossResult evaluate_sample(const ModelParams& params, const TrainSample& sample) {
    const auto dec_in = decoder_input(sample.context, sample.target);
    const Matrix logits = forward(params, sample.encoder_frames, dec_in, sample.difficulty);
    return sequence_loss(logits, sample.target, sample.context.size());
}

// ---------------------------------------------------------------------------
// Incremental decoding

struct DecoderSession::State {
    const ModelParams& params;
    Layout layout;
    int bucket;
    Matrix enc_out;
    std::vector<Matrix> cross_k, cross_v;  // per layer
    std::vector<Matrix> self_k, self_v;    // per layer, grows by one row per step
    Matrix positions;
    int length = 0;

    State(const ModelParams& p, const FeatureMatrix& frames, double difficulty)
        : params(p), layout(p.config), bucket(difficulty_bucket(difficulty)) {
        p.config.validate();
        check_params(p, layout);
        enc_out = encode(p, layout, frames, nullptr, nullptr);
        for (const auto& ids : layout.dec) {
            cross_k.push_back(linear(enc_out, p.weights, ids.cross_attn.k));
            cross_v.push_back(linear(enc_out, p.weights, ids.cross_attn.v));
            self_k.emplace_back(0, p.config.d_model);
            self_v.emplace_back(0, p.config.d_model);
        }
        positions = positional_encoding(p.config.max_decoder_length(), p.config.d_model);
    }
};

namespace {

Eigen::RowVectorXf attend(const Matrix& q, const Matrix& k, const Matrix& v, int heads) {
    const Eigen::Index dh = q.cols() / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    Matrix concat(1, q.cols());
    for (int h = 0; h < heads; ++h) {
        const Eigen::Index off = h * dh;
        Matrix s(1, k.rows());
        s.noalias() = q.middleCols(off, dh) * k.middleCols(off, dh).transpose();
        s *= scale;
        softmax_rows(s);
        concat.middleCols(off, dh).noalias() = s * v.middleCols(off, dh);
    }
    return concat.row(0);
}

void append_row(Matrix& m, const Matrix& row) {
    m.conservativeResize(m.rows() + 1, Eigen::NoChange);
    m.row(m.rows() - 1) = row.row(0);
}

} // namespace

DecoderSession::DecoderSession(const ModelParams& params, const FeatureMatrix& encoder_frames, double difficulty)
    : state_(std::make_unique<State>(params, encoder_frames, difficulty)) {}

DecoderSession::~DecoderSession() = default;

int DecoderSession::length() const {
    return state_->length;
}

Eigen::RowVectorXf DecoderSession::step(TokenId token) {
    auto& s = *state_;
    const auto& c = s.params.config;
    const auto& p = s.params.weights;
    const auto& L = s.layout;
    if (s.length >= c.max_decoder_length()) {
        throw ValidationError("decoder session: sequence longer than " + std::to_string(c.max_decoder_length()));
    }
    if (token < 0 || token >= c.vocab) {
        throw ValidationError("decoder session: token id outside the vocabulary");
    }
    Matrix x(1, c.d_model);
    x.row(0).head(c.token_embed_dim) = p[L.tok_emb].row(token);
    x.row(0).tail(c.difficulty_embed_dim) = p[L.diff_emb].row(s.bucket);
    x.row(0) += s.positions.row(s.length);
    for (std::size_t l = 0; l < L.dec.size(); ++l) {
        const auto& ids = L.dec[l];
        Matrix h = layer_norm(x, p, ids.norm1, nullptr);
        const Matrix q = linear(h, p, ids.self_attn.q);
        append_row(s.self_k[l], linear(h, p, ids.self_attn.k));
        append_row(s.self_v[l], linear(h, p, ids.self_attn.v));
        Matrix a = attend(q, s.self_k[l], s.self_v[l], c.n_heads);
        x += linear(a, p, ids.self_attn.o);
        h = layer_norm(x, p, ids.norm2, nullptr);
        const Matrix cq = linear(h, p, ids.cross_attn.q);
        Matrix ca = attend(cq, s.cross_k[l], s.cross_v[l], c.n_heads);
        x += linear(ca, p, ids.cross_attn.o);
        h = layer_norm(x, p, ids.norm3, nullptr);
        x += ffn(h, p, ids.ffn, nullptr);
    }
    ++s.length;
    const Matrix hidden = layer_norm(x, p, L.dec_norm, nullptr);
    return linear(hidden, p, L.out).row(0);
}

} // namespace goct::nn

#pragma once

#include "goct/features.h"
#include "goct/tokens.h"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace goct::nn {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using tokens::TokenId;

inline constexpr int kDifficultyBuckets = 21;
inline constexpr double kDifficultyBucketWidth = 0.5;
inline constexpr float kLabelSmoothing = 0.02f;

struct ModelConfig {
    int n_layers = 3;
    int d_model = 256;
    int n_heads = 4;
    int d_ff = 1024;
    int token_embed_dim = 208;
    int difficulty_embed_dim = 48;
    int vocab = tokens::kVocabSize;
    int max_target_tokens = 200;
    float dropout = 0.1f;
    bool time_only = false;
    // four beats of 48 frames each
    int encoder_frames = 4 * kFramesPerBeat;
    int n_mels = kMelBins;

    /// Throws ValidationError on inconsistent dimensions.
    void validate() const;
    int max_decoder_length() const { return static_cast<int>(tokens::kContextLength) + 1 + max_target_tokens; }

    std::map<std::string, std::string> to_entries() const;
    /// Applies known keys; returns false for an unknown key.
    bool set(std::string_view key, std::string_view value);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Ordered named tensors. Indices are stable once added.
class ParamSet {
public:
    std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols);

    std::size_t size() const { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Matrix& operator[](std::size_t i) { return values_[i]; }
    const Matrix& operator[](std::size_t i) const { return values_[i]; }
    std::optional<std::size_t> find(std::string_view name) const;

    /// Same names and shapes, all zero.
    ParamSet zeros_like() const;
    void set_zero();
    std::size_t scalar_count() const;

    friend bool operator==(const ParamSet& a, const ParamSet& b);

private:
    std::vector<std::string> names_;
    std::vector<Matrix> values_;
};

/// Per-Mel-bin standardization applied to encoder frames. Empty = identity.
struct FeatureNorm {
    Eigen::RowVectorXf mean;
    Eigen::RowVectorXf stddev;

    bool empty() const { return mean.size() == 0; }
    friend bool operator==(const FeatureNorm& a, const FeatureNorm& b) {
        return a.mean.size() == b.mean.size() && a.stddev.size() == b.stddev.size() && a.mean == b.mean &&
               a.stddev == b.stddev;
    }
};

struct ModelParams {
    ModelConfig config;
    ParamSet weights;
    FeatureNorm norm;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Allocates every tensor named by `config` with Glorot-uniform matrices,
/// zero biases and unit LayerNorm gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Difficulty -> embedding row: clamp(floor(d / 0.5), 0, 20).
int difficulty_bucket(double difficulty);

/// Sinusoidal positional encodings, [length x d_model].
Matrix positional_encoding(int length, int d_model);

/// Decoder input layout: context (7) + SEP + target tokens before EOS.
std::vector<TokenId> decoder_input(std::span<const TokenId> context, std::span<const TokenId> target);

/// Inference forward pass. Returns logits [decoder length x vocab].
Matrix forward(const ModelParams& params, const FeatureMatrix& encoder_frames, std::span<const TokenId> decoder_tokens,
               double difficulty);

struct LossResult {
    double sum = 0.0;   // summed over scored positions
    int count = 0;      // scored positions
    Matrix grad;        // d(sum)/d(logits)
    double mean() const { return count > 0 ? sum / count : 0.0; }
};

/// Label-smoothed cross-entropy. Row `first_row + i` predicts `targets[i]`;
/// scoring stops after the first EOS in `targets`. Throws on an empty set.
LossResult sequence_loss(const Matrix& logits, std::span<const TokenId> targets, std::size_t first_row,
                         float smoothing = kLabelSmoothing);

/// One training example: four beats of frames, context, target ending in EOS.
struct TrainSample {
    FeatureMatrix encoder_frames;
    std::vector<TokenId> context;
    std::vector<TokenId> target;
    double difficulty = 0.0;
};

/// Drives dropout masks; one independent stream per sample.
class DropoutRng {
public:
    explicit DropoutRng(std::uint64_t seed) : engine_(seed) {}
    float uniform() { return static_cast<float>(engine_() >> 40) * (1.0f / 16777216.0f); }

private:
    std::mt19937_64 engine_;
};

/// Forward + backward for one sample. Adds `grad_scale * d(loss sum)/d(param)`
/// into `grads` and returns the loss sum and count. Dropout is active only
/// when `rng` is non-null.
LossResult accumulate_gradients(const ModelParams& params, const TrainSample& sample, ParamSet& grads, float grad_scale,
                                DropoutRng* rng = nullptr);

/// Sum of per-position losses for a sample without gradients.
LossResult evaluate_sample(const ModelParams& params, const TrainSample& sample);

/// Incremental decoder for autoregressive inference. Keeps per-layer
/// key/value caches so each step costs one position.
class DecoderSession {
public:
    DecoderSession(const ModelParams& params, const FeatureMatrix& encoder_frames, double difficulty);
    ~DecoderSession();
    DecoderSession(const DecoderSession&) = delete;
    DecoderSession& operator=(const DecoderSession&) = delete;

    /// Feeds the next token and returns the logits for the following one.
    Eigen::RowVectorXf step(TokenId token);
    int length() const;

private:
    struct State;
    std::unique_ptr<State> state_;
};

} // namespace goct::nn

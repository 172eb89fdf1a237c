#pragma once

#include "goct/model.h"

#include <functional>
#include <string>
#include <string_view>

namespace goct::nn {

/// Training sample stored by reference to its song's spectrogram.
struct SampleRef {
    std::size_t song = 0;
    Tick start_tick = 0;  // first target tick; frames cover [start - 96, start + 96)
    std::vector<TokenId> context;
    std::vector<TokenId> target;  // ends with EOS
    double difficulty = 0.0;
};

struct TrainingSet {
    std::vector<BeatSpectrogram> songs;
    std::vector<SampleRef> samples;

    std::size_t size() const { return samples.size(); }
    TrainSample materialize(std::size_t i) const;
};

/// Rows [first_row, first_row + n_rows) of a spectrogram; rows outside the
/// song are silence (log floor).
FeatureMatrix slice_frames(const BeatSpectrogram& spec, Tick first_row, Eigen::Index n_rows);

/// Encoder frames for a window whose targets start at `start_tick`.
FeatureMatrix window_frames(const BeatSpectrogram& spec, Tick start_tick);

/// Per-Mel-bin mean and standard deviation over every row of `songs`.
FeatureNorm compute_feature_norm(const std::vector<BeatSpectrogram>& songs);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;  // NaN without a validation set
    std::size_t steps = 0;
};

struct TrainOptions {
    double lr = 2e-4;
    int batch = 32;
    int epochs = 10;
    std::uint64_t seed = 0;
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

/// Adam with bias correction, constant learning rate, global grad-norm
/// clipping and a seeded per-epoch shuffle. Single-threaded and
/// bit-reproducible for a fixed seed. Feature normalization is computed
/// from the training songs.
TrainResult train(const TrainingSet& train_set, const TrainingSet* valid_set, const ModelConfig& config,
                  const TrainOptions& options);

/// Continues training from `start` (normalization kept). Defaults follow
/// the finetuning schedule: lr 2e-5 for 4 epochs.
TrainResult finetune(const ModelParams& start, const TrainingSet& train_set, const TrainingSet* valid_set,
                     TrainOptions options);

TrainOptions finetune_defaults();

/// Mean loss over every scored position of a set.
double mean_loss(const ModelParams& params, const TrainingSet& set);

/// Parsed `key=value` training configuration.
struct TrainConfigFile {
    TrainOptions options;
    ModelConfig model;
    std::string normalization_path;
};

/// Keys: lr, batch, epochs, seed, time_only, normalization, plus any
/// model dimension key (d_model, n_layers, ...). `#` starts a comment.
TrainConfigFile parse_train_config(std::string_view text);

void write_feature_norm(const std::string& path, const FeatureNorm& norm);
FeatureNorm read_feature_norm(const std::string& path);

} // namespace goct::nn

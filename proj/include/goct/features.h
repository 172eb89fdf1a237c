#pragma once

#include "goct/audio.h"
#include "goct/tempo.h"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace goct {

using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kFftSize = 512;
inline constexpr int kMelBins = 80;
inline constexpr int kFramesPerBeat = 48;
inline constexpr double kPowerFloor = 1e-10;
inline const float kLogFloor = static_cast<float>(std::log(kPowerFloor));

/// Triangular HTK-Mel filters spanning 0 Hz to Nyquist, shape [n_mels x (n_fft/2 + 1)].
class MelFilterbank {
public:
    MelFilterbank(int sample_rate, int n_fft = kFftSize, int n_mels = kMelBins);

    const Eigen::MatrixXd& weights() const { return weights_; }
    /// Center frequency of each filter in Hz.
    const std::vector<double>& centers_hz() const { return centers_hz_; }
    int n_mels() const { return static_cast<int>(weights_.rows()); }

private:
    Eigen::MatrixXd weights_;
    std::vector<double> centers_hz_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Beat-aligned log-Mel spectrogram, 48 rows per beat.
struct BeatSpectrogram {
    FeatureMatrix frames;  // [48 * n_beats x 80]
    std::int64_t n_beats = 0;
};

/// Frame times in seconds: entry k sits at beat k/48.
std::vector<double> beat_frame_times(const TempoMap& tempo, std::int64_t n_beats);

/// One log-Mel frame per 1/48 beat: 512-sample Hann window centered on the
/// frame time (reflection padded at the buffer edges, zero beyond), power
/// spectrum, Mel projection, natural log floored at 1e-10.
BeatSpectrogram extract(const AudioBuffer& audio, const TempoMap& tempo, std::int64_t n_beats);

/// Beats covered by the audio, rounded up.
std::int64_t beats_in_audio(const AudioBuffer& audio, const TempoMap& tempo);

void write_features(const std::string& path, const BeatSpectrogram& spec);
BeatSpectrogram read_features(const std::string& path);
std::string encode_features(const BeatSpectrogram& spec);
BeatSpectrogram decode_features(std::string_view bytes);

} // namespace goct

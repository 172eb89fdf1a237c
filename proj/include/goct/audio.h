#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace goct {

inline constexpr int kTargetSampleRate = 22050;

/// Mono audio, samples nominally in [-1, 1].
struct AudioBuffer {
    std::vector<float> samples;
    int sample_rate = kTargetSampleRate;

    double duration_ms() const {
        return 1000.0 * static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
    }
};

/// Decoded WAV contents, channels interleaved.
struct PcmAudio {
    std::vector<float> interleaved;
    int channels = 1;
    int sample_rate = kTargetSampleRate;
};

/// Parses a RIFF/WAVE image holding 16-bit PCM or 32-bit IEEE float with
/// one or two channels. Throws FormatError naming the offending chunk.
PcmAudio parse_wav(std::string_view bytes);
PcmAudio read_wav(const std::string& path);

/// Channel mean followed by linear-interpolation resampling.
AudioBuffer downmix_and_resample(const PcmAudio& pcm, int target_rate = kTargetSampleRate);

AudioBuffer load_audio(const std::string& path, int target_rate = kTargetSampleRate);

/// 16-bit PCM mono WAV image.
std::string encode_wav16(const AudioBuffer& audio);
/// 32-bit float WAV image with the given interleaved channels.
std::string encode_wav_float(const PcmAudio& pcm);

} // namespace goct

#include "goct/features.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <complex>
#include <cstring>
#include <numbers>

namespace goct {

double hz_to_mel(double hz) {
    return 2595.0 * std::log10(1.0 + hz / 700.0);
}

double mel_to_hz(double mel) {
    return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank::MelFilterbank(int sample_rate, int n_fft, int n_mels) {
    if (sample_rate <= 0) {
        throw ValidationError("mel filterbank: sample rate must be > 0");
    }
    if (n_fft < 2 || n_mels < 1) {
        throw ValidationError("mel filterbank: n_fft and n_mels must be positive");
    }
    const int n_bins = n_fft / 2 + 1;
    const double top = hz_to_mel(sample_rate / 2.0);
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i) {
        edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(n_mels + 1));
    }
    weights_ = Eigen::MatrixXd::Zero(n_mels, n_bins);
    centers_hz_.assign(edges.begin() + 1, edges.end() - 1);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = edges[static_cast<std::size_t>(m)];
        const double mid = edges[static_cast<std::size_t>(m) + 1];
        const double hi = edges[static_cast<std::size_t>(m) + 2];
        for (int k = 0; k < n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / n_fft;
            const double up = (f - lo) / (mid - lo);
            const double down = (hi - f) / (hi - mid);
            weights_(m, k) = std::max(0.0, std::min(up, down));
        }
        if (weights_.row(m).sum() <= 0.0) {
            throw ValidationError("mel filterbank: filter " + std::to_string(m) + " covers no FFT bin; " +
                                  std::to_string(n_mels) + " mels is too many for a " + std::to_string(n_fft) +
                                  "-point FFT");
        }
    }
}

std::vector<double> beat_frame_times(const TempoMap& tempo, std::int64_t n_beats) {
    std::vector<double> times;
    if (n_beats <= 0) {
        return times;
    }
    times.reserve(static_cast<std::size_t>(n_beats * kFramesPerBeat));
    for (std::int64_t k = 0; k < n_beats * kFramesPerBeat; ++k) {
        times.push_back(tempo.time_at_beat(static_cast<double>(k) / kFramesPerBeat) / 1000.0);
    }
    return times;
}

BeatSpectrogram extract(const AudioBuffer& audio, const TempoMap& tempo, std::int64_t n_beats) {
    if (n_beats <= 0) {
        throw ValidationError("extract: n_beats must be > 0");
    }
    if (audio.sample_rate <= 0 || audio.samples.empty()) {
        throw ValidationError("extract: audio buffer is empty or has no sample rate");
    }
    const MelFilterbank bank(audio.sample_rate);
    Eigen::FFT<double> fft;
    const auto n = static_cast<std::int64_t>(audio.samples.size());
    std::vector<double> window(kFftSize);
    for (int i = 0; i < kFftSize; ++i) {
        window[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kFftSize);
    }
    const auto sample_at = [&](std::int64_t i) -> double {
        if (i < 0) {
            i = -i;
        } else if (i >= n) {
            i = 2 * (n - 1) - i;
        }
        return (i >= 0 && i < n) ? audio.samples[static_cast<std::size_t>(i)] : 0.0;
    };

    const auto times = beat_frame_times(tempo, n_beats);
    BeatSpectrogram spec;
    spec.n_beats = n_beats;
    spec.frames.resize(static_cast<Eigen::Index>(times.size()), kMelBins);
    std::vector<double> buf(kFftSize);
    std::vector<std::complex<double>> bins;
    Eigen::VectorXd power(kFftSize / 2 + 1);
    for (std::size_t row = 0; row < times.size(); ++row) {
        const auto center = static_cast<std::int64_t>(std::llround(times[row] * audio.sample_rate));
        for (int i = 0; i < kFftSize; ++i) {
            buf[static_cast<std::size_t>(i)] = sample_at(center - kFftSize / 2 + i) * window[static_cast<std::size_t>(i)];
        }
        fft.fwd(bins, buf);
        for (int k = 0; k <= kFftSize / 2; ++k) {
            power(k) = std::norm(bins[static_cast<std::size_t>(k)]);
        }
        const Eigen::VectorXd mel = bank.weights() * power;
        for (int m = 0; m < kMelBins; ++m) {
            spec.frames(static_cast<Eigen::Index>(row), m) = static_cast<float>(std::log(std::max(mel(m), kPowerFloor)));
        }
    }
    return spec;
}

std::int64_t beats_in_audio(const AudioBuffer& audio, const TempoMap& tempo) {
    const double end = audio.duration_ms();
    if (end <= tempo.sections().front().start_ms) {
        return 0;
    }
    return static_cast<std::int64_t>(std::ceil(tempo.beat_at_time(end) - 1e-9));
}

namespace {

constexpr char kFeatureMagic[8] = {'G', 'O', 'C', 'T', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

std::uint32_t get_u32(std::string_view b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + static_cast<std::size_t>(i)])) << (8 * i);
    }
    return v;
}

} // namespace

std::string encode_features(const BeatSpectrogram& spec) {
    std::string out(kFeatureMagic, sizeof kFeatureMagic);
    put_u32(out, kFeatureVersion);
    put_u32(out, static_cast<std::uint32_t>(spec.frames.rows()));
    put_u32(out, static_cast<std::uint32_t>(spec.frames.cols()));
    out.reserve(out.size() + static_cast<std::size_t>(spec.frames.size()) * 4);
    for (Eigen::Index i = 0; i < spec.frames.size(); ++i) {
        std::uint32_t raw;
        const float v = spec.frames.data()[i];
        std::memcpy(&raw, &v, sizeof raw);
        put_u32(out, raw);
    }
    return out;
}

BeatSpectrogram decode_features(std::string_view b) {
    if (b.size() < 20 || b.substr(0, 8) != std::string_view(kFeatureMagic, 8)) {
        throw FormatError("feature file: bad magic");
    }
    const auto version = get_u32(b, 8);
    if (version != kFeatureVersion) {
        throw FormatError("feature file: version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kFeatureVersion) + ")");
    }
    const auto rows = get_u32(b, 12);
    const auto cols = get_u32(b, 16);
    if (cols != static_cast<std::uint32_t>(kMelBins)) {
        throw FormatError("feature file: expected 80 mel bins, found " + std::to_string(cols));
    }
    if (rows % kFramesPerBeat != 0) {
        throw FormatError("feature file: frame count not a multiple of 48");
    }
    const std::size_t count = static_cast<std::size_t>(rows) * cols;
    if (b.size() != 20 + count * 4) {
        throw FormatError("feature file: payload size mismatch");
    }
    BeatSpectrogram spec;
    spec.n_beats = rows / kFramesPerBeat;
    spec.frames.resize(rows, cols);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t raw = get_u32(b, 20 + 4 * i);
        std::memcpy(spec.frames.data() + i, &raw, sizeof raw);
    }
    return spec;
}

void write_features(const std::string& path, const BeatSpectrogram& spec) {
    text::write_file(path, encode_features(spec));
}

BeatSpectrogram read_features(const std::string& path) {
    try {
        return decode_features(text::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

} // namespace goct

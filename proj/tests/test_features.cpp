#include <doctest.h>

#include "goct/audio.h"
#include "goct/errors.h"
#include "goct/features.h"
#include "oracles.h"
#include "synth.h"

#include <cmath>
#include <complex>
#include <numbers>

using namespace goct;

namespace {

std::vector<float> sine(double hz, int rate, int n, double amp = 0.5) {
    std::vector<float> s(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        s[static_cast<std::size_t>(i)] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate));
    }
    return s;
}

// Naive DFT magnitude peak, independent of the library FFT.
double dft_peak_hz(const std::vector<float>& x, int rate, double lo, double hi, double step) {
    double best_hz = 0.0, best = -1.0;
    for (double f = lo; f <= hi; f += step) {
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double a = 2.0 * std::numbers::pi * f * static_cast<double>(i) / rate;
            re += x[i] * std::cos(a);
            im -= x[i] * std::sin(a);
        }
        if (re * re + im * im > best) {
            best = re * re + im * im;
            best_hz = f;
        }
    }
    return best_hz;
}

} // namespace

TEST_CASE("spectrogram rows match a direct DFT through the filterbank") {
    const TempoMap tempo({{0.0, 97.0}});
    AudioBuffer audio;
    audio.samples = sine(1234.0, kTargetSampleRate, kTargetSampleRate * 3);
    const auto noise = sine(311.0, kTargetSampleRate, kTargetSampleRate * 3, 0.2);
    for (std::size_t i = 0; i < noise.size(); ++i) {
        audio.samples[i] *= static_cast<float>(1.0 + std::sin(0.0007 * static_cast<double>(i)));
        audio.samples[i] += noise[i];
    }
    const auto spec = extract(audio, tempo, 4);
    const auto times = beat_frame_times(tempo, 4);
    const MelFilterbank bank(kTargetSampleRate);
    const auto n = static_cast<std::int64_t>(audio.samples.size());
    for (const std::size_t row : {std::size_t{0}, std::size_t{1}, std::size_t{77}, std::size_t{191}}) {
        const auto center = static_cast<std::int64_t>(std::llround(times[row] * kTargetSampleRate));
        std::vector<double> frame(kFftSize);
        for (int i = 0; i < kFftSize; ++i) {
            std::int64_t j = center - kFftSize / 2 + i;
            j = j < 0 ? -j : (j >= n ? 2 * (n - 1) - j : j);
            frame[static_cast<std::size_t>(i)] =
                audio.samples[static_cast<std::size_t>(j)] * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / kFftSize));
        }
        Eigen::VectorXd power(kFftSize / 2 + 1);
        for (int k = 0; k <= kFftSize / 2; ++k) {
            std::complex<double> acc{0.0, 0.0};
            for (int t = 0; t < kFftSize; ++t) {
                acc += frame[static_cast<std::size_t>(t)] * std::polar(1.0, -2.0 * std::numbers::pi * k * t / kFftSize);
            }
            power(k) = std::norm(acc);
        }
        const Eigen::VectorXd mel = bank.weights() * power;
        for (int m = 0; m < kMelBins; ++m) {
            const double expected = std::log(std::max(mel(m), kPowerFloor));
            CHECK(spec.frames(static_cast<Eigen::Index>(row), m) == doctest::Approx(expected).epsilon(1e-4));
        }
    }
}

TEST_CASE("mel filterbank") {
    const MelFilterbank bank(kTargetSampleRate);
    CHECK(bank.weights().rows() == 80);
    CHECK(bank.weights().cols() == 257);
    for (int m = 0; m < 80; ++m) {
        CHECK(bank.weights().row(m).sum() > 0.0);
        if (m > 0) {
            CHECK(bank.centers_hz()[static_cast<std::size_t>(m)] > bank.centers_hz()[static_cast<std::size_t>(m) - 1]);
        }
    }
    CHECK(hz_to_mel(mel_to_hz(1234.5)) == doctest::Approx(1234.5));
    CHECK(hz_to_mel(700.0) == doctest::Approx(2595.0 * std::log10(2.0)));
}

TEST_CASE("a sine at a filter centre peaks in that filter") {
    const MelFilterbank bank(kTargetSampleRate);
    const TempoMap tempo({{0.0, 120.0}});
    for (const int k : {20, 40, 60, 75}) {
        AudioBuffer a;
        a.samples = sine(bank.centers_hz()[static_cast<std::size_t>(k)], kTargetSampleRate, kTargetSampleRate);
        const auto spec = extract(a, tempo, 1);
        Eigen::Index arg = 0;
        spec.frames.row(24).maxCoeff(&arg);
        CHECK(arg == k);
    }
}

TEST_CASE("beat frame times") {
    const auto t = beat_frame_times(TempoMap({{0.0, 120.0}}), 1);
    REQUIRE(t.size() == 48);
    for (std::size_t k = 0; k < 48; ++k) {
        CHECK(t[k] == doctest::Approx(0.5 * static_cast<double>(k) / 48.0));
    }
    const TempoMap change({{0.0, 120.0}, {1000.0, 60.0}});
    const auto u = beat_frame_times(change, 4);
    REQUIRE(u.size() == 192);
    for (std::size_t k = 0; k < u.size(); ++k) {
        CHECK(u[k] * 1000.0 == doctest::Approx(change.time_at_beat(static_cast<double>(k) / 48.0)));
    }
    CHECK((u[97] - u[96]) == doctest::Approx(2.0 * (u[95] - u[94])));
    CHECK(beat_frame_times(TempoMap({{0.0, 97.0}}), 400).size() == 19200);
}

TEST_CASE("silence maps to the log floor") {
    AudioBuffer a;
    a.samples.assign(22050, 0.0f);
    const auto spec = extract(a, TempoMap({{0.0, 120.0}}), 2);
    CHECK(spec.frames.rows() == 96);
    CHECK(spec.frames.cols() == 80);
    CHECK((spec.frames.array() == kLogFloor).all());
    CHECK_THROWS_AS(extract(a, TempoMap(), 0), ValidationError);
    CHECK_THROWS_AS(extract(AudioBuffer{}, TempoMap(), 4), ValidationError);
}

TEST_CASE("shape law at several tempi") {
    for (const double bpm : {73.0, 181.0}) {
        const TempoMap tempo({{0.0, bpm}});
        AudioBuffer a;
        a.samples = sine(440.0, kTargetSampleRate, static_cast<int>(400 * 60.0 / bpm * kTargetSampleRate));
        const auto spec = extract(a, tempo, 400);
        CHECK(spec.frames.rows() == 19200);
        CHECK(spec.frames.cols() == 80);
        CHECK(spec.frames.allFinite());
    }
}

TEST_CASE("click peaks align in beat space across tempi") {
    std::vector<Tick> clicks;
    for (Tick t = 0; t < 8 * 48; t += 36) {
        clicks.push_back(t);
    }
    std::vector<std::vector<Eigen::Index>> peaks;
    for (const double bpm : {60.0, 120.0}) {
        const TempoMap tempo({{0.0, bpm}});
        const auto a = testing::render_clicks(tempo, clicks, 8);
        peaks.push_back(testing::peak_rows(extract(a, tempo, 8).frames));
    }
    REQUIRE(peaks[0].size() == clicks.size());
    REQUIRE(peaks[1].size() == clicks.size());
    for (std::size_t i = 0; i < clicks.size(); ++i) {
        CHECK(std::abs(peaks[0][i] - peaks[1][i]) <= 1);
        CHECK(std::abs(peaks[0][i] - clicks[i]) <= 1);
    }
}

TEST_CASE("louder audio never lowers an entry") {
    const TempoMap tempo({{0.0, 150.0}});
    const auto quiet = testing::render_clicks(tempo, {0, 30, 60, 100}, 3);
    auto loud = quiet;
    for (auto& s : loud.samples) {
        s *= 1.5f;
    }
    const auto a = extract(quiet, tempo, 3).frames;
    const auto b = extract(loud, tempo, 3).frames;
    CHECK((b.array() >= a.array()).all());
    CHECK(extract(quiet, tempo, 3).frames == a);
}

TEST_CASE("wav decoding and resampling") {
    PcmAudio stereo;
    stereo.channels = 2;
    stereo.sample_rate = 22050;
    const auto s = sine(300.0, 22050, 2000);
    for (const float v : s) {
        stereo.interleaved.push_back(v);
        stereo.interleaved.push_back(v);
    }
    const auto mono = downmix_and_resample(stereo);
    CHECK(mono.samples == s);

    PcmAudio same{s, 1, 22050};
    CHECK(downmix_and_resample(same).samples == s);

    PcmAudio hi{sine(1000.0, 44100, 8820), 1, 44100};
    const auto down = downmix_and_resample(hi);
    CHECK(down.sample_rate == 22050);
    CHECK(down.samples.size() == 4410);
    CHECK(dft_peak_hz(down.samples, 22050, 500.0, 2000.0, 10.0) == doctest::Approx(1000.0).epsilon(0.011));

    const auto f32 = parse_wav(encode_wav_float(stereo));
    CHECK(f32.channels == 2);
    CHECK(f32.interleaved == stereo.interleaved);
    const auto i16 = parse_wav(encode_wav16(mono));
    REQUIRE(i16.interleaved.size() == mono.samples.size());
    for (std::size_t i = 0; i < mono.samples.size(); ++i) {
        CHECK(std::abs(i16.interleaved[i] - mono.samples[i]) < 1.0 / 32767.0);
    }
    CHECK_THROWS_AS(parse_wav("RIFF1234WAVEjunk"), FormatError);
    CHECK_THROWS_AS(parse_wav("not a wav"), FormatError);
}

TEST_CASE("feature file round trip") {
    BeatSpectrogram s;
    s.n_beats = 1;
    s.frames = FeatureMatrix::Random(48, 80);
    const auto bytes = encode_features(s);
    CHECK(bytes.substr(0, 8) == "GOCTFEAT");
    CHECK(bytes.size() == 8 + 12 + 48 * 80 * 4);
    const auto back = decode_features(bytes);
    CHECK(back.frames == s.frames);
    CHECK(back.n_beats == 1);
    CHECK_THROWS_AS(decode_features(bytes.substr(0, 100)), FormatError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_features(bad), FormatError);
}

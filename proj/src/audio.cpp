#include "goct/audio.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace goct {

namespace {

std::uint32_t u32_le(std::string_view b, std::size_t at) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

std::uint16_t u16_le(std::string_view b, std::size_t at) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                      static_cast<unsigned char>(b[at + 1]) << 8);
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::string wav_header(std::uint16_t format, std::uint16_t channels, std::uint32_t rate, std::uint16_t bits,
                       std::uint32_t data_bytes) {
    std::string h = "RIFF";
    put_u32(h, 36 + data_bytes);
    h += "WAVEfmt ";
    put_u32(h, 16);
    put_u16(h, format);
    put_u16(h, channels);
    put_u32(h, rate);
    put_u32(h, rate * channels * bits / 8);
    put_u16(h, static_cast<std::uint16_t>(channels * bits / 8));
    put_u16(h, bits);
    h += "data";
    put_u32(h, data_bytes);
    return h;
}

} // namespace

PcmAudio parse_wav(std::string_view b) {
    if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE") {
        throw FormatError("wav: missing RIFF/WAVE header");
    }
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t rate = 0;
    std::uint16_t bits = 0;
    bool have_fmt = false;
    std::size_t pos = 12;
    while (pos + 8 <= b.size()) {
        const auto id = b.substr(pos, 4);
        const std::uint32_t size = u32_le(b, pos + 4);
        const std::size_t body = pos + 8;
        if (body + size > b.size()) {
            throw FormatError("wav: chunk '" + std::string(id) + "' truncated");
        }
        if (id == "fmt ") {
            if (size < 16) {
                throw FormatError("wav: chunk 'fmt ' too short");
            }
            format = u16_le(b, body);
            channels = u16_le(b, body + 2);
            rate = u32_le(b, body + 4);
            bits = u16_le(b, body + 14);
            if (format == 0xFFFE && size >= 26) {
                // WAVE_FORMAT_EXTENSIBLE: the sub-format GUID starts with the real tag
                format = u16_le(b, body + 24);
            }
            const bool pcm16 = format == 1 && bits == 16;
            const bool float32 = format == 3 && bits == 32;
            if (!pcm16 && !float32) {
                throw FormatError("wav: chunk 'fmt ' has unsupported encoding (format " + std::to_string(format) +
                                  ", " + std::to_string(bits) + " bits)");
            }
            if (channels < 1 || channels > 2) {
                throw FormatError("wav: chunk 'fmt ' has unsupported channel count " + std::to_string(channels));
            }
            if (rate == 0) {
                throw FormatError("wav: chunk 'fmt ' has zero sample rate");
            }
            have_fmt = true;
        } else if (id == "data") {
            if (!have_fmt) {
                throw FormatError("wav: chunk 'data' precedes chunk 'fmt '");
            }
            PcmAudio pcm;
            pcm.channels = channels;
            pcm.sample_rate = static_cast<int>(rate);
            const std::size_t width = bits / 8;
            const std::size_t count = size / width;
            pcm.interleaved.resize(count - count % channels);
            for (std::size_t i = 0; i < pcm.interleaved.size(); ++i) {
                const std::size_t at = body + i * width;
                if (format == 1) {
                    pcm.interleaved[i] = static_cast<float>(static_cast<std::int16_t>(u16_le(b, at))) / 32768.0f;
                } else {
                    const std::uint32_t raw = u32_le(b, at);
                    float v;
                    std::memcpy(&v, &raw, sizeof v);
                    pcm.interleaved[i] = v;
                }
            }
            return pcm;
        }
        pos = body + size + (size & 1);
    }
    throw FormatError(have_fmt ? "wav: chunk 'data' missing" : "wav: chunk 'fmt ' missing");
}

PcmAudio read_wav(const std::string& path) {
    try {
        return parse_wav(text::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

AudioBuffer downmix_and_resample(const PcmAudio& pcm, int target_rate) {
    if (pcm.channels < 1 || pcm.sample_rate <= 0 || target_rate <= 0) {
        throw ValidationError("downmix_and_resample: bad channel count or sample rate");
    }
    const auto channels = static_cast<std::size_t>(pcm.channels);
    const std::size_t frames = pcm.interleaved.size() / channels;
    std::vector<float> mono(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        float sum = 0.0f;
        for (std::size_t c = 0; c < channels; ++c) {
            sum += pcm.interleaved[i * channels + c];
        }
        mono[i] = sum / static_cast<float>(channels);
    }
    AudioBuffer out;
    out.sample_rate = target_rate;
    if (pcm.sample_rate == target_rate || mono.empty()) {
        out.samples = std::move(mono);
        return out;
    }
    const double step = static_cast<double>(pcm.sample_rate) / target_rate;
    const auto n_out = static_cast<std::size_t>(static_cast<double>(frames) / step);
    out.samples.resize(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = static_cast<double>(i) * step;
        const auto i0 = static_cast<std::size_t>(pos);
        const std::size_t i1 = std::min(i0 + 1, frames - 1);
        const double frac = pos - static_cast<double>(i0);
        out.samples[i] = static_cast<float>((1.0 - frac) * mono[i0] + frac * mono[i1]);
    }
    return out;
}

AudioBuffer load_audio(const std::string& path, int target_rate) {
    return downmix_and_resample(read_wav(path), target_rate);
}

std::string encode_wav16(const AudioBuffer& audio) {
    const auto n = static_cast<std::uint32_t>(audio.samples.size());
    std::string out = wav_header(1, 1, static_cast<std::uint32_t>(audio.sample_rate), 16, n * 2);
    out.reserve(out.size() + n * 2);
    for (const float s : audio.samples) {
        const float clamped = std::clamp(s, -1.0f, 1.0f);
        const auto v = static_cast<std::int16_t>(std::lround(clamped * 32767.0f));
        put_u16(out, static_cast<std::uint16_t>(v));
    }
    return out;
}

std::string encode_wav_float(const PcmAudio& pcm) {
    const auto n = static_cast<std::uint32_t>(pcm.interleaved.size());
    std::string out = wav_header(3, static_cast<std::uint16_t>(pcm.channels),
                                 static_cast<std::uint32_t>(pcm.sample_rate), 32, n * 4);
    for (const float s : pcm.interleaved) {
        std::uint32_t raw;
        std::memcpy(&raw, &s, sizeof raw);
        put_u32(out, raw);
    }
    return out;
}

} // namespace goct

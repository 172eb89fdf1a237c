#include "goct/model_io.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <cstring>

namespace goct::nn {

namespace {

constexpr std::string_view kMagic = "GOCTMODL";
constexpr std::string_view kNormMean = "feature_norm.mean";
constexpr std::string_view kNormStd = "feature_norm.stddev";

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

void put_string(std::string& out, std::string_view s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

void put_floats(std::string& out, const float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t raw;
        std::memcpy(&raw, data + i, sizeof raw);
        put_u32(out, raw);
    }
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::string string() {
        const auto n = u32();
        need(n, "string");
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    void floats(float* out, std::size_t n) {
        need(n * 4, "tensor data");
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t raw = u32();
            std::memcpy(out + i, &raw, sizeof raw);
        }
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("model file: truncated while reading ") + what);
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 8;
};

void put_tensor(std::string& out, std::string_view name, const float* data, std::initializer_list<std::uint32_t> dims) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(dims.size()));
    std::size_t n = 1;
    for (const auto d : dims) {
        put_u32(out, d);
        n *= d;
    }
    put_floats(out, data, n);
}

} // namespace

std::string encode_model(const ModelParams& params) {
    std::string out(kMagic);
    put_u32(out, kModelFormatVersion);
    const auto entries = params.config.to_entries();
    put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [key, value] : entries) {
        put_string(out, key);
        put_string(out, value);
    }
    const bool has_norm = !params.norm.empty();
    put_u32(out, static_cast<std::uint32_t>(params.weights.size() + (has_norm ? 2 : 0)));
    for (std::size_t i = 0; i < params.weights.size(); ++i) {
        const auto& m = params.weights[i];
        put_tensor(out, params.weights.name(i), m.data(),
                   {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())});
    }
    if (has_norm) {
        put_tensor(out, kNormMean, params.norm.mean.data(), {static_cast<std::uint32_t>(params.norm.mean.size())});
        put_tensor(out, kNormStd, params.norm.stddev.data(),
                   {static_cast<std::uint32_t>(params.norm.stddev.size())});
    }
    return out;
}

ModelParams decode_model(std::string_view bytes) {
    if (bytes.size() < 8 || bytes.substr(0, 8) != kMagic) {
        throw FormatError("model file: bad magic (expected GOCTMODL)");
    }
    Reader in(bytes);
    const auto version = in.u32();
    if (version != kModelFormatVersion) {
        throw FormatError("model file: version " + std::to_string(version) + " unsupported, expected version " +
                          std::to_string(kModelFormatVersion));
    }
    ModelParams params;
    const auto n_entries = in.u32();
    for (std::uint32_t i = 0; i < n_entries; ++i) {
        const auto key = in.string();
        const auto value = in.string();
        if (!params.config.set(key, value)) {
            throw FormatError("model file: unknown config key '" + key + "'");
        }
    }
    params.config.validate();
    // tensor names and shapes must match the config's layout
    const ModelParams reference = init_params(params.config, 0);
    const auto n_tensors = in.u32();
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
        const auto name = in.string();
        const auto rank = in.u32();
        if (rank < 1 || rank > 2) {
            throw FormatError("model file: tensor '" + name + "' has unsupported rank " + std::to_string(rank));
        }
        std::uint32_t dims[2] = {1, 1};
        for (std::uint32_t r = 0; r < rank; ++r) {
            dims[r] = in.u32();
        }
        if (name == kNormMean || name == kNormStd) {
            auto& v = name == kNormMean ? params.norm.mean : params.norm.stddev;
            if (rank != 1) {
                throw FormatError("model file: tensor '" + name + "' must be rank 1");
            }
            v.resize(dims[0]);
            in.floats(v.data(), dims[0]);
            continue;
        }
        const auto ref = reference.weights.find(name);
        if (!ref || *ref != params.weights.size()) {
            throw FormatError("model file: unexpected tensor '" + name + "'");
        }
        const auto& shape = reference.weights[*ref];
        if (rank != 2 || dims[0] != shape.rows() || dims[1] != shape.cols()) {
            throw FormatError("model file: tensor '" + name + "' has the wrong shape");
        }
        const auto id = params.weights.add(name, dims[0], dims[1]);
        in.floats(params.weights[id].data(), static_cast<std::size_t>(dims[0]) * dims[1]);
    }
    if (params.weights.size() != reference.weights.size()) {
        throw FormatError("model file: expected " + std::to_string(reference.weights.size()) + " tensors, found " +
                          std::to_string(params.weights.size()));
    }
    if (params.norm.mean.size() != params.norm.stddev.size()) {
        throw FormatError("model file: feature normalization tensors disagree in size");
    }
    if (!in.done()) {
        throw FormatError("model file: trailing bytes");
    }
    return params;
}

void save_model(const std::string& path, const ModelParams& params) {
    text::write_file(path, encode_model(params));
}

ModelParams load_model(const std::string& path) {
    try {
        return decode_model(text::read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

} // namespace goct::nn

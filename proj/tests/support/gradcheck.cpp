#include "gradcheck.h"

#include "goct/tokens.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace goct::testing {

nn::ModelConfig tiny_config() {
    nn::ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 1;
    c.d_ff = 12;
    c.token_embed_dim = 6;
    c.difficulty_embed_dim = 2;
    c.encoder_frames = 16;
    c.dropout = 0.0f;
    return c;
}

nn::ModelParams perturbed_params(const nn::ModelConfig& config, std::uint64_t seed, float sigma) {
    nn::ModelParams p = nn::init_params(config, seed);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<float> n(0.0f, sigma);
    for (std::size_t t = 0; t < p.weights.size(); ++t) {
        auto& w = p.weights[t];
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w.data()[i] += n(rng);
        }
    }
    return p;
}

nn::TrainSample tiny_sample(const nn::ModelConfig& config, std::mt19937_64& rng) {
    nn::TrainSample s;
    std::normal_distribution<float> n(0.0f, 1.0f);
    s.encoder_frames.resize(config.encoder_frames, config.n_mels);
    for (Eigen::Index i = 0; i < s.encoder_frames.size(); ++i) {
        s.encoder_frames.data()[i] = n(rng);
    }
    s.context = {tokens::kEos, tokens::kEos, tokens::kSeparator, 5, 124, 40, 99};
    s.target = {3, 97, 17, 136, 60, 176, tokens::kEos};
    s.difficulty = 2.7;
    return s;
}

DoubleParams to_double(const nn::ModelParams& params) {
    DoubleParams d;
    for (std::size_t t = 0; t < params.weights.size(); ++t) {
        d.names.push_back(params.weights.name(t));
        d.tensors.push_back(params.weights[t].cast<double>());
    }
    return d;
}

namespace {

using Mat = Eigen::MatrixXd;

struct Ref {
    std::map<std::string, const Mat*> by_name;
    double min_margin = std::numeric_limits<double>::infinity();

    explicit Ref(const DoubleParams& p) {
        for (std::size_t i = 0; i < p.names.size(); ++i) {
            by_name[p.names[i]] = &p.tensors[i];
        }
    }

    const Mat& at(const std::string& name) const { return *by_name.at(name); }

    Mat dense(const Mat& x, const std::string& name, bool bias = true) const {
        Mat y = x * at(name + ".weight");
        if (bias) {
            for (Eigen::Index r = 0; r < y.rows(); ++r) {
                y.row(r) += at(name + ".bias").row(0);
            }
        }
        return y;
    }

    Mat norm(const Mat& x, const std::string& name) const {
        Mat y(x.rows(), x.cols());
        const Mat& gain = at(name + ".gain");
        const Mat& bias = at(name + ".bias");
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            double mean = 0.0;
            for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
            mean /= static_cast<double>(x.cols());
            double var = 0.0;
            for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
            var /= static_cast<double>(x.cols());
            for (Eigen::Index c = 0; c < x.cols(); ++c) {
                y(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * gain(0, c) + bias(0, c);
            }
        }
        return y;
    }

    Mat attend(const Mat& xq, const Mat& xkv, bool causal, int heads, const std::string& name) const {
        const Mat q = dense(xq, name + ".query");
        const Mat k = dense(xkv, name + ".key", false);
        const Mat v = dense(xkv, name + ".value");
        const Eigen::Index dh = q.cols() / heads;
        Mat concat = Mat::Zero(xq.rows(), q.cols());
        for (int h = 0; h < heads; ++h) {
            for (Eigen::Index i = 0; i < q.rows(); ++i) {
                const Eigen::Index n = causal ? i + 1 : k.rows();
                std::vector<double> w(static_cast<std::size_t>(n));
                double top = -std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j < n; ++j) {
                    double s = 0.0;
                    for (Eigen::Index c = 0; c < dh; ++c) s += q(i, h * dh + c) * k(j, h * dh + c);
                    w[j] = s / std::sqrt(static_cast<double>(dh));
                    top = std::max(top, w[j]);
                }
                double total = 0.0;
                for (auto& x : w) total += (x = std::exp(x - top));
                for (Eigen::Index j = 0; j < n; ++j) {
                    for (Eigen::Index c = 0; c < dh; ++c) concat(i, h * dh + c) += w[j] / total * v(j, h * dh + c);
                }
            }
        }
        return dense(concat, name + ".out");
    }

    Mat feed_forward(const Mat& x, const std::string& name) {
        Mat hidden = dense(x, name + ".fc1");
        for (Eigen::Index i = 0; i < hidden.size(); ++i) {
            min_margin = std::min(min_margin, std::abs(hidden.data()[i]));
            hidden.data()[i] = std::max(0.0, hidden.data()[i]);
        }
        return dense(hidden, name + ".fc2");
    }
};

double sinusoid(int pos, int col, int d_model) {
    const int i = col - col % 2;
    const double angle = pos * std::pow(10000.0, -static_cast<double>(i) / d_model);
    return col % 2 == 0 ? std::sin(angle) : std::cos(angle);
}

} // namespace

ReferenceResult reference_forward(const nn::ModelConfig& c, const DoubleParams& p, const nn::TrainSample& sample,
                                  float smoothing) {
    Ref ref(p);
    Mat x = ref.dense(sample.encoder_frames.cast<double>(), "encoder.input");
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index col = 0; col < x.cols(); ++col) {
            x(r, col) += sinusoid(static_cast<int>(r), static_cast<int>(col), c.d_model);
        }
    }
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string pre = "encoder.layer" + std::to_string(l) + ".";
        const Mat h = ref.norm(x, pre + "norm1");
        x += ref.attend(h, h, false, c.n_heads, pre + "self_attn");
        x += ref.feed_forward(ref.norm(x, pre + "norm2"), pre + "ffn");
    }
    const Mat memory = ref.norm(x, "encoder.final_norm");

    std::vector<tokens::TokenId> input(sample.context.begin(), sample.context.end());
    input.push_back(tokens::kSeparator);
    for (const auto t : sample.target) {
        if (t == tokens::kEos) break;
        input.push_back(t);
    }
    const double bw = 0.5;
    const int bucket = std::clamp(static_cast<int>(std::floor(sample.difficulty / bw)), 0, 20);
    Mat y(static_cast<Eigen::Index>(input.size()), c.d_model);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        for (int col = 0; col < c.d_model; ++col) {
            const double e = col < c.token_embed_dim
                                 ? ref.at("decoder.token_embedding")(input[static_cast<std::size_t>(r)], col)
                                 : ref.at("decoder.difficulty_embedding")(bucket, col - c.token_embed_dim);
            y(r, col) = e + sinusoid(static_cast<int>(r), col, c.d_model);
        }
    }
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string pre = "decoder.layer" + std::to_string(l) + ".";
        const Mat h = ref.norm(y, pre + "norm1");
        y += ref.attend(h, h, true, c.n_heads, pre + "self_attn");
        y += ref.attend(ref.norm(y, pre + "norm2"), memory, false, c.n_heads, pre + "cross_attn");
        y += ref.feed_forward(ref.norm(y, pre + "norm3"), pre + "ffn");
    }

    ReferenceResult out;
    out.logits = ref.dense(ref.norm(y, "decoder.final_norm"), "output");
    const double V = static_cast<double>(out.logits.cols());
    for (std::size_t i = 0; i < sample.target.size(); ++i) {
        const auto z = out.logits.row(static_cast<Eigen::Index>(sample.context.size() + i));
        const double top = z.maxCoeff();
        const double lse = top + std::log((z.array() - top).exp().sum());
        const tokens::TokenId t = sample.target[i];
        double sum_logp = 0.0;
        for (Eigen::Index k = 0; k < z.size(); ++k) sum_logp += z(k) - lse;
        out.loss += -(1.0 - smoothing) * (z(t) - lse) - smoothing / V * sum_logp;
        if (t == tokens::kEos) break;
    }
    out.min_relu_margin = ref.min_margin;
    return out;
}

GradientCheck gradient_check(const nn::ModelParams& params, const nn::TrainSample& sample, double step) {
    nn::ParamSet grads = params.weights.zeros_like();
    nn::accumulate_gradients(params, sample, grads, 1.0f);

    DoubleParams probe = to_double(params);
    GradientCheck result;
    result.min_relu_margin = reference_forward(params.config, probe, sample).min_relu_margin;
    for (std::size_t t = 0; t < probe.tensors.size(); ++t) {
        auto& w = probe.tensors[t];
        const auto& g = grads[t];
        double diff2 = 0.0, fd2 = 0.0, an2 = 0.0;
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index col = 0; col < w.cols(); ++col) {
                const double orig = w(r, col);
                w(r, col) = orig + step;
                const double up = reference_forward(params.config, probe, sample).loss;
                w(r, col) = orig - step;
                const double down = reference_forward(params.config, probe, sample).loss;
                w(r, col) = orig;
                const double fd = (up - down) / (2.0 * step);
                const double an = g(r, col);
                diff2 += (fd - an) * (fd - an);
                fd2 += fd * fd;
                an2 += an * an;
            }
        }
        TensorCheck c;
        c.name = probe.names[t];
        c.size = static_cast<std::size_t>(w.size());
        c.analytic_norm = std::sqrt(an2);
        const double denom = std::max(std::sqrt(fd2), std::sqrt(an2));
        c.rel_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
        result.tensors.push_back(c);
    }
    return result;
}

} // namespace goct::testing

#include "goct/train.h"

#include "goct/errors.h"
#include "goct/text.h"

#include <cmath>
#include <limits>
#include <sstream>

namespace goct::nn {

FeatureMatrix slice_frames(const BeatSpectrogram& spec, Tick first_row, Eigen::Index n_rows) {
    FeatureMatrix out(n_rows, spec.frames.cols() > 0 ? spec.frames.cols() : kMelBins);
    out.setConstant(kLogFloor);
    const Tick total = spec.frames.rows();
    const Tick lo = std::max<Tick>(first_row, 0);
    const Tick hi = std::min<Tick>(first_row + n_rows, total);
    if (hi > lo) {
        out.middleRows(lo - first_row, hi - lo) = spec.frames.middleRows(lo, hi - lo);
    }
    return out;
}

FeatureMatrix window_frames(const BeatSpectrogram& spec, Tick start_tick) {
    return slice_frames(spec, start_tick - tokens::kWindowTicks, 2 * tokens::kWindowTicks);
}

TrainSample TrainingSet::materialize(std::size_t i) const {
    const auto& ref = samples[i];
    TrainSample s;
    s.encoder_frames = window_frames(songs.at(ref.song), ref.start_tick);
    s.context = ref.context;
    s.target = ref.target;
    s.difficulty = ref.difficulty;
    return s;
}

FeatureNorm compute_feature_norm(const std::vector<BeatSpectrogram>& songs) {
    FeatureNorm norm;
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(kMelBins);
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(kMelBins);
    double rows = 0.0;
    for (const auto& s : songs) {
        if (s.frames.cols() != kMelBins) {
            throw ValidationError("feature normalization: spectrogram without 80 mel bins");
        }
        const Eigen::MatrixXd f = s.frames.cast<double>();
        sum += f.colwise().sum();
        sq += f.array().square().matrix().colwise().sum();
        rows += static_cast<double>(f.rows());
    }
    if (rows == 0.0) {
        return norm;
    }
    const Eigen::RowVectorXd mean = sum / rows;
    const Eigen::RowVectorXd var = (sq / rows).array() - mean.array().square();
    norm.mean = mean.cast<float>();
    norm.stddev = var.array().max(0.0).sqrt().max(1e-3).matrix().cast<float>();
    return norm;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Adam {
    ParamSet m;
    ParamSet v;
    long step = 0;

    explicit Adam(const ParamSet& like) : m(like.zeros_like()), v(like.zeros_like()) {}

    void apply(ParamSet& params, const ParamSet& grads, const TrainOptions& o) {
        ++step;
        const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
        const auto b1 = static_cast<float>(o.beta1);
        const auto b2 = static_cast<float>(o.beta2);
        const auto lr_t = static_cast<float>(o.lr / c1);
        const auto inv_c2 = static_cast<float>(1.0 / c2);
        const auto eps = static_cast<float>(o.adam_eps);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& mi = m[i];
            auto& vi = v[i];
            const auto& g = grads[i];
            mi = b1 * mi + (1.0f - b1) * g;
            vi = b2 * vi + (1.0f - b2) * g.cwiseProduct(g);
            params[i].array() -= lr_t * mi.array() / ((vi.array() * inv_c2).sqrt() + eps);
        }
    }
};

double global_norm(const ParamSet& grads) {
    double sq = 0.0;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        sq += grads[i].cast<double>().squaredNorm();
    }
    return std::sqrt(sq);
}

std::string grad_norm_report(const ParamSet& grads) {
    std::ostringstream out;
    for (std::size_t i = 0; i < grads.size(); ++i) {
        const double n = grads[i].cast<double>().norm();
        if (!std::isfinite(n) || n > 1e3) {
            out << " " << grads.name(i) << "=" << n;
        }
    }
    return out.str();
}

TrainResult run_training(ModelParams params, const TrainingSet& train_set, const TrainingSet* valid_set,
                         const TrainOptions& o) {
    if (o.batch < 1) {
        throw ValidationError("train: batch must be >= 1");
    }
    if (o.epochs < 0) {
        throw ValidationError("train: epochs must be >= 0");
    }
    if (!(o.lr >= 0.0)) {
        throw ValidationError("train: lr must be >= 0");
    }
    TrainResult result;
    if (o.epochs == 0 || train_set.size() == 0) {
        result.params = std::move(params);
        return result;
    }
    Adam adam(params.weights);
    ParamSet grads = params.weights.zeros_like();
    std::mt19937_64 shuffle_rng(splitmix64(o.seed));
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    const auto batch = static_cast<std::size_t>(o.batch);
    std::size_t batch_id = 0;
    for (int epoch = 1; epoch <= o.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng() % i)]);
        }
        double epoch_sum = 0.0;
        long epoch_count = 0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < order.size(); start += batch, ++batch_id) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<TrainSample> samples;
            samples.reserve(end - start);
            int positions = 0;
            for (std::size_t j = start; j < end; ++j) {
                samples.push_back(train_set.materialize(order[j]));
                for (const auto t : samples.back().target) {
                    ++positions;
                    if (t == tokens::kEos) {
                        break;
                    }
                }
            }
            if (positions == 0) {
                continue;
            }
            grads.set_zero();
            double batch_sum = 0.0;
            const float scale = 1.0f / static_cast<float>(positions);
            for (std::size_t j = 0; j < samples.size(); ++j) {
                DropoutRng rng(splitmix64(o.seed ^ splitmix64(batch_id * 1000003ULL + j)));
                batch_sum += accumulate_gradients(params, samples[j], grads, scale, &rng).sum;
            }
            const double norm = global_norm(grads);
            if (!std::isfinite(batch_sum) || !std::isfinite(norm)) {
                throw TrainingError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_id) + ": loss=" + text::format_real(batch_sum / positions) +
                                    ", grad_norm=" + text::format_real(norm) + ";" + grad_norm_report(grads));
            }
            if (norm > o.clip_norm && o.clip_norm > 0.0) {
                const auto factor = static_cast<float>(o.clip_norm / norm);
                for (std::size_t i = 0; i < grads.size(); ++i) {
                    grads[i] *= factor;
                }
            }
            adam.apply(params.weights, grads, o);
            epoch_sum += batch_sum;
            epoch_count += positions;
            ++steps;
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.steps = steps;
        entry.train_loss = epoch_count > 0 ? epoch_sum / static_cast<double>(epoch_count) : 0.0;
        entry.valid_loss = valid_set && valid_set->size() > 0 ? mean_loss(params, *valid_set)
                                                              : std::numeric_limits<double>::quiet_NaN();
        result.log.push_back(entry);
        if (o.on_epoch) {
            o.on_epoch(entry);
        }
    }
    result.params = std::move(params);
    return result;
}

} // namespace

double mean_loss(const ModelParams& params, const TrainingSet& set) {
    double sum = 0.0;
    long count = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto r = evaluate_sample(params, set.materialize(i));
        sum += r.sum;
        count += r.count;
    }
    return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

TrainResult train(const TrainingSet& train_set, const TrainingSet* valid_set, const ModelConfig& config,
                  const TrainOptions& options) {
    ModelParams params = init_params(config, splitmix64(options.seed ^ 0x5eedULL));
    params.norm = compute_feature_norm(train_set.songs);
    return run_training(std::move(params), train_set, valid_set, options);
}

TrainOptions finetune_defaults() {
    TrainOptions o;
    o.lr = 2e-5;
    o.epochs = 4;
    return o;
}

TrainResult finetune(const ModelParams& start, const TrainingSet& train_set, const TrainingSet* valid_set,
                     TrainOptions options) {
    return run_training(start, train_set, valid_set, options);
}

TrainConfigFile parse_train_config(std::string_view input) {
    TrainConfigFile cfg;
    const auto all = text::lines(input);
    for (std::size_t n = 0; n < all.size(); ++n) {
        std::string_view line = all[n];
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = text::trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(n + 1, 1, "expected key=value");
        }
        const auto key = text::trim(line.substr(0, eq));
        const auto value = text::trim(line.substr(eq + 1));
        const auto real = [&]() {
            const auto v = text::parse_real(value);
            if (!v) {
                throw ParseError(n + 1, eq + 2, "'" + std::string(key) + "' expects a number");
            }
            return *v;
        };
        const auto integer = [&]() {
            const auto v = text::parse_int(value);
            if (!v) {
                throw ParseError(n + 1, eq + 2, "'" + std::string(key) + "' expects an integer");
            }
            return *v;
        };
        if (key == "lr") {
            cfg.options.lr = real();
        } else if (key == "batch") {
            cfg.options.batch = static_cast<int>(integer());
        } else if (key == "epochs") {
            cfg.options.epochs = static_cast<int>(integer());
        } else if (key == "seed") {
            cfg.options.seed = static_cast<std::uint64_t>(integer());
        } else if (key == "normalization") {
            cfg.normalization_path = std::string(value);
        } else {
            try {
                if (!cfg.model.set(key, value)) {
                    throw ParseError(n + 1, 1, "unknown key '" + std::string(key) + "'");
                }
            } catch (const ValidationError& e) {
                throw ParseError(n + 1, eq + 2, e.what());
            }
        }
    }
    return cfg;
}

void write_feature_norm(const std::string& path, const FeatureNorm& norm) {
    std::ostringstream out;
    out << "bin\tmean\tstddev\n";
    for (Eigen::Index i = 0; i < norm.mean.size(); ++i) {
        out << i << '\t' << text::format_real(norm.mean(i)) << '\t' << text::format_real(norm.stddev(i)) << '\n';
    }
    text::write_file(path, out.str());
}

FeatureNorm read_feature_norm(const std::string& path) {
    const auto contents = text::read_file(path);
    const auto all = text::lines(contents);
    std::vector<float> mean;
    std::vector<float> stddev;
    for (std::size_t n = 1; n < all.size(); ++n) {
        if (text::trim(all[n]).empty()) {
            continue;
        }
        const auto parts = text::split(all[n], '\t');
        const auto m = parts.size() == 3 ? text::parse_real(parts[1]) : std::nullopt;
        const auto s = parts.size() == 3 ? text::parse_real(parts[2]) : std::nullopt;
        if (!m || !s) {
            throw ParseError(path, n + 1, 1, "expected 'bin<TAB>mean<TAB>stddev'");
        }
        mean.push_back(static_cast<float>(*m));
        stddev.push_back(static_cast<float>(*s));
    }
    FeatureNorm norm;
    norm.mean = Eigen::Map<Eigen::RowVectorXf>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    norm.stddev = Eigen::Map<Eigen::RowVectorXf>(stddev.data(), static_cast<Eigen::Index>(stddev.size()));
    return norm;
}

} // namespace goct::nn

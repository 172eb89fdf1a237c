#include "goct/cli.h"

#include "goct/audio.h"
#include "goct/cchart.h"
#include "goct/dataset.h"
#include "goct/errors.h"
#include "goct/eval.h"
#include "goct/features.h"
#include "goct/generate.h"
#include "goct/importers.h"
#include "goct/model_io.h"
#include "goct/text.h"
#include "goct/tokens.h"
#include "goct/train.h"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace goct::cli {

namespace fs = std::filesystem;

namespace {

std::string with_path(const std::string& path, const std::exception& e) {
    return path + ": " + e.what();
}

/// Rethrows load failures with the offending file prefixed.
template <typename F>
auto load(const std::string& path, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ParseError& e) {
        if (!e.file().empty()) {
            throw;
        }
        throw ParseError(path, e.line(), e.column(), e.message());
    } catch (const ValidationError& e) {
        throw ValidationError(with_path(path, e));
    } catch (const FormatError& e) {
        throw FormatError(with_path(path, e));
    } catch (const tokens::DecodeError& e) {
        throw ValidationError(with_path(path, e));
    }
}

std::string safe_name(std::string s) {
    for (auto& c : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
        if (!ok) {
            c = '_';
        }
    }
    return s;
}

// --- tokenize / detokenize ---------------------------------------------------

std::string tokens_dump(const Chart& chart, bool time_only) {
    std::ostringstream out;
    out << "# goct tokens v1\n";
    out << "# difficulty " << text::format_real(chart.difficulty) << "\n";
    out << "# beats " << chart.n_beats << "\n";
    for (const auto& s : chart.tempo.sections()) {
        out << "# timing " << text::format_real(s.start_ms) << " " << text::format_real(s.bpm) << "\n";
    }
    if (time_only) {
        out << "# time-only\n";
    }
    auto windows = tokens::encode_chart(chart);
    if (time_only) {
        windows = tokens::strip_actions(windows);
    }
    out << tokens::format_windows(windows);
    return out.str();
}

Chart chart_from_dump(std::string_view dump) {
    Chart chart;
    std::vector<TimingSection> timing;
    std::optional<std::int64_t> beats;
    bool time_only = false;
    const auto all = text::lines(dump);
    for (std::size_t n = 0; n < all.size(); ++n) {
        const auto line = text::trim(all[n]);
        if (!line.starts_with('#')) {
            continue;
        }
        const auto f = text::split_fields(line.substr(1));
        if (f.empty()) {
            continue;
        }
        const auto key = f[0].text;
        const auto bad = [&] { return ParseError(n + 1, 1, "malformed header '" + std::string(line) + "'"); };
        if (key == "difficulty") {
            const auto v = f.size() == 2 ? text::parse_real(f[1].text) : std::nullopt;
            if (!v) throw bad();
            chart.difficulty = *v;
        } else if (key == "beats") {
            const auto v = f.size() == 2 ? text::parse_int(f[1].text) : std::nullopt;
            if (!v) throw bad();
            beats = *v;
        } else if (key == "timing") {
            const auto ms = f.size() == 3 ? text::parse_real(f[1].text) : std::nullopt;
            const auto bpm = f.size() == 3 ? text::parse_real(f[2].text) : std::nullopt;
            if (!ms || !bpm) throw bad();
            timing.push_back({*ms, *bpm});
        } else if (key == "time-only") {
            time_only = true;
        }
    }
    if (!timing.empty()) {
        chart.tempo = TempoMap(std::move(timing));
    }
    const auto windows = tokens::parse_windows(dump);
    chart.events = tokens::decode_stream(windows, time_only);
    chart.n_beats = beats ? *beats : beats_covering(chart.events);
    validate_chart(chart);
    return chart;
}

// --- training helpers ---------------------------------------------------------

void print_epoch(std::ostream& out, const nn::EpochLog& e) {
    out << "epoch " << e.epoch << "\ttrain_loss " << text::format_real(e.train_loss);
    if (!std::isnan(e.valid_loss)) {
        out << "\tvalid_loss " << text::format_real(e.valid_loss);
    }
    out << "\tsteps " << e.steps << std::endl;
}

std::optional<nn::TrainingSet> optional_split(const std::string& dir, data::Split split) {
    const auto path = data::shard_path(dir, split);
    if (!fs::exists(path)) {
        return std::nullopt;
    }
    auto set = data::load_training_set(dir, split);
    if (set.size() == 0) {
        return std::nullopt;
    }
    return set;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"goct: tempo-aware rhythm-game chart generation"};
    app.name("goct");
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand all help");

    // import
    std::string import_format, import_in, import_out;
    double import_difficulty = 0.0;
    auto* import_cmd = app.add_subcommand("import", "Convert an .osu, .sm or .cchart file to canonical charts");
    import_cmd->add_option("--format", import_format, "Input format")
        ->required()
        ->check(CLI::IsMember({"osu", "sm", "cchart"}));
    import_cmd->add_option("--in", import_in, "Input file")->required();
    import_cmd->add_option("--out", import_out, "Output directory")->required();
    import_cmd->add_option("--difficulty", import_difficulty, "Difficulty for .osu input")
        ->check(CLI::NonNegativeNumber);

    // validate
    std::string validate_chart_path;
    auto* validate_cmd = app.add_subcommand("validate", "Check a .cchart file");
    validate_cmd->add_option("--chart", validate_chart_path, "Chart file")->required();

    // features
    std::string feat_audio, feat_tempo, feat_out;
    std::int64_t feat_beats = 0;
    auto* features_cmd = app.add_subcommand("features", "Beat-synchronous log-Mel features");
    features_cmd->add_option("--audio", feat_audio, "WAV file")->required();
    features_cmd->add_option("--tempo", feat_tempo, "Chart whose timing lines give the tempo")->required();
    features_cmd->add_option("--beats", feat_beats, "Number of beats (default: whole audio)")
        ->check(CLI::PositiveNumber);
    features_cmd->add_option("--out", feat_out, "Output feature file")->required();

    // dataset-build
    std::string build_manifest, build_out;
    data::BuildOptions build_opts;
    bool build_no_filter = false;
    auto* build_cmd = app.add_subcommand("dataset-build", "Extract features and write sample shards");
    build_cmd->add_option("--manifest", build_manifest, "Manifest TSV")->required();
    build_cmd->add_option("--out", build_out, "Output directory")->required();
    build_cmd->add_flag("--time-only", build_opts.time_only, "Drop action tokens");
    build_cmd->add_flag("--unaligned", build_opts.unaligned, "Random sub-beat window offsets");
    build_cmd->add_option("--seed", build_opts.seed, "Seed for unaligned offsets");
    build_cmd->add_option("--jobs", build_opts.jobs, "Songs processed in parallel")->check(CLI::PositiveNumber);
    build_cmd->add_flag("--no-filter", build_no_filter, "Keep charts the corpus filter would reject");

    // stats
    std::string stats_manifest, stats_data;
    auto* stats_cmd = app.add_subcommand("stats", "Dataset summary");
    stats_cmd->add_option("--manifest", stats_manifest, "Manifest TSV")->required();
    stats_cmd->add_option("--data", stats_data, "Built dataset directory (sample counts from shards)");

    // train
    std::string train_config, train_data, train_out;
    std::optional<std::uint64_t> train_seed;
    std::optional<int> train_epochs;
    std::optional<double> train_lr;
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    train_cmd->add_option("--config", train_config, "key=value config file")->required();
    train_cmd->add_option("--data", train_data, "Built dataset directory")->required();
    train_cmd->add_option("--out", train_out, "Output model file")->required();
    train_cmd->add_option("--seed", train_seed, "Overrides the config seed");
    train_cmd->add_option("--epochs", train_epochs, "Overrides the config epochs")->check(CLI::PositiveNumber);
    train_cmd->add_option("--lr", train_lr, "Overrides the config learning rate")->check(CLI::PositiveNumber);

    // finetune
    std::string ft_model, ft_data, ft_out;
    nn::TrainOptions ft_opts = nn::finetune_defaults();
    auto* finetune_cmd = app.add_subcommand("finetune", "Continue training a model on another dataset");
    finetune_cmd->add_option("--model", ft_model, "Starting model")->required();
    finetune_cmd->add_option("--data", ft_data, "Built dataset directory")->required();
    finetune_cmd->add_option("--out", ft_out, "Output model file")->required();
    finetune_cmd->add_option("--lr", ft_opts.lr, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    finetune_cmd->add_option("--epochs", ft_opts.epochs, "Epochs")->capture_default_str()->check(CLI::PositiveNumber);
    finetune_cmd->add_option("--batch", ft_opts.batch, "Batch size")->capture_default_str()->check(CLI::PositiveNumber);
    finetune_cmd->add_option("--seed", ft_opts.seed, "Shuffle and dropout seed");

    // generate
    std::string gen_model, gen_audio, gen_tempo, gen_out;
    double gen_difficulty = 0.0;
    std::int64_t gen_beats = 0;
    auto* generate_cmd = app.add_subcommand("generate", "Generate a chart for a song");
    generate_cmd->add_option("--model", gen_model, "Model file")->required();
    generate_cmd->add_option("--audio", gen_audio, "WAV file")->required();
    generate_cmd->add_option("--tempo", gen_tempo, "Chart whose timing lines give the tempo")->required();
    generate_cmd->add_option("--difficulty", gen_difficulty, "Target difficulty")
        ->required()
        ->check(CLI::NonNegativeNumber);
    generate_cmd->add_option("--beats", gen_beats, "Chart length in beats (default: whole audio)")
        ->check(CLI::PositiveNumber);
    generate_cmd->add_option("--out", gen_out, "Output chart")->required();

    // eval
    std::string eval_pred, eval_ref;
    std::optional<double> eval_tol;
    bool eval_groups = false, eval_strict = false;
    auto* eval_cmd = app.add_subcommand("eval", "Score a predicted chart against a reference");
    eval_cmd->add_option("--pred", eval_pred, "Predicted chart")->required();
    eval_cmd->add_option("--ref", eval_ref, "Reference chart")->required();
    eval_cmd->add_option("--tolerance-ms", eval_tol, "Match within this many ms instead of exact ticks")
        ->check(CLI::NonNegativeNumber);
    eval_cmd->add_flag("--per-group", eval_groups, "Per beat-group breakdown");
    eval_cmd->add_flag("--strict", eval_strict, "Also require matching actions");

    // tokenize / detokenize
    std::string tok_chart, tok_out;
    bool tok_time_only = false;
    auto* tokenize_cmd = app.add_subcommand("tokenize", "Dump the token windows of a chart");
    tokenize_cmd->add_option("--chart", tok_chart, "Chart file")->required();
    tokenize_cmd->add_option("--out", tok_out, "Output file (default: stdout)");
    tokenize_cmd->add_flag("--time-only", tok_time_only, "Drop action tokens");

    std::string detok_in, detok_out;
    auto* detokenize_cmd = app.add_subcommand("detokenize", "Rebuild a chart from a token dump");
    detokenize_cmd->add_option("--tokens", detok_in, "Token dump (default: stdin)");
    detokenize_cmd->add_option("--out", detok_out, "Output chart (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    const auto emit = [&](const std::string& path, const std::string& contents) {
        if (path.empty() || path == "-") {
            out << contents;
        } else {
            if (const auto parent = fs::path(path).parent_path(); !parent.empty()) {
                fs::create_directories(parent);
            }
            text::write_file(path, contents);
        }
    };

    try {
        if (*import_cmd) {
            const auto input = text::read_file(import_in);
            const auto stem = fs::path(import_in).stem().string();
            fs::create_directories(import_out);
            std::vector<std::pair<std::string, Chart>> charts;
            if (import_format == "osu") {
                auto r = load(import_in, [&] { return import_osu(input, import_difficulty); });
                for (const auto& w : r.warnings) err << "warning: " << import_in << ": " << w << "\n";
                charts.emplace_back(stem + ".cchart", std::move(r.chart));
            } else if (import_format == "sm") {
                auto r = load(import_in, [&] { return import_sm(input); });
                for (const auto& w : r.warnings) err << "warning: " << import_in << ": " << w << "\n";
                for (std::size_t i = 0; i < r.charts.size(); ++i) {
                    charts.emplace_back(safe_name(stem + "-" + std::to_string(i) + "-" + r.descriptions[i]) + ".cchart",
                                        std::move(r.charts[i]));
                }
            } else {
                charts.emplace_back(stem + ".cchart", load(import_in, [&] { return parse_cchart(input); }));
            }
            for (const auto& [name, chart] : charts) {
                const auto path = (fs::path(import_out) / name).string();
                save_cchart(path, chart);
                out << path << "\t" << chart.events.size() << " events\t" << chart.n_beats << " beats\n";
            }
            if (charts.empty()) {
                err << "error: " << import_in << ": no importable charts\n";
                return kExitInvalid;
            }
        } else if (*validate_cmd) {
            const Chart chart = load_cchart(validate_chart_path);
            out << validate_chart_path << ": ok (" << chart.events.size() << " events, " << chart.n_beats
                << " beats)\n";
            if (auto r = data::check_candidate({validate_chart_path, kColumns, chart})) {
                out << "note: the corpus filter would reject this chart (" << data::to_string(r->reason)
                    << ": " << r->detail << ")\n";
            }
        } else if (*features_cmd) {
            const Chart tempo_chart = load_cchart(feat_tempo);
            const auto audio = load(feat_audio, [&] { return load_audio(feat_audio); });
            const auto n_beats = feat_beats > 0 ? feat_beats : beats_in_audio(audio, tempo_chart.tempo);
            const auto spec = extract(audio, tempo_chart.tempo, n_beats);
            emit(feat_out, encode_features(spec));
            out << feat_out << "\t" << spec.frames.rows() << "x" << spec.frames.cols() << "\n";
        } else if (*build_cmd) {
            build_opts.filter = !build_no_filter;
            const auto manifest = data::load_manifest(build_manifest);
            const auto report = data::build_shards(manifest, build_out, build_opts);
            for (const auto& r : report.rejections) {
                err << "rejected: " << r.id << ": " << data::to_string(r.reason) << ": " << r.detail << "\n";
            }
            for (const auto& e : report.errors) {
                err << "error: " << e << "\n";
            }
            out << "songs\t" << report.songs << "\n";
            out << "charts\t" << report.charts << "\n";
            out << "rejected\t" << report.rejections.size() << "\n";
            out << "errors\t" << report.errors.size() << "\n";
            for (const auto s : data::kAllSplits) {
                out << data::to_string(s) << ".samples\t" << report.records.at(s) << "\n";
            }
        } else if (*stats_cmd) {
            const auto manifest = data::load_manifest(stats_manifest);
            out << data::stats_report(manifest, stats_data.empty() ? std::nullopt
                                                                   : std::optional<std::string>(stats_data));
        } else if (*train_cmd) {
            auto cfg = load(train_config, [&] { return nn::parse_train_config(text::read_file(train_config)); });
            if (train_seed) cfg.options.seed = *train_seed;
            if (train_epochs) cfg.options.epochs = *train_epochs;
            if (train_lr) cfg.options.lr = *train_lr;
            const auto train_set = data::load_training_set(train_data, data::Split::train);
            if (train_set.size() == 0) {
                throw ValidationError(data::shard_path(train_data, data::Split::train) + ": no training samples");
            }
            const auto valid_set = optional_split(train_data, data::Split::valid);
            cfg.options.on_epoch = [&](const nn::EpochLog& e) { print_epoch(out, e); };
            const auto result = nn::train(train_set, valid_set ? &*valid_set : nullptr, cfg.model, cfg.options);
            nn::save_model(train_out, result.params);
            if (!cfg.normalization_path.empty()) {
                nn::write_feature_norm(cfg.normalization_path, result.params.norm);
            }
            out << "saved\t" << train_out << "\n";
        } else if (*finetune_cmd) {
            const auto start = load(ft_model, [&] { return nn::load_model(ft_model); });
            const auto train_set = data::load_training_set(ft_data, data::Split::train);
            if (train_set.size() == 0) {
                throw ValidationError(data::shard_path(ft_data, data::Split::train) + ": no training samples");
            }
            const auto valid_set = optional_split(ft_data, data::Split::valid);
            ft_opts.on_epoch = [&](const nn::EpochLog& e) { print_epoch(out, e); };
            const auto result = nn::finetune(start, train_set, valid_set ? &*valid_set : nullptr, ft_opts);
            nn::save_model(ft_out, result.params);
            out << "saved\t" << ft_out << "\n";
        } else if (*generate_cmd) {
            const auto params = load(gen_model, [&] { return nn::load_model(gen_model); });
            const Chart tempo_chart = load_cchart(gen_tempo);
            const auto audio = load(gen_audio, [&] { return load_audio(gen_audio); });
            const auto n_beats = gen_beats > 0 ? gen_beats : beats_in_audio(audio, tempo_chart.tempo);
            const auto spec = extract(audio, tempo_chart.tempo, n_beats);
            const Chart chart = nn::generate_chart(params, spec, tempo_chart.tempo, gen_difficulty);
            emit(gen_out, serialize_cchart(chart));
            out << gen_out << "\t" << chart.events.size() << " events\t" << chart.n_beats << " beats\n";
        } else if (*eval_cmd) {
            const Chart pred = load_cchart(eval_pred);
            const Chart ref = load_cchart(eval_ref);
            eval::EvalOptions opts;
            opts.mode = eval_tol ? eval::Mode::tolerance : eval::Mode::exact;
            opts.tolerance_ms = eval_tol.value_or(30.0);
            opts.per_group = eval_groups;
            opts.strict_actions = eval_strict;
            out << eval::evaluate_chart(pred, ref, opts).render();
        } else if (*tokenize_cmd) {
            const Chart chart = load_cchart(tok_chart);
            emit(tok_out, tokens_dump(chart, tok_time_only));
        } else if (*detokenize_cmd) {
            std::string dump;
            if (detok_in.empty() || detok_in == "-") {
                std::ostringstream buf;
                buf << std::cin.rdbuf();
                dump = buf.str();
                detok_in = "<stdin>";
            } else {
                dump = text::read_file(detok_in);
            }
            const Chart chart = load(detok_in, [&] { return chart_from_dump(dump); });
            emit(detok_out, serialize_cchart(chart));
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitOk;
}

int run(int argc, const char* const* argv) {
    return run(argc, argv, std::cout, std::cerr);
}

} // namespace goct::cli

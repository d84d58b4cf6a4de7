#include "geostyle/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "geostyle/classifiers.hpp"
#include "geostyle/dataset.hpp"
#include "geostyle/errors.hpp"
#include "geostyle/eval.hpp"
#include "geostyle/finetune.hpp"
#include "geostyle/inspection.hpp"
#include "geostyle/network.hpp"
#include "geostyle/tensor_io.hpp"

namespace geostyle {

namespace {

namespace fs = std::filesystem;

constexpr const char* kPredictionsMagic = "#GSPRED";

// ---------------------------------------------------------------------------
// Shared option bundles
// ---------------------------------------------------------------------------

struct DataArgs {
    std::string manifest;
    std::string split;
    std::string subset = "test";
};

struct NetArgs {
    std::string arch = "desk";
    int input_size = 64;
};

struct PrepArgs {
    std::string pooling = "image";
    bool strict_bbox = true;
    bool center = false;
};

void fail_missing(const std::string& what, const std::string& path, const std::string& producer) {
    throw UsageError("missing " + what + " '" + path + "'; " + producer + " produces it");
}

void require_file(const std::string& path, const std::string& what, const std::string& producer) {
    if (path.empty() || !fs::exists(path)) fail_missing(what, path, producer);
}

Manifest load_manifest_checked(const std::string& path) {
    require_file(path, "dataset manifest", "`geostyle synth` (or your own dataset tooling)");
    return load_manifest(path);
}

std::vector<int> subset_indices(const Manifest& manifest, const DataArgs& data) {
    if (data.subset == "all") {
        std::vector<int> all(manifest.records.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        return all;
    }
    const Split which = parse_split(data.subset);  // rejects anything else
    require_file(data.split, "split file", "`geostyle split`");
    return split_indices(manifest, load_split(data.split), which);
}

PreprocessOptions make_prep(const PrepArgs& prep_args, const NetArgs& net) {
    PreprocessOptions prep;
    prep.pooling = parse_pooling(prep_args.pooling);
    prep.target_h = prep.target_w = net.input_size;
    prep.strict_bbox = prep_args.strict_bbox;
    return prep;
}

// --center subtracts the training subset's channel mean everywhere, so every
// stage needs the split file to recover that subset deterministically.
void apply_center(PreprocessOptions& prep, const PrepArgs& prep_args, const Manifest& manifest,
                  const std::string& split_path) {
    if (!prep_args.center) return;
    if (split_path.empty()) {
        throw UsageError("--center derives the channel mean from the training subset; "
                         "pass --split as well");
    }
    require_file(split_path, "split file", "`geostyle split`");
    const SplitAssignment assignment = load_split(split_path);
    prep.mean = compute_channel_mean(manifest,
                                     split_indices(manifest, assignment, Split::train));
}

// The network structure a weights file was saved under: the plain
// architecture for base.gswt, the head-replaced variant for finetuned.gswt.
NetworkSpec spec_for(const NetArgs& net, int num_classes, bool finetuned_head) {
    NetworkSpec base = make_network_spec(net.arch, net.input_size, num_classes);
    if (!finetuned_head) return base;
    return head_replaced_spec(base, num_classes);
}

Weights load_weights_checked(const std::string& path, const NetworkSpec& spec) {
    require_file(path, "network weights", "`geostyle finetune` (base.gswt / finetuned.gswt)");
    return load_weights(path, spec);
}

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// Human-facing numbers (stdout); artifacts use fmt_full.
std::string fmt_short(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

void write_text_artifact(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to '" + path + "'");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create '" + dir + "': " + ec.message());
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string::size_type start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

// ---------------------------------------------------------------------------
// Predictions file (first line "#GSPRED\tv1\tmethod=...\tpooling=...")
// ---------------------------------------------------------------------------

void write_predictions(const std::string& path, const Manifest& manifest,
                       const std::vector<int>& indices, const std::vector<int>& predictions,
                       const std::string& method, Pooling pooling) {
    std::ostringstream out;
    out << kPredictionsMagic << "\tv1\tmethod=" << method << "\tpooling=" << pooling_name(pooling)
        << "\n";
    out << "id\ttrue\tpred\ttrue_name\tpred_name\n";
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const ImageRecord& rec = manifest.records[static_cast<std::size_t>(indices[i])];
        const int pred = predictions[i];
        out << rec.id << '\t' << rec.label << '\t' << pred << '\t'
            << manifest.label_names[static_cast<std::size_t>(rec.label)] << '\t'
            << manifest.label_names[static_cast<std::size_t>(pred)] << '\n';
    }
    write_text_artifact(path, out.str());
}

struct PredictionFile {
    std::string method = "unknown";
    std::string pooling = "image_based";
    std::vector<int> truth;
    std::vector<int> predicted;
};

PredictionFile read_predictions(const std::string& path, int num_classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open predictions file '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || split_tabs(line).empty() ||
        split_tabs(line)[0] != kPredictionsMagic) {
        throw FormatError("'" + path + "' is not a predictions file (missing " +
                          kPredictionsMagic + " header)");
    }
    PredictionFile out;
    const std::vector<std::string> head = split_tabs(line);
    if (head.size() < 2 || head[1] != "v1") {
        throw FormatError("unsupported predictions version in '" + path + "'");
    }
    for (std::size_t i = 2; i < head.size(); ++i) {
        const auto eq = head[i].find('=');
        if (eq == std::string::npos) continue;
        const std::string key = head[i].substr(0, eq), value = head[i].substr(eq + 1);
        if (key == "method") out.method = value;
        if (key == "pooling") out.pooling = value;
    }
    if (!std::getline(in, line)) {
        throw FormatError("predictions file '" + path + "' has no column header");
    }
    int row = 2;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_tabs(line);
        if (cells.size() < 3) {
            throw FormatError(path + ":" + std::to_string(row) + ": expected id/true/pred columns");
        }
        int truth = 0, pred = 0;
        try {
            truth = std::stoi(cells[1]);
            pred = std::stoi(cells[2]);
        } catch (const std::exception&) {
            throw FormatError(path + ":" + std::to_string(row) + ": non-numeric class index");
        }
        if (truth < 0 || truth >= num_classes || pred < 0 || pred >= num_classes) {
            throw FormatError(path + ":" + std::to_string(row) + ": class index outside [0, " +
                              std::to_string(num_classes) + ")");
        }
        out.truth.push_back(truth);
        out.predicted.push_back(pred);
    }
    if (out.truth.empty()) throw FormatError("predictions file '" + path + "' has no rows");
    return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string out;
    int classes = 12;
    int per_class = 20;
    int size = 64;
    std::string signal = "foreground";
    double noise = 0.04;
    std::uint64_t seed = 0;
};

void cmd_synth(const SynthArgs& args) {
    SyntheticOptions opts;
    opts.classes = args.classes;
    opts.per_class = args.per_class;
    opts.size = args.size;
    opts.signal = parse_synthetic_signal(args.signal);
    opts.noise = args.noise;
    ensure_dir(args.out);
    const Manifest manifest = make_synthetic_dataset(args.out, opts, args.seed);
    std::printf("wrote %zu records over %d classes -> %s/manifest.tsv\n",
                manifest.records.size(), manifest.num_classes(), args.out.c_str());
}

struct SplitArgs {
    std::string manifest;
    std::string out;
    std::uint64_t seed = 0;
};

void cmd_split(const SplitArgs& args) {
    const Manifest manifest = load_manifest_checked(args.manifest);
    const SplitAssignment assignment = split_dataset(manifest, args.seed);
    save_split(args.out, assignment);
    const auto count = [&](Split s) {
        return split_indices(manifest, assignment, s).size();
    };
    std::printf("split %zu records: %zu train / %zu val / %zu test -> %s\n",
                manifest.records.size(), count(Split::train), count(Split::val),
                count(Split::test), args.out.c_str());
}

struct FinetuneArgs {
    DataArgs data;
    NetArgs net;
    PrepArgs prep;
    std::string out;
    std::uint64_t seed = 0;
    double sigma = 0.1;
    int epochs = 30;
    int batch = 16;
    double lr = 0.0;  // > 0 selects a fixed rate instead of the decay pair
    double lr_hi = 0.02;
    double lr_lo = 0.002;
};

void cmd_finetune(const FinetuneArgs& args) {
    const Manifest manifest = load_manifest_checked(args.data.manifest);
    require_file(args.data.split, "split file", "`geostyle split`");
    const SplitAssignment assignment = load_split(args.data.split);
    const std::vector<int> train_idx = split_indices(manifest, assignment, Split::train);
    const std::vector<int> val_idx = split_indices(manifest, assignment, Split::val);
    const int k = manifest.num_classes();

    const NetworkSpec base_spec = make_network_spec(args.net.arch, args.net.input_size, k);
    const Weights base_weights = build_network(base_spec, InitSpec::gaussian(args.sigma),
                                               args.seed);
    ensure_dir(args.out);
    save_weights(args.out + "/base.gswt", base_spec, base_weights);

    auto [ft_spec, start] = replace_head(base_spec, base_weights, k, args.seed);

    FinetuneConfig config;
    config.lr = args.lr > 0 ? LrSchedule::fixed(args.lr) : LrSchedule::decay(args.lr_hi,
                                                                             args.lr_lo);
    config.epochs = args.epochs;
    config.batch_size = args.batch;
    config.seed = args.seed;

    PreprocessOptions prep = make_prep(args.prep, args.net);
    apply_center(prep, args.prep, manifest, args.data.split);
    const FinetuneResult result = finetune(ft_spec, start, manifest, train_idx, val_idx, prep,
                                           config);
    save_weights(args.out + "/finetuned.gswt", ft_spec, result.weights);

    std::ostringstream history;
    history << "epoch,lr,train_loss,val_mca\n";
    for (const EpochStats& e : result.history) {
        history << e.epoch << ',' << fmt_full(e.lr) << ',' << fmt_full(e.train_loss) << ','
                << fmt_full(e.val_mca) << '\n';
    }
    write_text_artifact(args.out + "/history.csv", history.str());

    std::printf("fine-tuned %d epochs; best epoch %d (val mCA %s) -> %s/{base,finetuned}.gswt\n",
                args.epochs, result.best_epoch, fmt4(result.best_val_mca).c_str(),
                args.out.c_str());
}

struct ExtractArgs {
    DataArgs data{.manifest = "", .split = "", .subset = "train"};
    NetArgs net;
    PrepArgs prep;
    std::string weights;
    std::string stage = "finetuned";  // which spec the weights file matches
    std::string tap = "fc1";
    std::string out;
};

void cmd_extract(const ExtractArgs& args) {
    const Manifest manifest = load_manifest_checked(args.data.manifest);
    const std::vector<int> indices = subset_indices(manifest, args.data);
    if (args.stage != "base" && args.stage != "finetuned") {
        throw ParseError("unknown stage '" + args.stage + "' (want base or finetuned)");
    }
    const NetworkSpec spec = spec_for(args.net, manifest.num_classes(),
                                      args.stage == "finetuned");
    const Weights weights = load_weights_checked(args.weights, spec);
    PreprocessOptions prep = make_prep(args.prep, args.net);
    apply_center(prep, args.prep, manifest, args.data.split);
    const FeatureSet features = extract_feature_matrix(spec, weights, manifest, indices, args.tap,
                                                       prep);
    save_features(args.out, features);
    std::printf("wrote %d x %d features (tap %s, %s pooling, %s subset) -> %s\n",
                features.count(), features.dim(), features.tap.c_str(),
                pooling_name(features.pooling), args.data.subset.c_str(), args.out.c_str());
}

struct TrainSvmArgs {
    std::string features;
    std::string out;
    std::vector<double> c_grid{0.01, 0.1, 1.0};
    int folds = 3;
    int epochs = 150;
    std::uint64_t seed = 0;
};

void cmd_train_svm(const TrainSvmArgs& args) {
    require_file(args.features, "feature file", "`geostyle extract`");
    const FeatureSet features = load_features(args.features);
    SvmConfig config;
    config.c_grid = args.c_grid;
    config.folds = args.folds;
    config.epochs = args.epochs;
    config.seed = args.seed;
    const LinearSvmModel model = train_svm(features, config);
    save_svm(args.out, model);
    std::string grid;
    for (std::size_t i = 0; i < model.grid_mca.size(); ++i) {
        if (i) grid += ", ";
        grid += "C=" + fmt_short(config.c_grid[i]) + ":" + fmt4(model.grid_mca[i]);
    }
    std::printf("trained %d-class svm on %d features; chose C=%s (cv mCA %s) -> %s\n",
                features.num_classes, features.count(), fmt_short(model.chosen_c).c_str(),
                grid.c_str(), args.out.c_str());
}

struct PredictArgs {
    DataArgs data;
    NetArgs net;
    PrepArgs prep;
    std::string method;
    std::string weights;
    std::string svm;
    std::string index_features;
    int k = 5;
    std::string vote = "inverse_distance";
    std::string out;
};

void cmd_predict(const PredictArgs& args) {
    const Manifest manifest = load_manifest_checked(args.data.manifest);
    const std::vector<int> indices = subset_indices(manifest, args.data);
    const int k = manifest.num_classes();
    PreprocessOptions prep = make_prep(args.prep, args.net);
    apply_center(prep, args.prep, manifest, args.data.split);

    std::vector<int> predictions;
    predictions.reserve(indices.size());
    if (args.method == "pretrained_svm" || args.method == "finetuned_svm") {
        const NetworkSpec spec = spec_for(args.net, k, args.method == "finetuned_svm");
        const Weights weights = load_weights_checked(args.weights, spec);
        require_file(args.svm, "svm model", "`geostyle train-svm`");
        const LinearSvmModel model = load_svm(args.svm);
        for (const int idx : indices) {
            predictions.push_back(
                predict_with_svm(spec, weights, model,
                                 manifest.records[static_cast<std::size_t>(idx)], prep)
                    .label);
        }
    } else if (args.method == "finetuned") {
        const NetworkSpec spec = spec_for(args.net, k, true);
        const Weights weights = load_weights_checked(args.weights, spec);
        for (const int idx : indices) {
            predictions.push_back(
                predict_class(spec, weights, manifest.records[static_cast<std::size_t>(idx)],
                              prep));
        }
    } else if (args.method == "deep_im2gps") {
        const NetworkSpec spec = spec_for(args.net, k, true);
        const Weights weights = load_weights_checked(args.weights, spec);
        require_file(args.index_features, "reference feature file", "`geostyle extract`");
        const KnnIndex index = index_from_features(load_features(args.index_features));
        const VoteWeighting weighting = parse_vote_weighting(args.vote);
        for (const int idx : indices) {
            predictions.push_back(
                retrieval_predict(index, spec, weights,
                                  manifest.records[static_cast<std::size_t>(idx)], args.k, prep,
                                  weighting)
                    .label);
        }
    } else {
        throw ParseError("unknown method '" + args.method +
                         "' (want pretrained_svm, finetuned, finetuned_svm, or deep_im2gps)");
    }

    write_predictions(args.out, manifest, indices, predictions, args.method, prep.pooling);
    std::printf("wrote %zu predictions (%s, %s pooling) -> %s\n", predictions.size(),
                args.method.c_str(), pooling_name(prep.pooling), args.out.c_str());
}

struct InspectArgs {
    DataArgs data;
    NetArgs net;
    PrepArgs prep;
    std::string weights;
    std::string out;
    int bins = 50;
    int overlays = 4;
    double fg_threshold = 0.8;
    double bg_threshold = 0.2;
};

void cmd_inspect(const InspectArgs& args) {
    const Manifest manifest = load_manifest_checked(args.data.manifest);
    const std::vector<int> indices = subset_indices(manifest, args.data);
    const NetworkSpec spec = spec_for(args.net, manifest.num_classes(), true);
    const Weights weights = load_weights_checked(args.weights, spec);
    PreprocessOptions prep = make_prep(args.prep, args.net);
    apply_center(prep, args.prep, manifest, args.data.split);

    const ProportionCollection collected = collect_proportions(spec, weights, manifest, indices,
                                                               prep);
    const std::vector<FilterDensity> densities =
        filter_density(collected.samples, collected.num_filters, args.bins);
    const std::vector<int> order = sort_filters(densities);

    // One overlay per top-ranked filter, for the first record that produced a
    // sample on it (subset order).
    std::map<std::string, int> record_index;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        record_index.emplace(manifest.records[i].id, static_cast<int>(i));
    }
    PreprocessOptions capture_prep = prep;
    capture_prep.pooling = Pooling::image_based;
    std::vector<OverlayImage> overlays;
    for (const int f : order) {
        if (static_cast<int>(overlays.size()) >= args.overlays) break;
        const FilterDensity& d = densities[static_cast<std::size_t>(f)];
        if (d.count == 0) break;  // ranking keeps sampled filters in front
        for (const ProportionSample& s : collected.samples) {
            if (s.filter != f) continue;
            const ImageRecord& rec =
                manifest.records[static_cast<std::size_t>(record_index.at(s.record_id))];
            const ActivationStack stack = capture_activations(spec, weights, rec, capture_prep);
            overlays.push_back({rec.id, f, heatmap(stack, f)});
            break;
        }
    }

    export_inspection_report(densities, order, overlays, args.out,
                             {args.fg_threshold, args.bg_threshold});
    std::printf("inspected %zu records (%d skipped without a box): %zu samples over %d filters\n",
                indices.size(), collected.skipped_no_bbox, collected.samples.size(),
                collected.num_filters);
    if (!collected.samples.empty()) {
        const QuartileSeparation sep = quartile_separation(densities, order);
        std::printf("quartile means: top %s, bottom %s (gap %s); report -> %s\n",
                    fmt4(sep.top).c_str(), fmt4(sep.bottom).c_str(), fmt4(sep.gap()).c_str(),
                    args.out.c_str());
    }
}

struct EvaluateArgs {
    std::string manifest;
    std::vector<std::string> predictions;
    std::string dataset = "dataset";
    std::string out;
};

void cmd_evaluate(const EvaluateArgs& args) {
    const Manifest manifest = load_manifest_checked(args.manifest);
    std::vector<EvalReport> reports;
    for (const std::string& path : args.predictions) {
        require_file(path, "predictions file", "`geostyle predict`");
        const PredictionFile file = read_predictions(path, manifest.num_classes());
        reports.push_back(make_report(file.method, file.pooling, args.dataset, file.predicted,
                                      file.truth, manifest.label_names));
    }
    ensure_dir(args.out);
    for (const EvalReport& report : reports) {
        write_confusion_csv(args.out + "/confusion_" + report.method + "_" + report.pooling +
                                ".csv",
                            report);
    }
    write_summary_csv(args.out + "/summary.csv", reports);
    if (reports.size() >= 2) {
        write_comparison_csv(args.out + "/comparison.csv", compare(reports));
    }
    for (const EvalReport& report : reports) {
        std::string flagged;
        for (const int cls : report.accuracy.empty_classes) {
            flagged += flagged.empty() ? " (no examples: " : ", ";
            flagged += report.label_names[static_cast<std::size_t>(cls)];
        }
        if (!flagged.empty()) flagged += ")";
        std::printf("%s / %s: mCA %s over %lld predictions%s\n", report.method.c_str(),
                    report.pooling.c_str(), fmt4(report.accuracy.mca).c_str(),
                    static_cast<long long>(report.cm.total()), flagged.c_str());
    }
    std::printf("reports -> %s\n", args.out.c_str());
}

// ---------------------------------------------------------------------------
// Wiring
// ---------------------------------------------------------------------------

// Config files are line-oriented key=value; plain keys bind to the options of
// the invoked subcommand. Dotted keys (split.seed=9) and [section] headers
// still address any subcommand explicitly. Values given as flags win over the
// file. The parser only applies config entries routed to a subcommand section,
// so plain keys are rewritten to carry the invoked subcommand as their parent.
class SubcommandConfig : public CLI::ConfigBase {
  public:
    explicit SubcommandConfig(std::shared_ptr<std::string> section)
        : section_(std::move(section)) {}

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        auto items = CLI::ConfigBase::from_config(input);
        if (section_ && !section_->empty()) {
            for (auto& item : items) {
                if (item.parents.empty()) item.parents.push_back(*section_);
            }
        }
        return items;
    }

  private:
    std::shared_ptr<std::string> section_;
};

void add_common(CLI::App* cmd) {
    // Always-on in this single-threaded build; accepted so run scripts can be
    // explicit about it.
    cmd->add_flag("--deterministic", "byte-stable artifacts (always on)");
    // Lets `geostyle <cmd> --config file` reach the app-level --config option.
    cmd->fallthrough();
}

void add_data(CLI::App* cmd, DataArgs& data, bool with_subset = true) {
    cmd->add_option("--manifest", data.manifest, "dataset manifest (tsv)");
    cmd->add_option("--split", data.split, "split assignment file");
    if (with_subset) {
        cmd->add_option("--subset", data.subset,
                        "records to use: train, val, test, or all")
            ->capture_default_str();
    }
}

void add_net(CLI::App* cmd, NetArgs& net) {
    cmd->add_option("--arch", net.arch, "network architecture (desk or vggf)")
        ->capture_default_str();
    cmd->add_option("--input-size", net.input_size, "square network input size")
        ->capture_default_str();
}

void add_prep(CLI::App* cmd, PrepArgs& prep) {
    cmd->add_option("--pooling", prep.pooling, "feature pooling: image or human")
        ->capture_default_str();
    cmd->add_flag("--strict-bbox,!--no-strict-bbox", prep.strict_bbox,
                  "fail on human pooling without a box (default on)");
    cmd->add_flag("--center", prep.center,
                  "subtract the training subset's channel mean from every input");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"city-style geolocation experiments: synthetic data, fine-tuning, classifier "
                 "suite, activation inspection"};
    app.require_subcommand(1);

    // The invoked subcommand is the first non-flag token; the only value-taking
    // option that may precede it is --config itself.
    auto config_section = std::make_shared<std::string>();
    for (int i = 1; i < argc; ++i) {
        const std::string tok = argv[i];
        if (tok == "--config") {
            ++i;
            continue;
        }
        if (!tok.empty() && tok[0] == '-') continue;
        *config_section = tok;
        break;
    }
    app.set_config("--config", "", "line-oriented key=value file; flags take precedence");
    app.config_formatter(std::make_shared<SubcommandConfig>(config_section));

    auto synth = std::make_shared<SynthArgs>();
    {
        CLI::App* cmd = app.add_subcommand("synth", "generate a synthetic labeled dataset");
        add_common(cmd);
        cmd->add_option("--out", synth->out, "output directory")->required();
        cmd->add_option("--classes", synth->classes, "number of classes")->capture_default_str();
        cmd->add_option("--per-class", synth->per_class, "images per class")
            ->capture_default_str();
        cmd->add_option("--size", synth->size, "square image side")->capture_default_str();
        cmd->add_option("--signal", synth->signal,
                        "where the class signal lives: foreground, background, or both")
            ->capture_default_str();
        cmd->add_option("--noise", synth->noise, "per-pixel noise amplitude")
            ->capture_default_str();
        cmd->add_option("--seed", synth->seed, "generation seed")->capture_default_str();
        cmd->callback([synth] { cmd_synth(*synth); });
    }

    auto split = std::make_shared<SplitArgs>();
    {
        CLI::App* cmd = app.add_subcommand("split", "assign records to train/val/test");
        add_common(cmd);
        cmd->add_option("--manifest", split->manifest, "dataset manifest (tsv)");
        cmd->add_option("--out", split->out, "split file to write")->required();
        cmd->add_option("--seed", split->seed, "shuffle seed")->capture_default_str();
        cmd->callback([split] { cmd_split(*split); });
    }

    auto ft = std::make_shared<FinetuneArgs>();
    {
        CLI::App* cmd = app.add_subcommand(
            "finetune", "train the network on the train split (writes base + finetuned weights)");
        add_common(cmd);
        add_data(cmd, ft->data, /*with_subset=*/false);
        add_net(cmd, ft->net);
        add_prep(cmd, ft->prep);
        cmd->add_option("--out", ft->out, "output directory")->required();
        cmd->add_option("--seed", ft->seed, "seed for init, shuffling, and dropout")
            ->capture_default_str();
        cmd->add_option("--sigma", ft->sigma, "gaussian init scale for the starting network")
            ->capture_default_str();
        cmd->add_option("--epochs", ft->epochs, "training epochs")->capture_default_str();
        cmd->add_option("--batch", ft->batch, "mini-batch size")->capture_default_str();
        cmd->add_option("--lr", ft->lr, "fixed learning rate (0 uses --lr-hi/--lr-lo decay)")
            ->capture_default_str();
        cmd->add_option("--lr-hi", ft->lr_hi, "decay start rate")->capture_default_str();
        cmd->add_option("--lr-lo", ft->lr_lo, "decay end rate")->capture_default_str();
        cmd->callback([ft] { cmd_finetune(*ft); });
    }

    auto extract = std::make_shared<ExtractArgs>();
    {
        CLI::App* cmd = app.add_subcommand("extract",
                                           "write tap activations for a subset as a feature file");
        add_common(cmd);
        add_data(cmd, extract->data);
        add_net(cmd, extract->net);
        add_prep(cmd, extract->prep);
        cmd->add_option("--weights", extract->weights, "network weights (gswt)");
        cmd->add_option("--stage", extract->stage,
                        "structure the weights were saved under: base or finetuned")
            ->capture_default_str();
        cmd->add_option("--tap", extract->tap, "named activation to extract")
            ->capture_default_str();
        cmd->add_option("--out", extract->out, "feature file to write (gsft)")->required();
        cmd->callback([extract] { cmd_extract(*extract); });
    }

    auto svm = std::make_shared<TrainSvmArgs>();
    {
        CLI::App* cmd = app.add_subcommand("train-svm",
                                           "cross-validate and train the linear classifier");
        cmd->alias("train_svm");
        add_common(cmd);
        cmd->add_option("--features", svm->features, "training feature file (gsft)");
        cmd->add_option("--out", svm->out, "model file to write (gsvm)")->required();
        cmd->add_option("--c-grid", svm->c_grid, "regularization grid")
            ->delimiter(',')
            ->capture_default_str();
        cmd->add_option("--folds", svm->folds, "cross-validation folds")->capture_default_str();
        cmd->add_option("--epochs", svm->epochs, "subgradient iterations per binary problem")
            ->capture_default_str();
        cmd->add_option("--seed", svm->seed, "fold assignment seed")->capture_default_str();
        cmd->callback([svm] { cmd_train_svm(*svm); });
    }

    auto predict = std::make_shared<PredictArgs>();
    {
        CLI::App* cmd = app.add_subcommand("predict", "classify a subset with a trained method");
        add_common(cmd);
        add_data(cmd, predict->data);
        add_net(cmd, predict->net);
        add_prep(cmd, predict->prep);
        cmd->add_option("--method", predict->method,
                        "pretrained_svm, finetuned, finetuned_svm, or deep_im2gps")
            ->required();
        cmd->add_option("--weights", predict->weights,
                        "network weights: base.gswt for pretrained_svm, finetuned.gswt otherwise");
        cmd->add_option("--svm", predict->svm, "svm model (gsvm) for the *_svm methods");
        cmd->add_option("--index-features", predict->index_features,
                        "reference features (gsft) for deep_im2gps");
        cmd->add_option("--k", predict->k, "neighbors to retrieve")->capture_default_str();
        cmd->add_option("--vote", predict->vote, "neighbor weighting: inverse_distance or uniform")
            ->capture_default_str();
        cmd->add_option("--out", predict->out, "predictions file to write")->required();
        cmd->callback([predict] { cmd_predict(*predict); });
    }

    auto inspect = std::make_shared<InspectArgs>();
    {
        CLI::App* cmd = app.add_subcommand(
            "inspect", "rank filters by in-box activation proportion and export the report");
        add_common(cmd);
        add_data(cmd, inspect->data);
        add_net(cmd, inspect->net);
        add_prep(cmd, inspect->prep);
        cmd->add_option("--weights", inspect->weights, "fine-tuned network weights (gswt)");
        cmd->add_option("--bins", inspect->bins, "histogram bins")->capture_default_str();
        cmd->add_option("--overlays", inspect->overlays, "heatmap overlays to export")
            ->capture_default_str();
        cmd->add_option("--fg-threshold", inspect->fg_threshold,
                        "mean proportion above which a filter counts as foreground")
            ->capture_default_str();
        cmd->add_option("--bg-threshold", inspect->bg_threshold,
                        "mean proportion below which a filter counts as background")
            ->capture_default_str();
        cmd->add_option("--out", inspect->out, "report directory")->required();
        cmd->callback([inspect] { cmd_inspect(*inspect); });
    }

    auto evaluate = std::make_shared<EvaluateArgs>();
    {
        CLI::App* cmd = app.add_subcommand("evaluate",
                                           "score prediction files and write report CSVs");
        add_common(cmd);
        cmd->add_option("--manifest", evaluate->manifest, "dataset manifest (tsv)");
        cmd->add_option("--predictions", evaluate->predictions,
                        "prediction files to score (repeatable)")
            ->required();
        cmd->add_option("--dataset", evaluate->dataset, "dataset tag for report rows")
            ->capture_default_str();
        cmd->add_option("--out", evaluate->out, "report directory")->required();
        cmd->callback([evaluate] { cmd_evaluate(*evaluate); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const Error& e) {
        std::fprintf(stderr, "geostyle: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "geostyle: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace geostyle

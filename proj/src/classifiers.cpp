#include "geostyle/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "geostyle/errors.hpp"
#include "geostyle/eval.hpp"
#include "geostyle/rng.hpp"
#include "geostyle/tensor_io.hpp"

namespace geostyle {

FeatureSet extract_feature_matrix(const NetworkSpec& spec, const Weights& weights,
                                  const Manifest& manifest, const std::vector<int>& records,
                                  const std::string& tap, const PreprocessOptions& prep) {
    if (records.empty()) throw UsageError("cannot extract features from zero records");
    FeatureSet fs;
    fs.num_classes = manifest.num_classes();
    fs.tap = tap;
    fs.pooling = prep.pooling;
    fs.labels.reserve(records.size());

    std::vector<float> flat;
    int d = -1;
    for (const int idx : records) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= manifest.records.size()) {
            throw UsageError("record index " + std::to_string(idx) + " out of range");
        }
        const ImageRecord& rec = manifest.records[static_cast<std::size_t>(idx)];
        const Tensor input = preprocess(rec, prep);
        const std::vector<float> row = extract_features(spec, weights, input, tap);
        if (d < 0) {
            d = static_cast<int>(row.size());
            flat.reserve(records.size() * row.size());
        }
        flat.insert(flat.end(), row.begin(), row.end());
        fs.labels.push_back(rec.label);
    }
    fs.matrix = Tensor({static_cast<int>(records.size()), d}, std::move(flat));
    return fs;
}

void save_features(const std::string& path, const FeatureSet& features) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_magic(out, kFeaturesMagic);
    write_u8(out, 1);
    write_string(out, features.tap);
    write_string(out, pooling_name(features.pooling));
    write_u32(out, static_cast<std::uint32_t>(features.num_classes));
    write_u32(out, static_cast<std::uint32_t>(features.labels.size()));
    for (const int l : features.labels) write_u32(out, static_cast<std::uint32_t>(l));
    write_tensor(out, features.matrix);
    if (!out) throw FormatError("failed while writing '" + path + "'");
}

FeatureSet load_features(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open features file '" + path + "'");
    expect_magic(in, kFeaturesMagic, "features file '" + path + "'");
    if (read_u8(in, "features version") != 1) {
        throw FormatError("unsupported features version in '" + path + "'");
    }
    FeatureSet fs;
    fs.tap = read_string(in, "features tap name");
    fs.pooling = parse_pooling(read_string(in, "features pooling tag"));
    fs.num_classes = static_cast<int>(read_u32(in, "features class count"));
    const std::uint32_t n = read_u32(in, "features label count");
    fs.labels.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        fs.labels.push_back(static_cast<int>(read_u32(in, "features label")));
    }
    fs.matrix = read_tensor(in, "features matrix");
    if (fs.matrix.rank() != 2 || fs.matrix.dim(0) != static_cast<int>(n)) {
        throw FormatError("features file '" + path + "' matrix shape " + fs.matrix.shape_str() +
                          " does not match its " + std::to_string(n) + " labels");
    }
    return fs;
}

int argmax_lowest(const std::vector<double>& scores) {
    if (scores.empty()) throw UsageError("argmax of an empty score vector");
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
        if (scores[static_cast<std::size_t>(i)] > scores[static_cast<std::size_t>(best)]) {
            best = i;
        }
    }
    return best;
}

namespace {

// Evaluates the binary objective 0.5*||w||^2 + C*mean(hinge) and fills
// per-example margins t_i*(w.x_i + b).
double binary_objective(const std::vector<double>& X, const std::vector<signed char>& t, int N,
                        int d, double C, const std::vector<double>& w, double b,
                        std::vector<double>& margins) {
    double hinge = 0.0;
    for (int i = 0; i < N; ++i) {
        const double* row = X.data() + static_cast<std::size_t>(i) * d;
        double dot = b;
        for (int j = 0; j < d; ++j) dot += row[j] * w[static_cast<std::size_t>(j)];
        const double m = static_cast<double>(t[static_cast<std::size_t>(i)]) * dot;
        margins[static_cast<std::size_t>(i)] = m;
        if (m < 1.0) hinge += 1.0 - m;
    }
    double reg = 0.0;
    for (const double v : w) reg += v * v;
    return 0.5 * reg + C * hinge / static_cast<double>(N);
}

// Monotone safeguarded sub-gradient descent from zero init. Every accepted
// step does not increase the objective, so the training trajectory is
// non-increasing by construction.
void train_binary(const std::vector<double>& X, const std::vector<signed char>& t, int N, int d,
                  double C, int epochs, std::vector<double>& w, double& b,
                  std::vector<double>* objective_trace = nullptr) {
    w.assign(static_cast<std::size_t>(d), 0.0);
    b = 0.0;
    std::vector<double> margins(static_cast<std::size_t>(N));
    std::vector<double> trial_margins(static_cast<std::size_t>(N));
    std::vector<double> gw(static_cast<std::size_t>(d));
    std::vector<double> wt(static_cast<std::size_t>(d));
    double F = binary_objective(X, t, N, d, C, w, b, margins);
    double eta = 1.0;
    const double scale = C / static_cast<double>(N);
    if (objective_trace) objective_trace->push_back(F);

    for (int it = 0; it < epochs; ++it) {
        std::copy(w.begin(), w.end(), gw.begin());
        double gb = 0.0;
        for (int i = 0; i < N; ++i) {
            if (margins[static_cast<std::size_t>(i)] >= 1.0) continue;
            const double* row = X.data() + static_cast<std::size_t>(i) * d;
            const double ts = scale * static_cast<double>(t[static_cast<std::size_t>(i)]);
            for (int j = 0; j < d; ++j) gw[static_cast<std::size_t>(j)] -= ts * row[j];
            gb -= ts;
        }

        bool accepted = false;
        while (eta >= 1e-12) {
            for (int j = 0; j < d; ++j) {
                wt[static_cast<std::size_t>(j)] =
                    w[static_cast<std::size_t>(j)] - eta * gw[static_cast<std::size_t>(j)];
            }
            const double bt = b - eta * gb;
            const double Ft = binary_objective(X, t, N, d, C, wt, bt, trial_margins);
            if (Ft <= F) {
                w.swap(wt);
                b = bt;
                F = Ft;
                margins.swap(trial_margins);
                eta = std::min(eta * 1.2, 1e3);
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if (!accepted) break;  // no descent direction left at this scale
        if (objective_trace) objective_trace->push_back(F);
    }
}

// Trains all one-vs-rest problems on the selected rows.
void train_multiclass(const std::vector<double>& X, const std::vector<int>& labels,
                      const std::vector<int>& rows, int d, int k, double C, int epochs,
                      std::vector<double>& W, std::vector<double>& B,
                      std::vector<std::vector<double>>* traces = nullptr) {
    const int n = static_cast<int>(rows.size());
    std::vector<double> Xsub(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        const double* src = X.data() + static_cast<std::size_t>(rows[static_cast<std::size_t>(i)]) * d;
        std::copy(src, src + d, Xsub.begin() + static_cast<std::size_t>(i) * d);
    }
    W.assign(static_cast<std::size_t>(k) * d, 0.0);
    B.assign(static_cast<std::size_t>(k), 0.0);
    std::vector<signed char> t(static_cast<std::size_t>(n));
    std::vector<double> w;
    for (int cls = 0; cls < k; ++cls) {
        for (int i = 0; i < n; ++i) {
            t[static_cast<std::size_t>(i)] =
                labels[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])] == cls ? 1
                                                                                           : -1;
        }
        double b = 0.0;
        std::vector<double>* trace = nullptr;
        if (traces) trace = &traces->emplace_back();
        train_binary(Xsub, t, n, d, C, epochs, w, b, trace);
        std::copy(w.begin(), w.end(), W.begin() + static_cast<std::size_t>(cls) * d);
        B[static_cast<std::size_t>(cls)] = b;
    }
}

int predict_row(const std::vector<double>& X, int row, int d, int k,
                const std::vector<double>& W, const std::vector<double>& B) {
    const double* x = X.data() + static_cast<std::size_t>(row) * d;
    std::vector<double> scores(static_cast<std::size_t>(k));
    for (int cls = 0; cls < k; ++cls) {
        const double* w = W.data() + static_cast<std::size_t>(cls) * d;
        double dot = B[static_cast<std::size_t>(cls)];
        for (int j = 0; j < d; ++j) dot += w[j] * x[j];
        scores[static_cast<std::size_t>(cls)] = dot;
    }
    return argmax_lowest(scores);
}

}  // namespace

LinearSvmModel train_svm(const FeatureSet& features, const SvmConfig& config) {
    const int N = features.count(), d = features.dim(), k = features.num_classes;
    if (N < 1 || static_cast<std::size_t>(N) != features.labels.size()) {
        throw UsageError("feature set rows and labels disagree");
    }
    if (k < 2) throw UsageError("SVM training needs at least 2 classes");
    if (config.c_grid.empty()) throw UsageError("SVM C grid is empty");
    for (const double c : config.c_grid) {
        if (!(c > 0.0)) throw UsageError("SVM C grid entries must be positive");
    }
    if (config.folds < 2) throw UsageError("cross-validation needs at least 2 folds");
    if (config.epochs < 1) throw UsageError("SVM training needs at least 1 epoch");

    // Per-class example lists; every class must fill every fold.
    std::vector<std::vector<int>> per_class(static_cast<std::size_t>(k));
    for (int i = 0; i < N; ++i) {
        const int l = features.labels[static_cast<std::size_t>(i)];
        if (l < 0 || l >= k) {
            throw UsageError("label " + std::to_string(l) + " outside [0, " + std::to_string(k) +
                             ")");
        }
        per_class[static_cast<std::size_t>(l)].push_back(i);
    }
    for (int cls = 0; cls < k; ++cls) {
        if (static_cast<int>(per_class[static_cast<std::size_t>(cls)].size()) < config.folds) {
            throw UsageError("class " + std::to_string(cls) + " has " +
                             std::to_string(per_class[static_cast<std::size_t>(cls)].size()) +
                             " examples, fewer than the " + std::to_string(config.folds) +
                             " folds");
        }
    }

    // Stratified fold assignment: shuffle within each class, then deal
    // round-robin so every fold sees every class.
    std::vector<int> fold_of(static_cast<std::size_t>(N));
    for (int cls = 0; cls < k; ++cls) {
        auto idx = per_class[static_cast<std::size_t>(cls)];
        Rng rng(mix_seed(config.seed, 0xCF01D000u + static_cast<std::uint64_t>(cls)));
        rng.shuffle(idx);
        for (std::size_t j = 0; j < idx.size(); ++j) {
            fold_of[static_cast<std::size_t>(idx[j])] =
                static_cast<int>(j % static_cast<std::size_t>(config.folds));
        }
    }

    // Features once in double.
    std::vector<double> X(static_cast<std::size_t>(N) * d);
    for (std::int64_t i = 0; i < features.matrix.numel(); ++i) {
        X[static_cast<std::size_t>(i)] = static_cast<double>(features.matrix[i]);
    }

    std::vector<double> grid = config.c_grid;
    std::sort(grid.begin(), grid.end());

    std::vector<double> grid_mca;
    double best_mca = -1.0;
    double best_c = grid.front();
    std::vector<double> W, B;
    for (const double C : grid) {
        double mca_sum = 0.0;
        for (int f = 0; f < config.folds; ++f) {
            std::vector<int> train_rows, test_rows;
            for (int i = 0; i < N; ++i) {
                (fold_of[static_cast<std::size_t>(i)] == f ? test_rows : train_rows).push_back(i);
            }
            train_multiclass(X, features.labels, train_rows, d, k, C, config.epochs, W, B);
            std::vector<int> preds, truth;
            preds.reserve(test_rows.size());
            truth.reserve(test_rows.size());
            for (const int row : test_rows) {
                preds.push_back(predict_row(X, row, d, k, W, B));
                truth.push_back(features.labels[static_cast<std::size_t>(row)]);
            }
            mca_sum += mean_class_accuracy(confusion(preds, truth, k)).mca;
        }
        const double mca = mca_sum / static_cast<double>(config.folds);
        grid_mca.push_back(mca);
        if (mca > best_mca) {  // strict: ties keep the smaller C
            best_mca = mca;
            best_c = C;
        }
    }

    // Retrain on everything with the chosen C.
    std::vector<int> all_rows(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) all_rows[static_cast<std::size_t>(i)] = i;
    std::vector<std::vector<double>> traces;
    train_multiclass(X, features.labels, all_rows, d, k, best_c, config.epochs, W, B, &traces);

    LinearSvmModel model;
    model.weight = Tensor({k, d});
    model.bias = Tensor({k});
    for (std::int64_t i = 0; i < model.weight.numel(); ++i) {
        model.weight[i] = static_cast<float>(W[static_cast<std::size_t>(i)]);
    }
    for (int cls = 0; cls < k; ++cls) {
        model.bias[cls] = static_cast<float>(B[static_cast<std::size_t>(cls)]);
    }
    model.chosen_c = best_c;
    model.tap = features.tap;
    model.pooling = features.pooling;
    model.grid_mca = std::move(grid_mca);
    model.retrain_objectives = std::move(traces);
    return model;
}

Prediction svm_predict(const LinearSvmModel& model, const std::vector<float>& feature) {
    const int k = model.weight.dim(0), d = model.weight.dim(1);
    if (static_cast<int>(feature.size()) != d) {
        throw ShapeError("feature vector length " + std::to_string(feature.size()) +
                         " does not match the model's " + std::to_string(d) + " inputs");
    }
    Prediction p;
    p.scores.resize(static_cast<std::size_t>(k));
    for (int cls = 0; cls < k; ++cls) {
        double dot = static_cast<double>(model.bias[cls]);
        const float* w = model.weight.data() + static_cast<std::int64_t>(cls) * d;
        for (int j = 0; j < d; ++j) {
            dot += static_cast<double>(w[j]) * static_cast<double>(feature[static_cast<std::size_t>(j)]);
        }
        p.scores[static_cast<std::size_t>(cls)] = dot;
    }
    p.label = argmax_lowest(p.scores);
    return p;
}

void save_svm(const std::string& path, const LinearSvmModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_magic(out, kSvmMagic);
    write_u8(out, 1);
    write_tensor(out, model.weight);
    write_tensor(out, model.bias);
    write_f64(out, model.chosen_c);
    write_string(out, model.tap);
    write_string(out, pooling_name(model.pooling));
    if (!out) throw FormatError("failed while writing '" + path + "'");
}

LinearSvmModel load_svm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open model file '" + path + "'");
    expect_magic(in, kSvmMagic, "model file '" + path + "'");
    if (read_u8(in, "model version") != 1) {
        throw FormatError("unsupported model version in '" + path + "'");
    }
    LinearSvmModel model;
    model.weight = read_tensor(in, "model weights");
    model.bias = read_tensor(in, "model bias");
    model.chosen_c = read_f64(in, "model C");
    model.tap = read_string(in, "model tap");
    model.pooling = parse_pooling(read_string(in, "model pooling"));
    if (model.weight.rank() != 2 || model.bias.rank() != 1 ||
        model.weight.dim(0) != model.bias.dim(0)) {
        throw FormatError("model file '" + path + "' tensors have inconsistent shapes");
    }
    return model;
}

Prediction predict_with_svm(const NetworkSpec& spec, const Weights& weights,
                            const LinearSvmModel& model, const ImageRecord& record,
                            const PreprocessOptions& prep) {
    if (prep.pooling != model.pooling) {
        throw UsageError(std::string("model was trained with ") + pooling_name(model.pooling) +
                         "-based pooling but the query uses " + pooling_name(prep.pooling));
    }
    const Tensor input = preprocess(record, prep);
    return svm_predict(model, extract_features(spec, weights, input, model.tap));
}

KnnIndex index_from_features(FeatureSet features, std::vector<std::string> ids,
                             bool normalize) {
    const int n = features.count(), d = features.dim();
    if (!ids.empty() && static_cast<int>(ids.size()) != n) {
        throw UsageError(std::to_string(ids.size()) + " ids for " + std::to_string(n) +
                         " feature rows");
    }
    KnnIndex index;
    index.labels = std::move(features.labels);
    index.num_classes = features.num_classes;
    index.normalized = normalize;
    index.tap = features.tap;
    index.pooling = features.pooling;
    index.ids = std::move(ids);
    if (normalize) {
        for (int i = 0; i < n; ++i) {
            float* row = features.matrix.data() + static_cast<std::int64_t>(i) * d;
            double norm_sq = 0.0;
            for (int j = 0; j < d; ++j) {
                norm_sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
            }
            const double norm = std::sqrt(norm_sq);
            if (norm <= 1e-12) {
                const std::string name = index.ids.empty() ? "row " + std::to_string(i)
                                                           : "record '" +
                                                                 index.ids[static_cast<std::size_t>(
                                                                     i)] +
                                                                 "'";
                throw UsageError(name + " produced a zero feature vector, which cannot be "
                                        "unit-normalized");
            }
            for (int j = 0; j < d; ++j) {
                row[j] = static_cast<float>(static_cast<double>(row[j]) / norm);
            }
        }
    }
    index.features = std::move(features.matrix);
    return index;
}

KnnIndex build_index(const NetworkSpec& spec, const Weights& weights, const Manifest& manifest,
                     const std::vector<int>& records, const std::string& tap,
                     const PreprocessOptions& prep, bool normalize) {
    FeatureSet features = extract_feature_matrix(spec, weights, manifest, records, tap, prep);
    std::vector<std::string> ids;
    ids.reserve(records.size());
    for (const int idx : records) {
        ids.push_back(manifest.records[static_cast<std::size_t>(idx)].id);
    }
    return index_from_features(std::move(features), std::move(ids), normalize);
}

void save_index(const std::string& path, const KnnIndex& index) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    write_magic(out, kIndexMagic);
    write_u8(out, 1);
    write_tensor(out, index.features);
    write_u32(out, static_cast<std::uint32_t>(index.labels.size()));
    for (const int l : index.labels) write_u32(out, static_cast<std::uint32_t>(l));
    write_u8(out, index.normalized ? 1 : 0);
    write_u32(out, static_cast<std::uint32_t>(index.num_classes));
    write_string(out, index.tap);
    write_string(out, pooling_name(index.pooling));
    for (const auto& id : index.ids) write_string(out, id);
    if (!out) throw FormatError("failed while writing '" + path + "'");
}

KnnIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open index file '" + path + "'");
    expect_magic(in, kIndexMagic, "index file '" + path + "'");
    if (read_u8(in, "index version") != 1) {
        throw FormatError("unsupported index version in '" + path + "'");
    }
    KnnIndex index;
    index.features = read_tensor(in, "index features");
    const std::uint32_t n = read_u32(in, "index label count");
    if (index.features.rank() != 2 || index.features.dim(0) != static_cast<int>(n)) {
        throw FormatError("index file '" + path + "' features " + index.features.shape_str() +
                          " do not match its " + std::to_string(n) + " labels");
    }
    index.labels.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        index.labels.push_back(static_cast<int>(read_u32(in, "index label")));
    }
    index.normalized = read_u8(in, "index normalization flag") != 0;
    index.num_classes = static_cast<int>(read_u32(in, "index class count"));
    index.tap = read_string(in, "index tap");
    index.pooling = parse_pooling(read_string(in, "index pooling"));
    index.ids.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        index.ids.push_back(read_string(in, "index row id"));
    }
    return index;
}

std::vector<RetrievedNeighbor> knn_retrieve(const KnnIndex& index,
                                            const std::vector<float>& query, int k) {
    const int n = index.features.dim(0), d = index.features.dim(1);
    if (k < 1 || k > n) {
        throw UsageError("k = " + std::to_string(k) + " outside [1, " + std::to_string(n) +
                         "] for this index");
    }
    if (static_cast<int>(query.size()) != d) {
        throw ShapeError("query length " + std::to_string(query.size()) +
                         " does not match index dimension " + std::to_string(d));
    }
    std::vector<RetrievedNeighbor> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* row = index.features.data() + static_cast<std::int64_t>(i) * d;
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            const double diff = static_cast<double>(row[j]) -
                                static_cast<double>(query[static_cast<std::size_t>(j)]);
            acc += diff * diff;
        }
        auto& nb = all[static_cast<std::size_t>(i)];
        nb.index = i;
        nb.id = index.ids.empty() ? std::to_string(i) : index.ids[static_cast<std::size_t>(i)];
        nb.label = index.labels[static_cast<std::size_t>(i)];
        nb.distance = std::sqrt(acc);
    }
    std::sort(all.begin(), all.end(), [](const RetrievedNeighbor& a, const RetrievedNeighbor& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.index < b.index;
    });
    all.resize(static_cast<std::size_t>(k));
    return all;
}

const char* vote_weighting_name(VoteWeighting w) {
    return w == VoteWeighting::inverse_distance ? "inverse_distance" : "uniform";
}

VoteWeighting parse_vote_weighting(const std::string& s) {
    if (s == "inverse_distance" || s == "inverse") return VoteWeighting::inverse_distance;
    if (s == "uniform") return VoteWeighting::uniform;
    throw ParseError("unknown vote weighting '" + s + "' (want inverse_distance or uniform)");
}

Prediction weighted_vote(const std::vector<RetrievedNeighbor>& neighbors, int num_classes,
                         VoteWeighting weighting) {
    if (neighbors.empty()) throw UsageError("weighted_vote needs at least one neighbor");
    if (num_classes < 1) throw UsageError("weighted_vote needs a positive class count");
    Prediction p;
    p.scores.assign(static_cast<std::size_t>(num_classes), 0.0);
    for (const auto& nb : neighbors) {
        if (nb.label < 0 || nb.label >= num_classes) {
            throw UsageError("neighbor '" + nb.id + "' has label " + std::to_string(nb.label) +
                             " outside [0, " + std::to_string(num_classes) + ")");
        }
        const double w = weighting == VoteWeighting::inverse_distance
                             ? 1.0 / (nb.distance + 1e-8)
                             : 1.0;
        p.scores[static_cast<std::size_t>(nb.label)] += w;
    }
    p.label = argmax_lowest(p.scores);
    return p;
}

Prediction retrieval_predict(const KnnIndex& index, const NetworkSpec& spec,
                             const Weights& weights, const ImageRecord& record, int k,
                             const PreprocessOptions& prep, VoteWeighting weighting) {
    if (prep.pooling != index.pooling) {
        throw UsageError(std::string("index was built with ") + pooling_name(index.pooling) +
                         "-based pooling but the query uses " + pooling_name(prep.pooling));
    }
    const Tensor input = preprocess(record, prep);
    std::vector<float> q = extract_features(spec, weights, input, index.tap);
    if (index.normalized) {
        double norm_sq = 0.0;
        for (const float v : q) norm_sq += static_cast<double>(v) * static_cast<double>(v);
        const double norm = std::sqrt(norm_sq);
        if (norm <= 1e-12) {
            throw UsageError("record '" + record.id +
                             "' produced a zero feature vector, which cannot be "
                             "unit-normalized");
        }
        for (float& v : q) v = static_cast<float>(static_cast<double>(v) / norm);
    }
    return weighted_vote(knn_retrieve(index, q, k), index.num_classes, weighting);
}

}  // namespace geostyle

#pragma once

#include <string>
#include <vector>

#include "geostyle/dataset.hpp"
#include "geostyle/network.hpp"
#include "geostyle/tensor.hpp"

namespace geostyle {

// Feature vectors with their labels plus the provenance tags (tap, pooling)
// needed to keep pipeline stages consistent.
struct FeatureSet {
    Tensor matrix;            // N x d
    std::vector<int> labels;  // N entries in [0, num_classes)
    int num_classes = 0;
    std::string tap;
    Pooling pooling = Pooling::image_based;

    int count() const { return matrix.rank() == 2 ? matrix.dim(0) : 0; }
    int dim() const { return matrix.rank() == 2 ? matrix.dim(1) : 0; }
};

// Eval-mode tap activations for the given records, one row per record in the
// given order.
FeatureSet extract_feature_matrix(const NetworkSpec& spec, const Weights& weights,
                                  const Manifest& manifest, const std::vector<int>& records,
                                  const std::string& tap, const PreprocessOptions& prep);

// Feature file: magic "GSFT", version byte, tap string, pooling string,
// class count, labels, then the matrix in GSTN format.
inline constexpr char kFeaturesMagic[4] = {'G', 'S', 'F', 'T'};

void save_features(const std::string& path, const FeatureSet& features);
FeatureSet load_features(const std::string& path);

struct Prediction {
    int label = 0;
    std::vector<double> scores;  // one per class; label == argmax, ties -> lowest index
};

// First index of the maximum value.
int argmax_lowest(const std::vector<double>& scores);

struct LinearSvmModel {
    Tensor weight;  // k x d
    Tensor bias;    // k
    double chosen_c = 0.0;
    std::string tap;
    Pooling pooling = Pooling::image_based;
    // Training metadata, not persisted: mean CV mCA per (ascending) grid entry,
    // and the per-epoch objective trajectory of each one-vs-rest problem in the
    // final full-data retrain.
    std::vector<double> grid_mca;
    std::vector<std::vector<double>> retrain_objectives;
};

struct SvmConfig {
    std::vector<double> c_grid{0.01, 0.1, 1.0};
    int folds = 3;
    int epochs = 150;  // subgradient iterations per binary problem
    std::uint64_t seed = 0;
};

// One-vs-rest linear SVMs with L2-regularized mean hinge loss, trained by a
// deterministic monotone sub-gradient descent; C selected by stratified
// k-fold cross-validated mCA, ties toward the smaller C, then retrained on
// all data.
LinearSvmModel train_svm(const FeatureSet& features, const SvmConfig& config);

Prediction svm_predict(const LinearSvmModel& model, const std::vector<float>& feature);

// SVM model file: magic "GSVM", version byte, W and b as GSTN tensors, the
// chosen C, then tap and pooling tags.
inline constexpr char kSvmMagic[4] = {'G', 'S', 'V', 'M'};

void save_svm(const std::string& path, const LinearSvmModel& model);
LinearSvmModel load_svm(const std::string& path);

// extract_features -> svm_predict for a single record.
Prediction predict_with_svm(const NetworkSpec& spec, const Weights& weights,
                            const LinearSvmModel& model, const ImageRecord& record,
                            const PreprocessOptions& prep);

struct KnnIndex {
    Tensor features;  // N x d, unit rows when normalized
    std::vector<int> labels;
    std::vector<std::string> ids;
    int num_classes = 0;
    bool normalized = true;
    std::string tap;
    Pooling pooling = Pooling::image_based;
};

// Encodes the given records with the network and stores (optionally
// unit-normalized) rows in record order.
KnnIndex build_index(const NetworkSpec& spec, const Weights& weights, const Manifest& manifest,
                     const std::vector<int>& records, const std::string& tap,
                     const PreprocessOptions& prep, bool normalize = true);

// Packages already-extracted features as an index, optionally
// unit-normalizing rows (double accumulation). `ids`, when given, must have
// one entry per row.
KnnIndex index_from_features(FeatureSet features, std::vector<std::string> ids = {},
                             bool normalize = true);

// Index file: magic "GSIX", version byte, feature matrix, labels,
// normalization flag, then class count, tap, pooling, and row ids.
inline constexpr char kIndexMagic[4] = {'G', 'S', 'I', 'X'};

void save_index(const std::string& path, const KnnIndex& index);
KnnIndex load_index(const std::string& path);

struct RetrievedNeighbor {
    int index = 0;  // row in the KnnIndex
    std::string id;
    int label = 0;
    double distance = 0.0;
};

// Exact k nearest rows by Euclidean distance (double accumulation),
// ascending; distance ties resolve toward the smaller row index.
std::vector<RetrievedNeighbor> knn_retrieve(const KnnIndex& index,
                                            const std::vector<float>& query, int k);

enum class VoteWeighting { inverse_distance, uniform };

const char* vote_weighting_name(VoteWeighting w);
VoteWeighting parse_vote_weighting(const std::string& s);

// Class score = sum of neighbor weights, weight 1/(distance + 1e-8) or 1.
Prediction weighted_vote(const std::vector<RetrievedNeighbor>& neighbors, int num_classes,
                         VoteWeighting weighting = VoteWeighting::inverse_distance);

// Encode the query record, retrieve k neighbors, and vote.
Prediction retrieval_predict(const KnnIndex& index, const NetworkSpec& spec,
                             const Weights& weights, const ImageRecord& record, int k,
                             const PreprocessOptions& prep,
                             VoteWeighting weighting = VoteWeighting::inverse_distance);

}  // namespace geostyle

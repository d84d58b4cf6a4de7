#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "geostyle/classifiers.hpp"
#include "geostyle/dataset.hpp"
#include "geostyle/errors.hpp"
#include "geostyle/eval.hpp"
#include "geostyle/network.hpp"
#include "geostyle/rng.hpp"
#include "support/reference_ops.hpp"
#include "support/temp_dir.hpp"

using namespace geostyle;
using testutil::TempDir;

namespace {

FeatureSet points_to_features(const std::vector<std::vector<float>>& points,
                              const std::vector<int>& labels, int num_classes) {
    std::vector<float> flat;
    for (const auto& p : points) flat.insert(flat.end(), p.begin(), p.end());
    FeatureSet fs;
    fs.matrix = Tensor({static_cast<int>(points.size()), static_cast<int>(points[0].size())},
                       std::move(flat));
    fs.labels = labels;
    fs.num_classes = num_classes;
    fs.tap = "fc1";
    fs.pooling = Pooling::image_based;
    return fs;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

// Constant-color PPM on disk plus the record pointing at it.
ImageRecord make_color_record(const TempDir& tmp, const std::string& id, int label, float r,
                              float g, float b, int side = 16) {
    Tensor img({3, side, side});
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            img.at3(0, y, x) = r;
            img.at3(1, y, x) = g;
            img.at3(2, y, x) = b;
        }
    }
    const std::string path = tmp.file(id + ".ppm");
    encode_ppm(path, img);
    ImageRecord rec;
    rec.id = id;
    rec.pixel_path = path;
    rec.label = label;
    return rec;
}

}  // namespace

TEST_CASE("an SVM on linearly separated points recovers the sign rule") {
    std::vector<std::vector<float>> pts;
    std::vector<int> labels;
    for (int i = 0; i < 3; ++i) {
        pts.push_back({-1.f, 0.f});
        labels.push_back(0);
        pts.push_back({1.f, 0.f});
        labels.push_back(1);
    }
    LinearSvmModel model = train_svm(points_to_features(pts, labels, 2), SvmConfig{});

    CHECK(svm_predict(model, {0.5f, 0.3f}).label == 1);
    CHECK(svm_predict(model, {2.0f, -1.0f}).label == 1);
    CHECK(svm_predict(model, {-0.5f, 0.3f}).label == 0);
    CHECK(svm_predict(model, {-2.0f, 1.0f}).label == 0);
    // Every grid C separates this data, so cross-validation is perfect
    // everywhere and the tie goes to the smallest C.
    for (const double m : model.grid_mca) CHECK(m == 1.0);
    CHECK(model.chosen_c == 0.01);
}

TEST_CASE("duplicating every training point changes neither the chosen C nor the decisions") {
    Rng rng(90);
    std::vector<std::vector<float>> pts;
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) {
        const float jx = static_cast<float>(rng.uniform() * 0.2 - 0.1);
        const float jy = static_cast<float>(rng.uniform() * 0.2 - 0.1);
        pts.push_back({-1.f + jx, jy});
        labels.push_back(0);
        pts.push_back({1.f + jx, -jy});
        labels.push_back(1);
    }
    std::vector<std::vector<float>> doubled = pts;
    doubled.insert(doubled.end(), pts.begin(), pts.end());
    std::vector<int> doubled_labels = labels;
    doubled_labels.insert(doubled_labels.end(), labels.begin(), labels.end());

    LinearSvmModel a = train_svm(points_to_features(pts, labels, 2), SvmConfig{});
    LinearSvmModel b = train_svm(points_to_features(doubled, doubled_labels, 2), SvmConfig{});

    CHECK(a.chosen_c == b.chosen_c);
    for (int i = 0; i < 20; ++i) {
        // Probes away from the boundary, where ulp-level weight differences
        // cannot flip the argmax.
        const float x = static_cast<float>(rng.uniform() * 1.5 + 0.3) *
                        (i % 2 == 0 ? 1.f : -1.f);
        const float y = static_cast<float>(rng.uniform() * 2.0 - 1.0);
        CHECK(svm_predict(a, {x, y}).label == svm_predict(b, {x, y}).label);
    }
}

TEST_CASE("widely separated blobs score perfect cross-validation at every C") {
    const float centers[4][2] = {{-5.f, -5.f}, {5.f, -5.f}, {-5.f, 5.f}, {5.f, 5.f}};
    Rng rng(7);
    std::vector<std::vector<float>> pts;
    std::vector<int> labels;
    for (int c = 0; c < 4; ++c) {
        for (int i = 0; i < 12; ++i) {
            pts.push_back({centers[c][0] + static_cast<float>(rng.gaussian()),
                           centers[c][1] + static_cast<float>(rng.gaussian())});
            labels.push_back(c);
        }
    }
    LinearSvmModel model = train_svm(points_to_features(pts, labels, 4), SvmConfig{});
    REQUIRE(model.grid_mca.size() == 3);
    for (const double m : model.grid_mca) CHECK(m == 1.0);
    CHECK(model.chosen_c == 0.01);
}

TEST_CASE("the training objective never increases during descent") {
    std::vector<std::vector<float>> pts;
    std::vector<int> labels;
    Rng rng(55);
    for (int i = 0; i < 8; ++i) {
        pts.push_back({static_cast<float>(rng.gaussian()) - 4.f,
                       static_cast<float>(rng.gaussian())});
        labels.push_back(0);
        pts.push_back({static_cast<float>(rng.gaussian()) + 4.f,
                       static_cast<float>(rng.gaussian())});
        labels.push_back(1);
    }
    LinearSvmModel model = train_svm(points_to_features(pts, labels, 2), SvmConfig{});
    REQUIRE(model.retrain_objectives.size() == 2);  // one trace per one-vs-rest problem
    for (const auto& trace : model.retrain_objectives) {
        REQUIRE(trace.size() >= 2);
        for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1]);
    }
}

TEST_CASE("train_svm rejects degenerate configurations") {
    std::vector<std::vector<float>> pts{{-1.f, 0.f}, {-1.f, 1.f}, {-1.f, 2.f},
                                        {1.f, 0.f},  {1.f, 1.f},  {1.f, 2.f}};
    std::vector<int> labels{0, 0, 0, 1, 1, 1};
    FeatureSet fs = points_to_features(pts, labels, 2);

    SvmConfig empty_grid;
    empty_grid.c_grid.clear();
    CHECK_THROWS_AS(train_svm(fs, empty_grid), UsageError);

    SvmConfig bad_c;
    bad_c.c_grid = {0.1, -1.0};
    CHECK_THROWS_AS(train_svm(fs, bad_c), UsageError);

    SvmConfig one_fold;
    one_fold.folds = 1;
    CHECK_THROWS_AS(train_svm(fs, one_fold), UsageError);

    SvmConfig five_folds;  // only 3 examples per class
    five_folds.folds = 5;
    CHECK_THROWS_AS(train_svm(fs, five_folds), UsageError);

    FeatureSet one_class = points_to_features(pts, labels, 1);
    CHECK_THROWS_AS(train_svm(one_class, SvmConfig{}), UsageError);

    FeatureSet stray = points_to_features(pts, {0, 0, 0, 1, 1, 7}, 2);
    CHECK_THROWS_AS(train_svm(stray, SvmConfig{}), UsageError);
}

TEST_CASE("svm_predict applies weights, bias, and the lowest-index tie rule") {
    LinearSvmModel model;
    model.weight = Tensor({2, 3});  // zeros
    model.bias = Tensor({2}, {1.f, 0.f});
    Prediction p = svm_predict(model, {0.3f, -0.2f, 0.9f});
    CHECK(p.label == 0);
    CHECK(p.scores[0] == 1.0);
    CHECK(p.scores[1] == 0.0);

    model.bias = Tensor({2});  // exact tie at zero
    CHECK(svm_predict(model, {1.f, 2.f, 3.f}).label == 0);

    LinearSvmModel three;
    three.weight = Tensor({3, 2});
    three.bias = Tensor({3}, {0.f, 2.f, 2.f});  // tie between classes 1 and 2
    CHECK(svm_predict(three, {5.f, 5.f}).label == 1);
}

TEST_CASE("svm_predict validates the feature length") {
    LinearSvmModel model;
    model.weight = Tensor({2, 3});
    model.bias = Tensor({2});
    CHECK_THROWS_AS(svm_predict(model, {1.f, 2.f}), ShapeError);
}

TEST_CASE("the predicted class is invariant to positive rescaling of the scores") {
    Rng rng(12);
    LinearSvmModel model;
    model.weight = Tensor({4, 6});
    model.bias = Tensor({4});
    for (std::int64_t i = 0; i < model.weight.numel(); ++i) {
        model.weight[i] = static_cast<float>(rng.gaussian());
    }
    for (std::int64_t i = 0; i < model.bias.numel(); ++i) {
        model.bias[i] = static_cast<float>(rng.gaussian());
    }
    LinearSvmModel scaled = model;
    for (std::int64_t i = 0; i < scaled.weight.numel(); ++i) scaled.weight[i] *= 3.5f;
    for (std::int64_t i = 0; i < scaled.bias.numel(); ++i) scaled.bias[i] *= 3.5f;

    for (int t = 0; t < 20; ++t) {
        std::vector<float> x(6);
        for (auto& v : x) v = static_cast<float>(rng.gaussian());
        CHECK(svm_predict(model, x).label == svm_predict(scaled, x).label);
    }

    // The tie-break itself also survives rescaling.
    LinearSvmModel tied;
    tied.weight = Tensor({3, 2});
    tied.bias = Tensor({3}, {0.5f, 0.5f, 0.1f});
    LinearSvmModel tied2 = tied;
    for (std::int64_t i = 0; i < tied2.bias.numel(); ++i) tied2.bias[i] *= 2.0f;
    CHECK(svm_predict(tied, {1.f, 1.f}).label == 0);
    CHECK(svm_predict(tied2, {1.f, 1.f}).label == 0);
}

TEST_CASE("trained models survive the file round-trip") {
    std::vector<std::vector<float>> pts{{-1.f, 0.f}, {-1.f, 1.f}, {-1.f, 2.f},
                                        {1.f, 0.f},  {1.f, 1.f},  {1.f, 2.f}};
    FeatureSet fs = points_to_features(pts, {0, 0, 0, 1, 1, 1}, 2);
    fs.pooling = Pooling::human_based;
    LinearSvmModel model = train_svm(fs, SvmConfig{});

    TempDir tmp("gs_svm_roundtrip");
    const std::string path = tmp.file("model.gsvm");
    save_svm(path, model);
    LinearSvmModel back = load_svm(path);
    CHECK(bits_equal(back.weight, model.weight));
    CHECK(bits_equal(back.bias, model.bias));
    CHECK(back.chosen_c == model.chosen_c);
    CHECK(back.tap == model.tap);
    CHECK(back.pooling == model.pooling);

    const std::string bytes = testutil::read_bytes(path);
    testutil::write_text(tmp.file("cut.gsvm"), bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_svm(tmp.file("cut.gsvm")), FormatError);
    testutil::write_text(tmp.file("junk.gsvm"), "GSIX rest of the file");
    CHECK_THROWS_AS(load_svm(tmp.file("junk.gsvm")), FormatError);
}

TEST_CASE("feature files round-trip") {
    Rng rng(3);
    FeatureSet fs;
    fs.matrix = Tensor({3, 4});
    for (std::int64_t i = 0; i < fs.matrix.numel(); ++i) {
        fs.matrix[i] = static_cast<float>(rng.gaussian());
    }
    fs.labels = {0, 2, 1};
    fs.num_classes = 3;
    fs.tap = "conv4";
    fs.pooling = Pooling::human_based;

    TempDir tmp("gs_feat_roundtrip");
    const std::string path = tmp.file("train.gsft");
    save_features(path, fs);
    FeatureSet back = load_features(path);
    CHECK(bits_equal(back.matrix, fs.matrix));
    CHECK(back.labels == fs.labels);
    CHECK(back.num_classes == 3);
    CHECK(back.tap == "conv4");
    CHECK(back.pooling == Pooling::human_based);

    const std::string bytes = testutil::read_bytes(path);
    testutil::write_text(tmp.file("cut.gsft"), bytes.substr(0, 10));
    CHECK_THROWS_AS(load_features(tmp.file("cut.gsft")), FormatError);
}

TEST_CASE("feature extraction composes into prediction") {
    TempDir tmp("gs_clf_compose");
    Manifest m;
    m.label_names = {"red", "green"};
    m.records.push_back(make_color_record(tmp, "r0", 0, 0.9f, 0.1f, 0.1f));
    m.records.push_back(make_color_record(tmp, "g0", 1, 0.1f, 0.9f, 0.1f));

    NetworkSpec spec = make_network_spec("desk", 16, 2);
    Weights w = build_network(spec, InitSpec::gaussian(0.05f), 5);
    PreprocessOptions prep;
    prep.target_h = prep.target_w = 16;

    FeatureSet fs = extract_feature_matrix(spec, w, m, {0, 1}, "fc1", prep);
    CHECK(fs.count() == 2);
    CHECK(fs.dim() == 256);
    CHECK(fs.labels == std::vector<int>{0, 1});

    Rng rng(44);
    LinearSvmModel model;
    model.weight = Tensor({2, 256});
    for (std::int64_t i = 0; i < model.weight.numel(); ++i) {
        model.weight[i] = static_cast<float>(rng.gaussian() * 0.1);
    }
    model.bias = Tensor({2}, {0.01f, -0.02f});
    model.tap = "fc1";
    model.pooling = Pooling::image_based;

    for (const auto& rec : m.records) {
        Prediction composed = predict_with_svm(spec, w, model, rec, prep);
        Prediction manual = svm_predict(model, extract_features(spec, w, preprocess(rec, prep),
                                                                "fc1"));
        CHECK(composed.label == manual.label);
        CHECK(composed.scores == manual.scores);
    }

    // Identical inputs give identical predictions.
    ImageRecord twin = m.records[0];
    twin.id = "r0_copy";
    Prediction p1 = predict_with_svm(spec, w, model, m.records[0], prep);
    Prediction p2 = predict_with_svm(spec, w, model, twin, prep);
    CHECK(p1.label == p2.label);
    CHECK(p1.scores == p2.scores);
}

TEST_CASE("prediction refuses a pooling mode other than the model's") {
    TempDir tmp("gs_clf_poolmix");
    ImageRecord rec = make_color_record(tmp, "r0", 0, 0.5f, 0.5f, 0.5f);
    NetworkSpec spec = make_network_spec("desk", 16, 2);
    Weights w = build_network(spec, InitSpec::gaussian(0.05f), 5);
    LinearSvmModel model;
    model.weight = Tensor({2, 256});
    model.bias = Tensor({2});
    model.tap = "fc1";
    model.pooling = Pooling::human_based;
    PreprocessOptions prep;
    prep.target_h = prep.target_w = 16;
    prep.pooling = Pooling::image_based;
    CHECK_THROWS_AS(predict_with_svm(spec, w, model, rec, prep), UsageError);
}

TEST_CASE("an index stores one unit-length row per record in order") {
    TempDir tmp("gs_index_rows");
    Manifest m;
    m.label_names = {"red", "green"};
    m.records.push_back(make_color_record(tmp, "r0", 0, 0.9f, 0.1f, 0.1f));
    m.records.push_back(make_color_record(tmp, "g0", 1, 0.1f, 0.9f, 0.1f));
    m.records.push_back(make_color_record(tmp, "r1", 0, 0.8f, 0.2f, 0.1f));
    m.records.push_back(make_color_record(tmp, "g1", 1, 0.2f, 0.8f, 0.1f));

    NetworkSpec spec = make_network_spec("desk", 16, 2);
    Weights w = build_network(spec, InitSpec::gaussian(0.05f), 5);
    PreprocessOptions prep;
    prep.target_h = prep.target_w = 16;

    KnnIndex index = build_index(spec, w, m, {0, 1, 2, 3}, "fc1", prep);
    REQUIRE(index.features.dim(0) == 4);
    CHECK(index.features.dim(1) == 256);
    CHECK(index.ids == std::vector<std::string>{"r0", "g0", "r1", "g1"});
    CHECK(index.labels == std::vector<int>{0, 1, 0, 1});
    CHECK(index.normalized);

    for (int i = 0; i < 4; ++i) {
        // Stored rows are unit length.
        double norm_sq = 0.0;
        for (int j = 0; j < 256; ++j) {
            const double v = static_cast<double>(index.features.at2(i, j));
            norm_sq += v * v;
        }
        CHECK(std::sqrt(norm_sq) == doctest::Approx(1.0).epsilon(1e-6));

        // And each row is exactly the normalized feature vector of its record.
        std::vector<float> f =
            extract_features(spec, w, preprocess(m.records[static_cast<std::size_t>(i)], prep),
                             "fc1");
        double nsq = 0.0;
        for (const float v : f) nsq += static_cast<double>(v) * static_cast<double>(v);
        const double norm = std::sqrt(nsq);
        for (int j = 0; j < 256; ++j) {
            const float want = static_cast<float>(
                static_cast<double>(f[static_cast<std::size_t>(j)]) / norm);
            CHECK(index.features.at2(i, j) == want);
        }
    }
}

TEST_CASE("zero activations cannot be indexed") {
    TempDir tmp("gs_index_zero");
    Manifest m;
    m.label_names = {"red", "green"};
    m.records.push_back(make_color_record(tmp, "r0", 0, 0.9f, 0.1f, 0.1f));
    m.records.push_back(make_color_record(tmp, "g0", 1, 0.1f, 0.9f, 0.1f));
    NetworkSpec spec = make_network_spec("desk", 16, 2);
    Weights w = build_network(spec, InitSpec::zeros(), 0);
    PreprocessOptions prep;
    prep.target_h = prep.target_w = 16;
    try {
        build_index(spec, w, m, {0, 1}, "fc1", prep);
        FAIL("expected a degenerate-feature error");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("r0") != std::string::npos);
    }
}

TEST_CASE("an index packaged from saved features matches direct construction") {
    TempDir tmp("gs_index_from_feats");
    Manifest m;
    m.label_names = {"red", "green"};
    m.records.push_back(make_color_record(tmp, "r0", 0, 0.9f, 0.1f, 0.1f));
    m.records.push_back(make_color_record(tmp, "g0", 1, 0.1f, 0.9f, 0.1f));
    m.records.push_back(make_color_record(tmp, "r1", 0, 0.8f, 0.2f, 0.1f));

    NetworkSpec spec = make_network_spec("desk", 16, 2);
    Weights w = build_network(spec, InitSpec::gaussian(0.05f), 5);
    PreprocessOptions prep;
    prep.target_h = prep.target_w = 16;

    const KnnIndex direct = build_index(spec, w, m, {0, 1, 2}, "fc1", prep);
    FeatureSet features = extract_feature_matrix(spec, w, m, {0, 1, 2}, "fc1", prep);
    const KnnIndex packaged =
        index_from_features(std::move(features), {"r0", "g0", "r1"});

    CHECK(bits_equal(packaged.features, direct.features));
    CHECK(packaged.ids == direct.ids);
    CHECK(packaged.labels == direct.labels);
    CHECK(packaged.num_classes == direct.num_classes);
    CHECK(packaged.tap == direct.tap);
    CHECK(packaged.pooling == direct.pooling);
    CHECK(packaged.normalized == direct.normalized);

    // Ids are optional; rows and labels still line up.
    const KnnIndex anonymous =
        index_from_features(extract_feature_matrix(spec, w, m, {0, 1, 2}, "fc1", prep));
    CHECK(anonymous.ids.empty());
    CHECK(bits_equal(anonymous.features, direct.features));
}

TEST_CASE("index_from_features rejects degenerate rows and mismatched ids") {
    FeatureSet fs = points_to_features({{3.f, 4.f}, {0.f, 0.f}}, {0, 1}, 2);
    try {
        index_from_features(std::move(fs), {"good", "bad"});
        FAIL("expected a degenerate-feature error");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("bad") != std::string::npos);
    }

    FeatureSet unnamed = points_to_features({{3.f, 4.f}, {0.f, 0.f}}, {0, 1}, 2);
    try {
        index_from_features(std::move(unnamed));
        FAIL("expected a degenerate-feature error");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }

    FeatureSet skew = points_to_features({{3.f, 4.f}}, {0}, 2);
    CHECK_THROWS_AS(index_from_features(std::move(skew), {"a", "b"}), UsageError);

    // Without normalization the raw rows are stored untouched.
    FeatureSet raw = points_to_features({{3.f, 4.f}, {0.f, 0.f}}, {0, 1}, 2);
    const KnnIndex index = index_from_features(std::move(raw), {}, false);
    CHECK_FALSE(index.normalized);
    CHECK(index.features.at2(0, 0) == 3.f);
    CHECK(index.features.at2(1, 1) == 0.f);
}

namespace {

KnnIndex hand_index(const std::vector<std::vector<float>>& rows, const std::vector<int>& labels,
                    int num_classes) {
    std::vector<float> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    KnnIndex index;
    index.features = Tensor({static_cast<int>(rows.size()), static_cast<int>(rows[0].size())},
                            std::move(flat));
    index.labels = labels;
    for (std::size_t i = 0; i < rows.size(); ++i) index.ids.push_back("row" + std::to_string(i));
    index.num_classes = num_classes;
    index.normalized = false;
    index.tap = "fc1";
    index.pooling = Pooling::image_based;
    return index;
}

}  // namespace

TEST_CASE("retrieval returns a stored vector itself at distance zero") {
    KnnIndex index = hand_index({{0.f, 1.f}, {3.f, 4.f}, {-2.f, 5.f}}, {0, 1, 2}, 3);
    auto got = knn_retrieve(index, {3.f, 4.f}, 1);
    REQUIRE(got.size() == 1);
    CHECK(got[0].index == 1);
    CHECK(got[0].id == "row1");
    CHECK(got[0].distance == 0.0);

    auto all = knn_retrieve(index, {3.f, 4.f}, 3);
    REQUIRE(all.size() == 3);
    CHECK(all[0].distance <= all[1].distance);
    CHECK(all[1].distance <= all[2].distance);

    CHECK_THROWS_AS(knn_retrieve(index, {0.f, 0.f}, 0), UsageError);
    CHECK_THROWS_AS(knn_retrieve(index, {0.f, 0.f}, 4), UsageError);
    CHECK_THROWS_AS(knn_retrieve(index, {0.f}, 1), ShapeError);
}

TEST_CASE("retrieval ties resolve toward the smaller reference index") {
    KnnIndex index = hand_index({{1.f, 0.f}, {1.f, 0.f}, {0.f, 2.f}}, {0, 1, 2}, 3);
    auto got = knn_retrieve(index, {0.f, 0.f}, 2);
    REQUIRE(got.size() == 2);
    CHECK(got[0].index == 0);
    CHECK(got[1].index == 1);
    CHECK(got[0].distance == got[1].distance);
}

TEST_CASE("retrieval matches the exhaustive oracle on random instances") {
    const int n = 200, d = 16, k = 7;
    Rng rng(2024);
    std::vector<std::vector<float>> rows(n, std::vector<float>(d));
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        for (auto& v : rows[static_cast<std::size_t>(i)]) {
            v = static_cast<float>(rng.gaussian());
        }
        labels[static_cast<std::size_t>(i)] = static_cast<int>(rng.below(5));
    }
    KnnIndex index = hand_index(rows, labels, 5);

    for (int q = 0; q < 50; ++q) {
        std::vector<float> query(d);
        for (auto& v : query) v = static_cast<float>(rng.gaussian());
        auto got = knn_retrieve(index, query, k);
        auto want = refops::knn(rows, query, k);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].index == want[i].index);
            CHECK(got[i].distance == want[i].distance);  // bit-exact
        }
    }
}

TEST_CASE("a single neighbor dictates the vote") {
    std::vector<RetrievedNeighbor> one{{4, "x", 3, 0.7}};
    Prediction p = weighted_vote(one, 5);
    CHECK(p.label == 3);
    for (int c = 0; c < 5; ++c) {
        if (c != 3) CHECK(p.scores[static_cast<std::size_t>(c)] == 0.0);
    }
}

TEST_CASE("a unanimous neighborhood wins at any distances") {
    std::vector<RetrievedNeighbor> nbs{{0, "a", 1, 0.1}, {1, "b", 1, 5.0}, {2, "c", 1, 100.0}};
    CHECK(weighted_vote(nbs, 3, VoteWeighting::inverse_distance).label == 1);
    CHECK(weighted_vote(nbs, 3, VoteWeighting::uniform).label == 1);
}

TEST_CASE("inverse-distance scores follow the reciprocal rule") {
    // 1/(0.1+eps) = 10, 1/(0.2+eps) + 1/(0.3+eps) = 8.333...; the single
    // closer neighbor outvotes the pair.
    std::vector<RetrievedNeighbor> nbs{{0, "a", 0, 0.1}, {1, "b", 1, 0.2}, {2, "c", 1, 0.3}};
    Prediction p = weighted_vote(nbs, 2);
    CHECK(p.scores[0] == doctest::Approx(10.0).epsilon(1e-6));
    CHECK(p.scores[1] == doctest::Approx(25.0 / 3.0).epsilon(1e-6));
    CHECK(p.label == 0);

    // Uniform weighting flips the outcome: two votes beat one.
    CHECK(weighted_vote(nbs, 2, VoteWeighting::uniform).label == 1);
}

TEST_CASE("votes ignore neighbor order") {
    std::vector<RetrievedNeighbor> nbs{
        {0, "a", 0, 0.4}, {1, "b", 2, 0.5}, {2, "c", 2, 0.9}, {3, "d", 1, 1.4}};
    Prediction base = weighted_vote(nbs, 3);
    std::rotate(nbs.begin(), nbs.begin() + 1, nbs.end());
    Prediction rotated = weighted_vote(nbs, 3);
    CHECK(rotated.label == base.label);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(rotated.scores[c] == doctest::Approx(base.scores[c]).epsilon(1e-12));
    }
}

TEST_CASE("weighted_vote validates its inputs") {
    CHECK_THROWS_AS(weighted_vote({}, 3), UsageError);
    std::vector<RetrievedNeighbor> bad{{0, "a", 7, 0.5}};
    CHECK_THROWS_AS(weighted_vote(bad, 3), UsageError);
}

TEST_CASE("vote weighting names parse both ways") {
    CHECK(parse_vote_weighting("inverse_distance") == VoteWeighting::inverse_distance);
    CHECK(parse_vote_weighting("uniform") == VoteWeighting::uniform);
    CHECK(std::string(vote_weighting_name(VoteWeighting::uniform)) == "uniform");
    CHECK(std::string(vote_weighting_name(VoteWeighting::inverse_distance)) ==
          "inverse_distance");
    CHECK_THROWS_AS(parse_vote_weighting("closest"), ParseError);
}

TEST_CASE("retrieval prediction is nearest-neighbor classification at k equal to one") {
    TempDir tmp("gs_retrieval_nn");
    Manifest m;
    m.label_names = {"red", "green"};
    m.records.push_back(make_color_record(tmp, "r0", 0, 0.9f, 0.1f, 0.1f));
    m.records.push_back(make_color_record(tmp, "g0", 1, 0.1f, 0.9f, 0.1f));
    m.records.push_back(make_color_record(tmp, "r1", 0, 0.8f, 0.2f, 0.1f));
    m.records.push_back(make_color_record(tmp, "g1", 1, 0.2f, 0.8f, 0.1f));

    NetworkSpec spec = make_network_spec("desk", 16, 2);
    Weights w = build_network(spec, InitSpec::gaussian(0.05f), 5);
    PreprocessOptions prep;
    prep.target_h = prep.target_w = 16;
    KnnIndex index = build_index(spec, w, m, {0, 1, 2, 3}, "fc1", prep);

    // A training record retrieves itself: its own label at distance zero.
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        Prediction p = retrieval_predict(index, spec, w, m.records[i], 1, prep);
        CHECK(p.label == m.records[i].label);
    }

    // Composition law: encode -> retrieve -> vote, assembled by hand.
    const ImageRecord& probe = m.records[2];
    std::vector<float> f = extract_features(spec, w, preprocess(probe, prep), "fc1");
    double nsq = 0.0;
    for (const float v : f) nsq += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(nsq);
    for (float& v : f) v = static_cast<float>(static_cast<double>(v) / norm);
    Prediction manual = weighted_vote(knn_retrieve(index, f, 3), index.num_classes);
    Prediction composed = retrieval_predict(index, spec, w, probe, 3, prep);
    CHECK(composed.label == manual.label);
    CHECK(composed.scores == manual.scores);

    // Pooling modes must match the index.
    PreprocessOptions human = prep;
    human.pooling = Pooling::human_based;
    CHECK_THROWS_AS(retrieval_predict(index, spec, w, probe, 1, human), UsageError);
}

TEST_CASE("index files round-trip") {
    TempDir tmp("gs_index_roundtrip");
    Rng rng(6);
    std::vector<std::vector<float>> rows(5, std::vector<float>(3));
    for (auto& r : rows) {
        for (auto& v : r) v = static_cast<float>(rng.gaussian());
    }
    KnnIndex index = hand_index(rows, {0, 1, 2, 0, 1}, 3);
    index.normalized = false;
    index.tap = "conv4";
    index.pooling = Pooling::human_based;

    const std::string path = tmp.file("train.gsix");
    save_index(path, index);
    KnnIndex back = load_index(path);
    CHECK(bits_equal(back.features, index.features));
    CHECK(back.labels == index.labels);
    CHECK(back.ids == index.ids);
    CHECK(back.num_classes == 3);
    CHECK(back.normalized == false);
    CHECK(back.tap == "conv4");
    CHECK(back.pooling == Pooling::human_based);

    const std::string bytes = testutil::read_bytes(path);
    testutil::write_text(tmp.file("cut.gsix"), bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(load_index(tmp.file("cut.gsix")), FormatError);
}

TEST_CASE("random features of color-coded classes support both classifier paths") {
    // Color-separable synthetic images: even an untrained network's features
    // keep the classes apart, so both the SVM route and the retrieval route
    // must land well above chance.
    TempDir tmp("gs_clf_synth");
    SyntheticOptions opts;
    opts.classes = 6;
    opts.per_class = 20;
    opts.size = 32;
    opts.signal = SyntheticSignal::foreground;
    Manifest m = make_synthetic_dataset(tmp.file("data"), opts, 99);
    SplitAssignment split = split_dataset(m, 7);
    std::vector<int> train = split_indices(m, split, Split::train);
    std::vector<int> test = split_indices(m, split, Split::test);
    REQUIRE(!train.empty());
    REQUIRE(!test.empty());

    NetworkSpec spec = make_network_spec("desk", 32, 6);
    Weights w = build_network(spec, InitSpec::gaussian(0.05f), 1);
    PreprocessOptions prep;
    prep.target_h = prep.target_w = 32;

    FeatureSet fs = extract_feature_matrix(spec, w, m, train, "fc1", prep);
    LinearSvmModel model = train_svm(fs, SvmConfig{});
    std::vector<int> svm_preds, truth;
    for (const int idx : test) {
        svm_preds.push_back(
            predict_with_svm(spec, w, model, m.records[static_cast<std::size_t>(idx)], prep)
                .label);
        truth.push_back(m.records[static_cast<std::size_t>(idx)].label);
    }
    const double svm_mca = mean_class_accuracy(confusion(svm_preds, truth, 6)).mca;
    CHECK(svm_mca > 1.0 / 6.0 + 0.2);

    KnnIndex index = build_index(spec, w, m, train, "fc1", prep);
    std::vector<int> knn_preds;
    for (const int idx : test) {
        knn_preds.push_back(
            retrieval_predict(index, spec, w, m.records[static_cast<std::size_t>(idx)], 5, prep)
                .label);
    }
    const double knn_mca = mean_class_accuracy(confusion(knn_preds, truth, 6)).mca;
    CHECK(knn_mca > 1.0 / 6.0 + 0.2);
}

TEST_CASE("argmax_lowest rejects an empty score vector") {
    CHECK_THROWS_AS(argmax_lowest({}), UsageError);
}

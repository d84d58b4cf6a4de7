#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace geostyle {

// Row = true class, column = predicted class.
struct ConfusionMatrix {
    int k = 0;
    std::vector<std::int64_t> counts;  // k*k row-major

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int classes)
        : k(classes), counts(static_cast<std::size_t>(classes) * classes, 0) {}

    std::int64_t& at(int true_cls, int pred_cls) {
        return counts[static_cast<std::size_t>(true_cls) * k + pred_cls];
    }
    std::int64_t at(int true_cls, int pred_cls) const {
        return counts[static_cast<std::size_t>(true_cls) * k + pred_cls];
    }
    std::int64_t total() const;
    std::int64_t row_sum(int true_cls) const;
};

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels,
                          int k);

struct McaResult {
    double mca = 0.0;
    std::vector<double> per_class;   // recall per class; NaN-free, empty classes hold 0
    std::vector<int> empty_classes;  // classes with no test examples, excluded from the mean
};

// Unweighted mean of per-class recall over non-empty rows.
McaResult mean_class_accuracy(const ConfusionMatrix& cm);

struct EvalReport {
    std::string method;
    std::string pooling;
    std::string dataset;
    std::vector<std::string> label_names;
    ConfusionMatrix cm;
    McaResult accuracy;
};

EvalReport make_report(const std::string& method, const std::string& pooling,
                       const std::string& dataset, const std::vector<int>& predictions,
                       const std::vector<int>& labels,
                       const std::vector<std::string>& label_names);

// One pairwise mCA delta, in percentage points (a minus b).
struct ComparisonRow {
    std::string method_a, pooling_a;
    std::string method_b, pooling_b;
    double mca_a = 0.0, mca_b = 0.0;
    double delta_pp = 0.0;
};

// All ordered pairs (i < j); reports must share one label set.
std::vector<ComparisonRow> compare(const std::vector<EvalReport>& reports);

// CSV writers. The confusion CSV is one header row plus k label-keyed rows;
// the summary CSV is keyed by (method, pooling, dataset).
void write_confusion_csv(const std::string& path, const EvalReport& report);
void write_summary_csv(const std::string& path, const std::vector<EvalReport>& reports);
void write_comparison_csv(const std::string& path, const std::vector<ComparisonRow>& rows);

}  // namespace geostyle

#include "geostyle/eval.hpp"

#include <fstream>

#include "geostyle/errors.hpp"

namespace geostyle {

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (const auto c : counts) t += c;
    return t;
}

std::int64_t ConfusionMatrix::row_sum(int true_cls) const {
    std::int64_t t = 0;
    for (int p = 0; p < k; ++p) t += at(true_cls, p);
    return t;
}

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels,
                          int k) {
    if (predictions.size() != labels.size()) {
        throw UsageError("confusion: " + std::to_string(predictions.size()) +
                         " predictions for " + std::to_string(labels.size()) + " labels");
    }
    if (k < 1) throw UsageError("confusion: need at least one class");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], t = labels[i];
        if (p < 0 || p >= k || t < 0 || t >= k) {
            throw UsageError("confusion: entry " + std::to_string(i) + " (true " +
                             std::to_string(t) + ", predicted " + std::to_string(p) +
                             ") is outside [0, " + std::to_string(k) + ")");
        }
        ++cm.at(t, p);
    }
    return cm;
}

McaResult mean_class_accuracy(const ConfusionMatrix& cm) {
    McaResult r;
    r.per_class.assign(static_cast<std::size_t>(cm.k), 0.0);
    double sum = 0.0;
    int non_empty = 0;
    for (int c = 0; c < cm.k; ++c) {
        const std::int64_t n = cm.row_sum(c);
        if (n == 0) {
            r.empty_classes.push_back(c);
            continue;
        }
        const double recall = static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
        r.per_class[static_cast<std::size_t>(c)] = recall;
        sum += recall;
        ++non_empty;
    }
    if (non_empty == 0) {
        throw UsageError("mean_class_accuracy: every class is empty");
    }
    r.mca = sum / static_cast<double>(non_empty);
    return r;
}

EvalReport make_report(const std::string& method, const std::string& pooling,
                       const std::string& dataset, const std::vector<int>& predictions,
                       const std::vector<int>& labels,
                       const std::vector<std::string>& label_names) {
    EvalReport rep;
    rep.method = method;
    rep.pooling = pooling;
    rep.dataset = dataset;
    rep.label_names = label_names;
    rep.cm = confusion(predictions, labels, static_cast<int>(label_names.size()));
    rep.accuracy = mean_class_accuracy(rep.cm);
    return rep;
}

std::vector<ComparisonRow> compare(const std::vector<EvalReport>& reports) {
    if (reports.size() < 2) {
        throw UsageError("compare needs at least two reports");
    }
    for (std::size_t i = 1; i < reports.size(); ++i) {
        if (reports[i].label_names != reports[0].label_names) {
            throw UsageError("compare: report " + std::to_string(i) + " (" + reports[i].method +
                             "/" + reports[i].pooling + ") uses a different class set");
        }
    }
    std::vector<ComparisonRow> rows;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        for (std::size_t j = i + 1; j < reports.size(); ++j) {
            ComparisonRow row;
            row.method_a = reports[i].method;
            row.pooling_a = reports[i].pooling;
            row.method_b = reports[j].method;
            row.pooling_b = reports[j].pooling;
            row.mca_a = reports[i].accuracy.mca;
            row.mca_b = reports[j].accuracy.mca;
            row.delta_pp = (row.mca_a - row.mca_b) * 100.0;
            rows.push_back(row);
        }
    }
    return rows;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    return out;
}

}  // namespace

void write_confusion_csv(const std::string& path, const EvalReport& report) {
    auto out = open_out(path);
    out << "true_class";
    for (const auto& name : report.label_names) out << ',' << name;
    out << '\n';
    for (int t = 0; t < report.cm.k; ++t) {
        out << report.label_names[static_cast<std::size_t>(t)];
        for (int p = 0; p < report.cm.k; ++p) out << ',' << report.cm.at(t, p);
        out << '\n';
    }
    if (!out) throw FormatError("failed while writing '" + path + "'");
}

void write_summary_csv(const std::string& path, const std::vector<EvalReport>& reports) {
    auto out = open_out(path);
    out << "method,pooling,dataset,mca,classes,empty_classes\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& rep : reports) {
        out << rep.method << ',' << rep.pooling << ',' << rep.dataset << ','
            << rep.accuracy.mca << ',' << rep.cm.k << ',';
        for (std::size_t i = 0; i < rep.accuracy.empty_classes.size(); ++i) {
            out << (i ? ";" : "") << rep.label_names[static_cast<std::size_t>(
                                         rep.accuracy.empty_classes[i])];
        }
        out << '\n';
    }
    if (!out) throw FormatError("failed while writing '" + path + "'");
}

void write_comparison_csv(const std::string& path, const std::vector<ComparisonRow>& rows) {
    auto out = open_out(path);
    out << "method_a,pooling_a,mca_a,method_b,pooling_b,mca_b,delta_pp\n";
    out.precision(6);
    out << std::fixed;
    for (const auto& r : rows) {
        out << r.method_a << ',' << r.pooling_a << ',' << r.mca_a << ',' << r.method_b << ','
            << r.pooling_b << ',' << r.mca_b << ',' << r.delta_pp << '\n';
    }
    if (!out) throw FormatError("failed while writing '" + path + "'");
}

}  // namespace geostyle

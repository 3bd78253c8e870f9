#pragma once

#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "dgode/matrix.hpp"

namespace dgode {

/// Classification quality summary: per-class F1, support-weighted F1,
/// accuracy and the raw confusion matrix (rows = true class, cols = predicted).
struct MetricsReport {
    std::vector<std::string> class_names;
    std::vector<double> per_class_f1;
    std::vector<std::size_t> support;
    double weighted_f1 = 0.0;
    double accuracy = 0.0;
    DenseMatrix confusion;
};

inline DenseMatrix confusion_matrix(const std::vector<int>& labels,
                                    const std::vector<int>& predictions,
                                    std::size_t class_count) {
    if (labels.size() != predictions.size())
        throw DimensionError("confusion_matrix: label/prediction count mismatch");
    DenseMatrix m(class_count, class_count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int t = labels[i], p = predictions[i];
        if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= class_count ||
            static_cast<std::size_t>(p) >= class_count)
            throw LabelError("confusion_matrix: class index out of range");
        m(static_cast<std::size_t>(t), static_cast<std::size_t>(p)) += 1.0;
    }
    return m;
}

/// Per-class F1 and support-weighted F1 from a confusion matrix. Classes with
/// no true and no predicted samples get F1 = 0 and zero weight.
inline MetricsReport metrics_from_confusion(const DenseMatrix& confusion,
                                            std::vector<std::string> class_names) {
    if (!confusion.is_square() || confusion.rows() != class_names.size())
        throw DimensionError("metrics_from_confusion: confusion shape mismatch");
    const std::size_t c = confusion.rows();

    MetricsReport r;
    r.class_names = std::move(class_names);
    r.confusion = confusion;
    r.per_class_f1.resize(c, 0.0);
    r.support.resize(c, 0);

    double total = 0.0, correct = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        for (std::size_t j = 0; j < c; ++j) total += confusion(i, j);
        correct += confusion(i, i);
    }
    for (std::size_t k = 0; k < c; ++k) {
        double row = 0.0, col = 0.0;
        for (std::size_t j = 0; j < c; ++j) row += confusion(k, j);
        for (std::size_t i = 0; i < c; ++i) col += confusion(i, k);
        r.support[k] = static_cast<std::size_t>(row + 0.5);
        const double tp = confusion(k, k);
        const double precision = col > 0.0 ? tp / col : 0.0;
        const double recall = row > 0.0 ? tp / row : 0.0;
        r.per_class_f1[k] =
            precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        if (total > 0.0) r.weighted_f1 += (row / total) * r.per_class_f1[k];
    }
    r.accuracy = total > 0.0 ? correct / total : 0.0;
    return r;
}

inline MetricsReport evaluate_predictions(const std::vector<int>& labels,
                                          const std::vector<int>& predictions,
                                          const std::vector<std::string>& class_names) {
    return metrics_from_confusion(confusion_matrix(labels, predictions, class_names.size()),
                                  class_names);
}

/// Tabular layout: one header row of class names plus W-F1, one row of F1
/// scores, then accuracy and the confusion counts.
inline std::string format_metrics_table(const MetricsReport& r, const std::string& row_label) {
    char buf[64];
    std::string out = "method";
    for (const auto& name : r.class_names) out += "\t" + name;
    out += "\tW-F1\n" + row_label;
    for (double f1 : r.per_class_f1) {
        std::snprintf(buf, sizeof buf, "\t%.4f", f1);
        out += buf;
    }
    std::snprintf(buf, sizeof buf, "\t%.4f\n", r.weighted_f1);
    out += buf;
    std::snprintf(buf, sizeof buf, "accuracy\t%.4f\n", r.accuracy);
    out += buf;
    out += "confusion (rows=true, cols=predicted)\n";
    for (std::size_t i = 0; i < r.confusion.rows(); ++i) {
        out += r.class_names[i];
        for (std::size_t j = 0; j < r.confusion.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "\t%.0f", r.confusion(i, j));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

}  // namespace dgode

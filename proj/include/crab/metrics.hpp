#pragma once

// Classification metrics: confusion matrix, accuracy, per-class and
// macro-averaged precision/recall/F1.  Any 0/0 rate is defined as 0 (the
// usual convention for classes never predicted or never present).

#include <cstdio>
#include <string>
#include <vector>

#include "crab/errors.hpp"

namespace crab {

struct EvalReport {
    std::vector<std::vector<std::size_t>> confusion;  // rows = true, cols = predicted
    double accuracy = 0;
    std::vector<double> precision, recall, f1;  // per class
    double macro_precision = 0, macro_recall = 0, macro_f1 = 0;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& row : confusion)
            for (std::size_t v : row) n += v;
        return n;
    }
};

inline EvalReport report_from_confusion(const std::vector<std::vector<std::size_t>>& confusion) {
    std::size_t c = confusion.size();
    if (c == 0) throw ContractError("confusion matrix is empty");
    for (const auto& row : confusion)
        if (row.size() != c) throw ContractError("confusion matrix is not square");

    EvalReport r;
    r.confusion = confusion;
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            total += confusion[i][j];
            if (i == j) correct += confusion[i][j];
        }
    r.accuracy = total == 0 ? 0.0 : double(correct) / double(total);

    for (std::size_t k = 0; k < c; ++k) {
        std::size_t tp = confusion[k][k], pred = 0, truth = 0;
        for (std::size_t i = 0; i < c; ++i) {
            pred += confusion[i][k];
            truth += confusion[k][i];
        }
        double p = pred == 0 ? 0.0 : double(tp) / double(pred);
        double rec = truth == 0 ? 0.0 : double(tp) / double(truth);
        double f = (p + rec) == 0.0 ? 0.0 : 2.0 * p * rec / (p + rec);
        r.precision.push_back(p);
        r.recall.push_back(rec);
        r.f1.push_back(f);
        r.macro_precision += p;
        r.macro_recall += rec;
        r.macro_f1 += f;
    }
    r.macro_precision /= double(c);
    r.macro_recall /= double(c);
    r.macro_f1 /= double(c);
    return r;
}

// Structured text rendering with all rates at 4 decimal places.
inline std::string format_report(const EvalReport& r, const std::vector<std::string>& class_names) {
    std::size_t c = r.confusion.size();
    if (class_names.size() != c)
        throw ContractError("expected " + std::to_string(c) + " class names, got " +
                            std::to_string(class_names.size()));
    char buf[128];
    std::string out = "confusion (rows = true, cols = predicted):\n";
    for (std::size_t i = 0; i < c; ++i) {
        out += "  " + class_names[i];
        for (std::size_t j = 0; j < c; ++j) {
            std::snprintf(buf, sizeof buf, "\t%zu", r.confusion[i][j]);
            out += buf;
        }
        out += "\n";
    }
    out += "per class (precision / recall / f1):\n";
    for (std::size_t k = 0; k < c; ++k) {
        std::snprintf(buf, sizeof buf, "  %s\t%.4f\t%.4f\t%.4f\n", class_names[k].c_str(),
                      r.precision[k], r.recall[k], r.f1[k]);
        out += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "accuracy\t%.4f\nmacro precision\t%.4f\nmacro recall\t%.4f\nmacro f1\t%.4f\n",
                  r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1);
    out += buf;
    return out;
}

}  // namespace crab

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "udma/taxonomy.hpp"

namespace udma {

// Row = ground truth, column = prediction. Points whose truth is ignore_id
// are skipped entirely; predictions of ignore_id land in an extra overflow
// column so they still count as wrong.
class ConfusionMatrix {
public:
    ConfusionMatrix(std::size_t num_classes, ClassId ignore_id);

    void accumulate(std::span<const ClassId> truth, std::span<const ClassId> pred);
    void merge(const ConfusionMatrix& other);

    std::int64_t at(std::size_t truth_class, std::size_t pred_class) const {
        return counts_[truth_class * (num_classes_ + 1) + pred_class];
    }
    std::size_t num_classes() const { return num_classes_; }
    std::int64_t total() const;

private:
    std::size_t num_classes_;
    ClassId ignore_id_;
    std::vector<std::int64_t> counts_;  // C x (C+1), last column = ignored predictions
};

struct IouReport {
    std::vector<double> iou;       // per class; 0 for absent classes
    std::vector<bool> present;     // false when TP+FP+FN = 0
    double miou = 0.0;             // mean over present classes
};

// IoU_c = TP/(TP+FP+FN); absent classes are excluded from the mean.
IouReport miou(const ConfusionMatrix& cm);

// Per-class table plus the mean, names drawn from the taxonomy.
std::string iou_table(const IouReport& report, const ClassTaxonomy& taxonomy);
// Single-line structured form for harnesses.
std::string iou_json(const IouReport& report, const ClassTaxonomy& taxonomy);

}  // namespace udma

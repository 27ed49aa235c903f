#include "udma/evaluation.hpp"

#include <iomanip>
#include <numeric>
#include <sstream>

#include "udma/errors.hpp"

namespace udma {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, ClassId ignore_id)
    : num_classes_(num_classes),
      ignore_id_(ignore_id),
      counts_(num_classes * (num_classes + 1), 0) {}

void ConfusionMatrix::accumulate(std::span<const ClassId> truth,
                                 std::span<const ClassId> pred) {
    if (truth.size() != pred.size())
        throw ShapeError("confusion accumulate: " + std::to_string(truth.size()) +
                         " truth labels vs " + std::to_string(pred.size()) + " predictions");
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ClassId t = truth[i];
        if (t == ignore_id_) continue;
        if (t >= num_classes_)
            throw DomainError("truth class " + std::to_string(t) + " outside the " +
                              std::to_string(num_classes_) + "-class taxonomy");
        ClassId p = pred[i];
        std::size_t col;
        if (p == ignore_id_) col = num_classes_;  // overflow column
        else if (p >= num_classes_)
            throw DomainError("predicted class " + std::to_string(p) + " outside the " +
                              std::to_string(num_classes_) + "-class taxonomy");
        else col = p;
        ++counts_[t * (num_classes_ + 1) + col];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_)
        throw ShapeError("cannot merge confusion matrices of different class counts");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::int64_t ConfusionMatrix::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
}

IouReport miou(const ConfusionMatrix& cm) {
    std::size_t c_count = cm.num_classes();
    IouReport rep;
    rep.iou.assign(c_count, 0.0);
    rep.present.assign(c_count, false);
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < c_count; ++c) {
        std::int64_t tp = cm.at(c, c);
        std::int64_t row = 0, col = 0;
        for (std::size_t p = 0; p <= c_count; ++p) row += cm.at(c, p);
        for (std::size_t t = 0; t < c_count; ++t) col += cm.at(t, c);
        std::int64_t denom = row + col - tp;  // TP+FP+FN
        if (denom == 0) continue;
        rep.present[c] = true;
        rep.iou[c] = static_cast<double>(tp) / static_cast<double>(denom);
        sum += rep.iou[c];
        ++present;
    }
    if (present == 0) throw DomainError("mIoU undefined: every class is absent");
    rep.miou = sum / static_cast<double>(present);
    return rep;
}

std::string iou_table(const IouReport& report, const ClassTaxonomy& taxonomy) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    for (std::size_t c = 0; c < report.iou.size(); ++c) {
        os << std::setw(12) << taxonomy.name_of(static_cast<ClassId>(c)) << "  ";
        if (report.present[c]) os << report.iou[c] << '\n';
        else os << "absent\n";
    }
    os << std::setw(12) << "mIoU" << "  " << report.miou << '\n';
    return os.str();
}

std::string iou_json(const IouReport& report, const ClassTaxonomy& taxonomy) {
    std::ostringstream os;
    os << std::setprecision(17) << "{\"miou\":" << report.miou << ",\"classes\":{";
    for (std::size_t c = 0; c < report.iou.size(); ++c) {
        os << (c ? "," : "") << '"' << taxonomy.name_of(static_cast<ClassId>(c)) << "\":";
        if (report.present[c]) os << report.iou[c];
        else os << "null";
    }
    os << "}}";
    return os.str();
}

}  // namespace udma

#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace udma {

using ClassId = std::uint16_t;

// Coarse component tags produced by pre-segmentation and used to gate
// instance alignment and weak labels.
enum class PriorCategory : std::uint8_t { Car = 0, Ground = 1, Wall = 2, Unknown = 3 };

inline constexpr int kNumPriorCategories = 3;  // car, ground, wall

const char* to_string(PriorCategory c);

// The class set shared by every module. The six evaluation classes are
// fixed; the raw-id mapping used by label files is configurable.
class ClassTaxonomy {
public:
    struct Entry {
        std::string name;
        ClassId id;
    };

    // road, sidewalk, building, vegetation, terrain, car; ignore = C.
    static ClassTaxonomy evaluation_default();

    const std::vector<Entry>& classes() const { return classes_; }
    std::size_t num_classes() const { return classes_.size(); }
    ClassId ignore_id() const { return ignore_id_; }

    const std::set<ClassId>& prior_classes(PriorCategory cat) const;
    // Category containing a class id, or Unknown if the id is unmapped.
    PriorCategory category_of(ClassId id) const;

    const std::string& name_of(ClassId id) const;
    ClassId id_of(const std::string& name) const;

    // Raw file id -> train id table. Total: unmapped raw ids resolve to
    // ignore_id.
    void set_raw_mapping(const std::map<std::uint16_t, ClassId>& raw_to_train);
    const std::map<std::uint16_t, ClassId>& raw_mapping() const { return raw_to_train_; }
    ClassId remap_raw(std::uint16_t raw) const;

private:
    ClassTaxonomy() = default;
    void validate() const;

    std::vector<Entry> classes_;
    ClassId ignore_id_ = 0;
    std::set<ClassId> prior_[kNumPriorCategories];
    std::map<std::uint16_t, ClassId> raw_to_train_;
};

}  // namespace udma

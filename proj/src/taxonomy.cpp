#include "udma/taxonomy.hpp"

#include <stdexcept>

#include "udma/errors.hpp"

namespace udma {

const char* to_string(PriorCategory c) {
    switch (c) {
        case PriorCategory::Car: return "car";
        case PriorCategory::Ground: return "ground";
        case PriorCategory::Wall: return "wall";
        case PriorCategory::Unknown: return "unknown";
    }
    return "?";
}

ClassTaxonomy ClassTaxonomy::evaluation_default() {
    ClassTaxonomy t;
    t.classes_ = {{"road", 0},    {"sidewalk", 1}, {"building", 2},
                  {"vegetation", 3}, {"terrain", 4}, {"car", 5}};
    t.ignore_id_ = static_cast<ClassId>(t.classes_.size());
    t.prior_[static_cast<int>(PriorCategory::Ground)] = {0, 1, 4};
    t.prior_[static_cast<int>(PriorCategory::Wall)] = {2, 3};
    t.prior_[static_cast<int>(PriorCategory::Car)] = {5};
    // SemanticKITTI raw ids for the six classes. Overridable via config.
    t.raw_to_train_ = {{40, 0}, {48, 1}, {50, 2}, {70, 3}, {72, 4}, {10, 5}};
    t.validate();
    return t;
}

void ClassTaxonomy::validate() const {
    for (const char* required :
         {"road", "sidewalk", "building", "vegetation", "terrain", "car"}) {
        bool found = false;
        for (const auto& e : classes_)
            if (e.name == required) found = true;
        if (!found) throw ConfigError("taxonomy missing required class: " + std::string(required));
    }
    for (int a = 0; a < kNumPriorCategories; ++a)
        for (int b = a + 1; b < kNumPriorCategories; ++b)
            for (ClassId id : prior_[a])
                if (prior_[b].count(id))
                    throw ConfigError("prior categories overlap on class id " +
                                      std::to_string(id));
}

const std::set<ClassId>& ClassTaxonomy::prior_classes(PriorCategory cat) const {
    return prior_[static_cast<int>(cat)];
}

PriorCategory ClassTaxonomy::category_of(ClassId id) const {
    for (int c = 0; c < kNumPriorCategories; ++c)
        if (prior_[c].count(id)) return static_cast<PriorCategory>(c);
    return PriorCategory::Unknown;
}

const std::string& ClassTaxonomy::name_of(ClassId id) const {
    for (const auto& e : classes_)
        if (e.id == id) return e.name;
    throw ConfigError("unknown class id " + std::to_string(id));
}

ClassId ClassTaxonomy::id_of(const std::string& name) const {
    for (const auto& e : classes_)
        if (e.name == name) return e.id;
    throw ConfigError("unknown class name " + name);
}

void ClassTaxonomy::set_raw_mapping(const std::map<std::uint16_t, ClassId>& raw_to_train) {
    for (const auto& [raw, train] : raw_to_train)
        if (train >= num_classes())
            throw ConfigError("raw mapping " + std::to_string(raw) + " -> " +
                              std::to_string(train) + " exceeds class count " +
                              std::to_string(num_classes()));
    raw_to_train_ = raw_to_train;
}

ClassId ClassTaxonomy::remap_raw(std::uint16_t raw) const {
    auto it = raw_to_train_.find(raw);
    return it == raw_to_train_.end() ? ignore_id_ : it->second;
}

}  // namespace udma

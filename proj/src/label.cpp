#include "rac/label.hpp"

namespace rac {

std::string_view to_string(Label label) noexcept {
    switch (label) {
        case Label::Unclassified: return "Unclassified";
        case Label::Confidential: return "Confidential";
        case Label::Secret: return "Secret";
    }
    return "?";
}

std::optional<Label> label_from_name(std::string_view name) noexcept {
    for (Label label : kAllLabels) {
        if (to_string(label) == name) {
            return label;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Provenance provenance) noexcept {
    return provenance == Provenance::Original ? "original" : "synthetic";
}

std::string_view to_string(Partition partition) noexcept {
    switch (partition) {
        case Partition::Train: return "train";
        case Partition::Test: return "test";
        case Partition::Unassigned: return "unassigned";
    }
    return "?";
}

std::optional<Provenance> provenance_from_string(std::string_view text) noexcept {
    if (text == "original") return Provenance::Original;
    if (text == "synthetic") return Provenance::Synthetic;
    return std::nullopt;
}

std::optional<Partition> partition_from_string(std::string_view text) noexcept {
    if (text == "train") return Partition::Train;
    if (text == "test") return Partition::Test;
    if (text == "unassigned") return Partition::Unassigned;
    return std::nullopt;
}

}  // namespace rac

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "rac/label.hpp"

// Machine-readable lines embedded in rendered prompts. The prompt builders
// write them and the local mock model reads them back.
namespace rac::tags {

/// "EXAMPLE [i] | LABEL: <label> | SIM: <similarity, 4 decimals>" (i is 1-based).
std::string exemplar_header(std::size_t index, Label label, double similarity);

struct ExemplarTag {
    std::size_t index = 0;
    Label label = Label::Unclassified;
    double similarity = 0.0;
};

std::optional<ExemplarTag> parse_exemplar_header(std::string_view line);

/// "### EXAMPLES (n=<count>)" heads the exemplar section when count > 0.
std::string examples_section_header(std::size_t count);
std::optional<std::size_t> parse_examples_section_header(std::string_view line);

/// Heads the reference block of an augmentation prompt.
inline constexpr std::string_view kReferenceMarker = "### REFERENCE DOCUMENTS";
/// "REFERENCE [i]" precedes each reference body in an augmentation prompt.
std::string reference_header(std::size_t index);
inline constexpr std::string_view kReferenceHeaderPrefix = "REFERENCE [";
inline constexpr std::string_view kGenerationMarker = "### GENERATION TASK";

inline constexpr std::string_view kOutputFormatLine = "LABEL: <Unclassified|Confidential|Secret>";

}  // namespace rac::tags

#include "rac/prompt_tags.hpp"

#include <charconv>
#include <cstdlib>

#include <fmt/format.h>

#include "rac/text.hpp"

namespace rac::tags {

std::string exemplar_header(std::size_t index, Label label, double similarity) {
    return fmt::format("EXAMPLE [{}] | LABEL: {} | SIM: {:.4f}", index, to_string(label), similarity);
}

namespace {

bool consume(std::string_view& s, std::string_view token) {
    if (s.substr(0, token.size()) != token) return false;
    s.remove_prefix(token.size());
    return true;
}

std::optional<std::size_t> read_size(std::string_view& s) {
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr == s.data()) return std::nullopt;
    s.remove_prefix(static_cast<std::size_t>(ptr - s.data()));
    return value;
}

}  // namespace

std::optional<ExemplarTag> parse_exemplar_header(std::string_view line) {
    line = text::trim(line);
    ExemplarTag tag;
    if (!consume(line, "EXAMPLE [")) return std::nullopt;
    auto index = read_size(line);
    if (!index || !consume(line, "] | LABEL: ")) return std::nullopt;
    tag.index = *index;
    const auto bar = line.find(" | SIM: ");
    if (bar == std::string_view::npos) return std::nullopt;
    auto label = label_from_name(line.substr(0, bar));
    if (!label) return std::nullopt;
    tag.label = *label;
    line.remove_prefix(bar + 8);
    // strtod needs a terminated buffer; the numeric field is short.
    const std::string number(text::trim(line));
    if (number.empty()) return std::nullopt;
    char* end = nullptr;
    tag.similarity = std::strtod(number.c_str(), &end);
    if (end != number.c_str() + number.size()) return std::nullopt;
    return tag;
}

std::string examples_section_header(std::size_t count) { return fmt::format("### EXAMPLES (n={})", count); }

std::optional<std::size_t> parse_examples_section_header(std::string_view line) {
    line = text::trim(line);
    if (!consume(line, "### EXAMPLES (n=")) return std::nullopt;
    auto n = read_size(line);
    if (!n || line != ")") return std::nullopt;
    return n;
}

std::string reference_header(std::size_t index) { return fmt::format("REFERENCE [{}]", index); }

}  // namespace rac::tags

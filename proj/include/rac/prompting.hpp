#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rac/corpus.hpp"
#include "rac/retrieval.hpp"

namespace rac::prompting {

inline constexpr std::string_view kTruncationMarker = "\xE2\x80\xA6[truncated]";  // "…[truncated]"

/// Section placeholders a template may use; each must appear exactly once.
inline constexpr std::array<std::string_view, 6> kPlaceholders{"{{task}}",  "{{definitions}}", "{{examples}}",
                                                               "{{rules}}", "{{query}}",       "{{output_format}}"};

std::string default_template();

struct PromptConfig {
    bool include_label_definitions = true;
    std::map<Label, std::string> label_definitions;
    std::string task_instructions;
    std::vector<std::string> decision_rules;
    std::size_t max_exemplar_chars = 4000;
    std::string template_text = default_template();

    /// Defaults for every field (definitions, rules, task text, template).
    PromptConfig();

    /// Throws ConfigError.
    void validate() const;
    /// Reads a UTF-8 template file and validates its placeholders.
    void load_template(const std::filesystem::path& path);
};

nlohmann::json to_json(const PromptConfig& cfg);
/// Relative template paths resolve against `base_dir`.
PromptConfig prompt_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});

/// Retrieved-label summary shown to the model when no exemplars are rendered (rac 0-shot).
struct RetrievalCue {
    std::array<std::size_t, kNumLabels> label_counts{};
    std::optional<Label> top_label;
    double top_similarity = 0.0;

    std::size_t considered() const noexcept;
};

RetrievalCue make_retrieval_cue(const std::vector<retrieval::ScoredHit>& ranked);

struct ManifestEntry {
    std::string doc_id;
    Label label = Label::Unclassified;
    double similarity = 0.0;
    std::string tag;  // the rendered "EXAMPLE [i] | ..." header line

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct ClassificationPrompt {
    std::string text;
    std::vector<ManifestEntry> manifest;
    std::string mode;
};

/// Pure rendering: task cues, definitions (if enabled), exemplars, decision rules,
/// the query document, then the output-format instruction.
ClassificationPrompt build_prompt(const corpus::Document& query_doc, const std::vector<retrieval::Exemplar>& exemplars,
                                  const PromptConfig& cfg, std::string mode = {},
                                  const std::optional<RetrievalCue>& cue = std::nullopt);

/// First "LABEL:" line (case-insensitive), otherwise the single label name in the
/// text. Throws Unparseable or AmbiguousLabelError; never guesses.
Label parse_response(std::string_view text);

/// `body` cut to `max_chars` code points with the truncation marker appended.
std::string truncate_body(std::string_view body, std::size_t max_chars);

}  // namespace rac::prompting

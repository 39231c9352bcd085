#include "rac/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "rac/error.hpp"
#include "rac/prompt_tags.hpp"
#include "rac/text.hpp"

namespace rac::prompting {

using nlohmann::json;

std::string default_template() {
    return "{{task}}\n\n{{definitions}}\n\n{{examples}}\n\n{{rules}}\n\n{{query}}\n\n{{output_format}}\n";
}

PromptConfig::PromptConfig() {
    task_instructions =
        "You assign a confidentiality level to a diplomatic cable. Choose exactly one of: Unclassified, "
        "Confidential, Secret. Read the structured fields first (title, date, sender, recipient, caveat "
        "markings), then the body.";
    label_definitions = {
        {Label::Unclassified,
         "Information whose release would not be expected to damage national security: routine "
         "administration, public statements, open-source reporting."},
        {Label::Confidential,
         "Information whose unauthorized disclosure could reasonably be expected to cause damage to "
         "national security, such as candid diplomatic exchanges or sensitive but limited assessments."},
        {Label::Secret,
         "Information whose unauthorized disclosure could reasonably be expected to cause serious damage "
         "to national security, such as intelligence sources, military plans, or high-level negotiating "
         "positions."},
    };
    decision_rules = {
        "Base the decision on the document's content and schema cues, not on its length.",
        "When the examples disagree, weigh the most similar example of each label against the definitions.",
        "If the document meets the definition of a higher level, assign the higher level.",
        "Answer with a single label using the exact output format below.",
    };
}

void PromptConfig::validate() const {
    if (max_exemplar_chars < 1) throw Error(ErrorCode::ConfigError, "max_exemplar_chars must be >= 1");
    if (include_label_definitions) {
        for (Label l : kAllLabels) {
            const auto it = label_definitions.find(l);
            if (it == label_definitions.end() || text::trim(it->second).empty()) {
                throw Error(ErrorCode::ConfigError, fmt::format("missing label definition for {}", to_string(l)));
            }
        }
    }
    for (auto placeholder : kPlaceholders) {
        std::size_t count = 0;
        for (auto pos = template_text.find(placeholder); pos != std::string::npos;
             pos = template_text.find(placeholder, pos + 1)) {
            ++count;
        }
        if (count != 1) {
            throw Error(ErrorCode::ConfigError,
                        fmt::format("prompt template must contain {} exactly once (found {})", placeholder, count));
        }
    }
}

void PromptConfig::load_template(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::FileNotFound, path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    template_text = ss.str();
    validate();
}

json to_json(const PromptConfig& cfg) {
    json defs = json::object();
    for (const auto& [label, textv] : cfg.label_definitions) defs[std::string(to_string(label))] = textv;
    return json{{"include_label_definitions", cfg.include_label_definitions},
                {"label_definitions", defs},
                {"task_instructions", cfg.task_instructions},
                {"decision_rules", cfg.decision_rules},
                {"max_exemplar_chars", cfg.max_exemplar_chars},
                {"template", cfg.template_text}};
}

PromptConfig prompt_config_from_json(const json& j, const std::filesystem::path& base_dir) {
    PromptConfig cfg;
    try {
        cfg.include_label_definitions = j.value("include_label_definitions", cfg.include_label_definitions);
        if (j.contains("label_definitions")) {
            for (const auto& [name, value] : j.at("label_definitions").items()) {
                auto label = label_from_name(name);
                if (!label) throw Error(ErrorCode::ConfigError, fmt::format("unknown label '{}' in definitions", name));
                cfg.label_definitions[*label] = value.get<std::string>();
            }
        }
        cfg.task_instructions = j.value("task_instructions", cfg.task_instructions);
        if (j.contains("decision_rules")) cfg.decision_rules = j.at("decision_rules").get<std::vector<std::string>>();
        cfg.max_exemplar_chars = j.value("max_exemplar_chars", cfg.max_exemplar_chars);
        cfg.template_text = j.value("template", cfg.template_text);
        if (j.contains("template_path")) {
            std::filesystem::path p = j.at("template_path").get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            cfg.load_template(p);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, fmt::format("prompt config: {}", e.what()));
    }
    cfg.validate();
    return cfg;
}

std::size_t RetrievalCue::considered() const noexcept {
    std::size_t n = 0;
    for (auto c : label_counts) n += c;
    return n;
}

RetrievalCue make_retrieval_cue(const std::vector<retrieval::ScoredHit>& ranked) {
    RetrievalCue cue;
    for (const auto& s : ranked) ++cue.label_counts[index_of(s.hit.metadata.label)];
    if (!ranked.empty()) {
        cue.top_label = ranked.front().hit.metadata.label;
        cue.top_similarity = ranked.front().hit.similarity;
    }
    return cue;
}

std::string truncate_body(std::string_view body, std::size_t max_chars) {
    if (text::utf8_length(body) <= max_chars) return std::string(body);
    std::string out(text::utf8_prefix(body, max_chars));
    out += kTruncationMarker;
    return out;
}

namespace {

std::string render_task(const PromptConfig& cfg) { return "### TASK\n" + cfg.task_instructions; }

std::string render_definitions(const PromptConfig& cfg) {
    std::string out = "### LABEL DEFINITIONS";
    for (Label l : kAllLabels) out += fmt::format("\n- {}: {}", to_string(l), cfg.label_definitions.at(l));
    return out;
}

std::string render_rules(const PromptConfig& cfg, const std::optional<RetrievalCue>& cue) {
    std::string out = "### DECISION RULES";
    std::size_t n = 0;
    for (const auto& rule : cfg.decision_rules) out += fmt::format("\n{}. {}", ++n, rule);
    if (cue && cue->considered() > 0) {
        out += fmt::format(
            "\n{}. Retrieved evidence: the {} most relevant labeled documents are Unclassified={}, Confidential={}, "
            "Secret={}; the closest is labeled {} (similarity {:.4f}).",
            ++n, cue->considered(), cue->label_counts[0], cue->label_counts[1], cue->label_counts[2],
            to_string(*cue->top_label), cue->top_similarity);
    }
    return out;
}

std::string render_query(const corpus::Document& doc) {
    std::string out = "### DOCUMENT TO CLASSIFY";
    if (!doc.title.empty()) out += "\nTITLE: " + doc.title;
    if (doc.date) out += "\nDATE: " + *doc.date;
    if (doc.sender) out += "\nFROM: " + *doc.sender;
    if (doc.recipient) out += "\nTO: " + *doc.recipient;
    out += "\nBODY:\n" + doc.body;
    return out;
}

std::string render_output_format() {
    return fmt::format("### OUTPUT FORMAT\nRespond with exactly one line:\n{}", tags::kOutputFormatLine);
}

// Substitutes placeholders; a placeholder alone on a line whose section is
// empty removes that line and the blank line that follows it.
std::string fill_template(const std::string& tmpl, const std::map<std::string_view, std::string>& sections) {
    std::string out;
    std::istringstream in(tmpl);
    std::string line;
    bool skip_blank = false;
    bool first = true;
    while (std::getline(in, line)) {
        const auto trimmed = text::trim(line);
        if (skip_blank && trimmed.empty()) {
            skip_blank = false;
            continue;
        }
        skip_blank = false;
        if (auto it = sections.find(trimmed); it != sections.end() && it->second.empty()) {
            skip_blank = true;
            continue;
        }
        for (const auto& [placeholder, content] : sections) {
            if (auto pos = line.find(placeholder); pos != std::string::npos) line.replace(pos, placeholder.size(), content);
        }
        if (!first) out.push_back('\n');
        out += line;
        first = false;
    }
    out.push_back('\n');
    return out;
}

}  // namespace

ClassificationPrompt build_prompt(const corpus::Document& query_doc, const std::vector<retrieval::Exemplar>& exemplars,
                                  const PromptConfig& cfg, std::string mode, const std::optional<RetrievalCue>& cue) {
    ClassificationPrompt prompt;
    prompt.mode = std::move(mode);

    std::string examples;
    if (!exemplars.empty()) {
        examples = tags::examples_section_header(exemplars.size());
        for (std::size_t i = 0; i < exemplars.size(); ++i) {
            const auto& ex = exemplars[i];
            auto tag = tags::exemplar_header(i + 1, ex.label, ex.similarity);
            examples += fmt::format("\n{}\n{}", tag, truncate_body(ex.body, cfg.max_exemplar_chars));
            if (i + 1 < exemplars.size()) examples.push_back('\n');
            prompt.manifest.push_back({ex.doc_id, ex.label, ex.similarity, std::move(tag)});
        }
    }

    const std::map<std::string_view, std::string> sections{
        {"{{task}}", render_task(cfg)},
        {"{{definitions}}", cfg.include_label_definitions ? render_definitions(cfg) : std::string()},
        {"{{examples}}", examples},
        {"{{rules}}", render_rules(cfg, cue)},
        {"{{query}}", render_query(query_doc)},
        {"{{output_format}}", render_output_format()},
    };
    prompt.text = fill_template(cfg.template_text, sections);
    return prompt;
}

namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string_view strip_decoration(std::string_view s) {
    constexpr std::string_view junk = " \t*`\"'#>_-.:;,!()[]";
    const auto b = s.find_first_not_of(junk);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(junk);
    return s.substr(b, e - b + 1);
}

std::string excerpt(std::string_view text) {
    auto t = text::trim(text);
    if (t.size() <= 80) return std::string(t);
    return std::string(t.substr(0, 80)) + "...";
}

}  // namespace

Label parse_response(std::string_view text) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto eol = text.find('\n', pos);
        auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        line = text::trim(line);
        const auto start = line.find_first_not_of("*`#> -");
        if (start == std::string_view::npos) continue;
        line = line.substr(start);
        if (!text::starts_with_icase(line, "label")) continue;
        auto rest = text::trim(line.substr(5));
        if (!rest.empty() && rest.front() == '*') rest = text::trim(rest.substr(rest.find_first_not_of('*')));
        if (rest.empty() || rest.front() != ':') continue;
        const auto value = strip_decoration(rest.substr(1));
        if (auto label = corpus::LabelAliases::defaults().try_normalize(value)) return *label;
        throw Error(ErrorCode::Unparseable, fmt::format("LABEL line does not name a label: '{}'", excerpt(line)));
    }

    const auto lower = text::to_lower(text);
    std::vector<std::pair<std::size_t, Label>> mentions;
    for (Label l : kAllLabels) {
        const auto name = text::to_lower(to_string(l));
        for (auto p = lower.find(name); p != std::string::npos; p = lower.find(name, p + 1)) {
            const bool left_ok = p == 0 || !is_word_char(lower[p - 1]);
            const bool right_ok = p + name.size() == lower.size() || !is_word_char(lower[p + name.size()]);
            if (left_ok && right_ok) {
                mentions.emplace_back(p, l);
                break;
            }
        }
    }
    if (mentions.empty()) throw Error(ErrorCode::Unparseable, fmt::format("no label in reply '{}'", excerpt(text)));
    if (mentions.size() > 1) {
        std::sort(mentions.begin(), mentions.end());
        std::vector<std::string> found;
        for (const auto& [p, l] : mentions) found.emplace_back(to_string(l));
        throw AmbiguousLabelError(std::move(found));
    }
    return mentions.front().second;
}

}  // namespace rac::prompting

#include "rac/error.hpp"

#include <fmt/format.h>

namespace rac {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::FileNotFound: return "FileNotFound";
        case ErrorCode::MalformedRecord: return "MalformedRecord";
        case ErrorCode::DuplicateId: return "DuplicateId";
        case ErrorCode::UnknownLabel: return "UnknownLabel";
        case ErrorCode::EmptyText: return "EmptyText";
        case ErrorCode::ZeroVector: return "ZeroVector";
        case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::UnparseablePrompt: return "UnparseablePrompt";
        case ErrorCode::DuplicateDocId: return "DuplicateDocId";
        case ErrorCode::EmptyIndex: return "EmptyIndex";
        case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
        case ErrorCode::CorruptFile: return "CorruptFile";
        case ErrorCode::Unparseable: return "Unparseable";
        case ErrorCode::AmbiguousLabel: return "AmbiguousLabel";
        case ErrorCode::PoolTooSmall: return "PoolTooSmall";
        case ErrorCode::GenerationStalled: return "GenerationStalled";
        case ErrorCode::MissingClass: return "MissingClass";
        case ErrorCode::UnpairedRuns: return "UnpairedRuns";
        case ErrorCode::ComponentMissing: return "ComponentMissing";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::UsageError: return "UsageError";
        case ErrorCode::ReindexInProgress: return "ReindexInProgress";
    }
    return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), message)), code_(code) {}

namespace {

std::string describe(const std::vector<RecordIssue>& issues) {
    if (issues.empty()) {
        return "no issues";
    }
    const auto& first = issues.front();
    std::string msg = fmt::format("line {}: {}", first.line, first.cause);
    if (issues.size() > 1) {
        msg += fmt::format(" (and {} more)", issues.size() - 1);
    }
    return msg;
}

}  // namespace

CorpusError::CorpusError(std::vector<RecordIssue> issues)
    : Error(issues.empty() ? ErrorCode::MalformedRecord : issues.front().code, describe(issues)),
      issues_(std::move(issues)) {}

CorruptFileError::CorruptFileError(std::size_t offset, const std::string& what)
    : Error(ErrorCode::CorruptFile, fmt::format("at byte offset {}: {}", offset, what)), offset_(offset) {}

AmbiguousLabelError::AmbiguousLabelError(std::vector<std::string> found)
    : Error(ErrorCode::AmbiguousLabel, fmt::format("multiple labels mentioned: {}", fmt::join(found, ", "))),
      found_(std::move(found)) {}

}  // namespace rac

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rac {

enum class ErrorCode {
    InvalidArgument,
    FileNotFound,
    MalformedRecord,
    DuplicateId,
    UnknownLabel,
    EmptyText,
    ZeroVector,
    ProviderUnavailable,
    DimensionMismatch,
    UnparseablePrompt,
    DuplicateDocId,
    EmptyIndex,
    FormatVersionMismatch,
    CorruptFile,
    Unparseable,
    AmbiguousLabel,
    PoolTooSmall,
    GenerationStalled,
    MissingClass,
    UnpairedRuns,
    ComponentMissing,
    ConfigError,
    UsageError,
    ReindexInProgress,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base exception for everything the library throws on purpose.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message);

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// One rejected input record (1-based line number in the source file).
struct RecordIssue {
    std::size_t line = 0;
    ErrorCode code = ErrorCode::MalformedRecord;
    std::string cause;
};

/// Raised by strict corpus parsing; carries every issue found, not just the first.
class CorpusError : public Error {
public:
    explicit CorpusError(std::vector<RecordIssue> issues);

    const std::vector<RecordIssue>& issues() const noexcept { return issues_; }

private:
    std::vector<RecordIssue> issues_;
};

class CorruptFileError : public Error {
public:
    CorruptFileError(std::size_t offset, const std::string& what);

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class AmbiguousLabelError : public Error {
public:
    explicit AmbiguousLabelError(std::vector<std::string> found);

    const std::vector<std::string>& found() const noexcept { return found_; }

private:
    std::vector<std::string> found_;
};

}  // namespace rac

#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// Small text helpers shared by every module. A token is a maximal run of
// non-whitespace bytes (ASCII whitespace only).
namespace rac::text {

std::string_view trim(std::string_view s) noexcept;
std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);

std::vector<std::string_view> split_whitespace(std::string_view s);
/// Whitespace tokens, ASCII-lowercased.
std::vector<std::string> lower_tokens(std::string_view s);
std::size_t count_tokens(std::string_view s) noexcept;

/// Lowercase and collapse whitespace runs to one space, trimmed.
std::string normalize_whitespace_lower(std::string_view s);

/// Number of UTF-8 code points (continuation bytes are not counted).
std::size_t utf8_length(std::string_view s) noexcept;
/// First `max_chars` code points of `s`; never splits a multi-byte sequence.
std::string_view utf8_prefix(std::string_view s, std::size_t max_chars) noexcept;

bool starts_with_icase(std::string_view s, std::string_view prefix) noexcept;

}  // namespace rac::text

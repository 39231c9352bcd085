#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace rac {

/// Confidentiality level. The ordering is used for reporting only.
enum class Label : std::uint8_t { Unclassified = 0, Confidential = 1, Secret = 2 };

inline constexpr std::size_t kNumLabels = 3;
inline constexpr std::array<Label, kNumLabels> kAllLabels{Label::Unclassified, Label::Confidential, Label::Secret};

constexpr std::size_t index_of(Label label) noexcept { return static_cast<std::size_t>(label); }

std::string_view to_string(Label label) noexcept;
/// Exact canonical name match ("Secret"); use corpus::LabelAliases for raw markings.
std::optional<Label> label_from_name(std::string_view name) noexcept;

enum class Provenance : std::uint8_t { Original, Synthetic };
enum class Partition : std::uint8_t { Train, Test, Unassigned };

std::string_view to_string(Provenance provenance) noexcept;
std::string_view to_string(Partition partition) noexcept;
std::optional<Provenance> provenance_from_string(std::string_view text) noexcept;
std::optional<Partition> partition_from_string(std::string_view text) noexcept;

}  // namespace rac

// Apache License, Version 2.0, refer to LICENSE.txt
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace symconj {

enum class SupportKind { kReal, kNonnegative, kUnitInterval, kSimplex, kInteger, kBinary };

/// Declared domain of a variable. INTEGER carries the category count.
struct SupportType {
  SupportKind kind = SupportKind::kReal;
  std::int64_t cardinality = 0;

  static SupportType real() { return {SupportKind::kReal, 0}; }
  static SupportType nonnegative() { return {SupportKind::kNonnegative, 0}; }
  static SupportType unit_interval() { return {SupportKind::kUnitInterval, 0}; }
  static SupportType simplex() { return {SupportKind::kSimplex, 0}; }
  static SupportType integer(std::int64_t k) { return {SupportKind::kInteger, k}; }
  static SupportType binary() { return {SupportKind::kBinary, 0}; }

  bool operator==(const SupportType&) const = default;
};

std::string to_string(SupportType s);
/// Accepts "real", "nonnegative", "unit_interval", "simplex", "binary",
/// "integer" and "integer(K)", case-insensitively.
std::optional<SupportType> parse_support(std::string_view text);

}  // namespace symconj

// Apache License, Version 2.0, refer to LICENSE.txt
#include "symconj/support.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

namespace symconj {

std::string to_string(SupportType s) {
  switch (s.kind) {
    case SupportKind::kReal: return "real";
    case SupportKind::kNonnegative: return "nonnegative";
    case SupportKind::kUnitInterval: return "unit_interval";
    case SupportKind::kSimplex: return "simplex";
    case SupportKind::kInteger: return "integer(" + std::to_string(s.cardinality) + ")";
    case SupportKind::kBinary: return "binary";
  }
  return "?";
}

std::optional<SupportType> parse_support(std::string_view text) {
  std::string t(text);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "real") return SupportType::real();
  if (t == "nonnegative") return SupportType::nonnegative();
  if (t == "unit_interval") return SupportType::unit_interval();
  if (t == "simplex") return SupportType::simplex();
  if (t == "binary") return SupportType::binary();
  if (t == "integer") return SupportType::integer(0);
  if (t.starts_with("integer(") && t.ends_with(")")) {
    std::int64_t k = 0;
    const char* first = t.data() + 8;
    const char* last = t.data() + t.size() - 1;
    auto [ptr, ec] = std::from_chars(first, last, k);
    if (ec != std::errc() || ptr != last || k < 1) return std::nullopt;
    return SupportType::integer(k);
  }
  return std::nullopt;
}

}  // namespace symconj

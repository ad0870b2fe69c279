#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace mtf {

/// Seconds since 1970-01-01T00:00:00Z for a proleptic Gregorian UTC date.
std::int64_t utc_seconds(int year, unsigned month, unsigned day, unsigned hour = 0, unsigned minute = 0,
                         unsigned second = 0);

/// Parses "YYYY-MM-DDTHH:MM:SS" with an optional trailing "Z".
std::optional<std::int64_t> parse_iso8601(std::string_view text);

/// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_iso8601(std::int64_t seconds);

}  // namespace mtf

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

// Wall-clock timestamps are treated as UTC with no zone conversion. Hours are
// counted from 1970-01-01T00:00.
namespace mgc::timeutil {

// "YYYY-MM-DD HH:MM:SS", "YYYY-MM-DDTHH:MM:SS" (optional fractional seconds
// and trailing 'Z'), or a bare "YYYY-MM-DD". Returns seconds since epoch.
std::int64_t parse_datetime(std::string_view text);

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline std::int64_t hour_of(std::int64_t seconds) { return floor_div(seconds, 3600); }

// "YYYY-MM-DDTHH:00:00"
std::string format_hour(std::int64_t hour);

// 0 = Monday ... 6 = Sunday
int weekday_of_hour(std::int64_t hour);

}  // namespace mgc::timeutil

#include "mgc/timeutil.hpp"

#include <chrono>
#include <cstdio>

#include "mgc/errors.hpp"

namespace mgc::timeutil {

namespace chr = std::chrono;

namespace {

bool read_int(std::string_view s, std::size_t pos, std::size_t len, int& out) {
  if (pos + len > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = v;
  return true;
}

}  // namespace

std::int64_t parse_datetime(std::string_view text) {
  while (!text.empty() && (text.back() == ' ' || text.back() == '\r' || text.back() == 'Z'))
    text.remove_suffix(1);
  while (!text.empty() && text.front() == ' ') text.remove_prefix(1);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
  const bool date_ok = read_int(text, 0, 4, y) && text.size() >= 10 && text[4] == '-' &&
                       read_int(text, 5, 2, mo) && text[7] == '-' && read_int(text, 8, 2, d);
  bool ok = date_ok;
  if (ok && text.size() > 10) {
    ok = (text[10] == ' ' || text[10] == 'T') && read_int(text, 11, 2, h) && text.size() >= 16 &&
         text[13] == ':' && read_int(text, 14, 2, mi);
    if (ok && text.size() > 16) {
      ok = text[16] == ':' && read_int(text, 17, 2, se);
      if (ok && text.size() > 19) ok = text[19] == '.';
    }
  }
  const chr::year_month_day ymd{chr::year{y}, chr::month{static_cast<unsigned>(mo)},
                                chr::day{static_cast<unsigned>(d)}};
  if (!ok || !ymd.ok() || h > 23 || mi > 59 || se > 60)
    throw ValidationError("cannot parse timestamp '" + std::string(text) + "'");
  const auto days = chr::sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + se;
}

std::string format_hour(std::int64_t hour) {
  const std::int64_t day = floor_div(hour, 24);
  const int h = static_cast<int>(hour - day * 24);
  const chr::year_month_day ymd{chr::sys_days{chr::days{day}}};
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:00:00", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), h);
  return buf;
}

int weekday_of_hour(std::int64_t hour) {
  const chr::weekday wd{chr::sys_days{chr::days{floor_div(hour, 24)}}};
  return static_cast<int>(wd.iso_encoding()) - 1;
}

}  // namespace mgc::timeutil

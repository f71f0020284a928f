#include "rankguard/calendar.hpp"

#include "rankguard/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>

namespace rankguard {
namespace dates {
namespace {

// Civil-calendar conversion (proleptic Gregorian), days since 1970-01-01.
long days_from_civil(long y, unsigned m, unsigned d) {
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

void civil_from_days(long z, long& y, unsigned& m, unsigned& d) {
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y += (m <= 2);
}

void parse_iso(const std::string& iso, long& y, unsigned& m, unsigned& d) {
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
        throw IngestError("malformed ISO date: " + iso);
    }
    auto parse_part = [&](const char* b, const char* e, auto& out) {
        auto [p, ec] = std::from_chars(b, e, out);
        if (ec != std::errc{} || p != e) throw IngestError("malformed ISO date: " + iso);
    };
    int yi = 0;
    unsigned mi = 0, di = 0;
    parse_part(iso.data(), iso.data() + 4, yi);
    parse_part(iso.data() + 5, iso.data() + 7, mi);
    parse_part(iso.data() + 8, iso.data() + 10, di);
    if (mi < 1 || mi > 12 || di < 1 || di > 31) throw IngestError("malformed ISO date: " + iso);
    y = yi;
    m = mi;
    d = di;
}

} // namespace

long to_serial(const std::string& iso) {
    long y;
    unsigned m, d;
    parse_iso(iso, y, m, d);
    return days_from_civil(y, m, d);
}

std::string from_serial(long serial) {
    long y;
    unsigned m, d;
    civil_from_days(serial, y, m, d);
    char buf[11];
    std::snprintf(buf, sizeof(buf), "%04ld-%02u-%02u", y, m, d);
    return std::string(buf);
}

bool is_weekend(long serial) {
    // 1970-01-01 was a Thursday; weekday 0 = Thursday in this encoding.
    const long wd = ((serial % 7) + 7) % 7;
    return wd == 2 || wd == 3; // Saturday, Sunday
}

int month_of(const std::string& iso) {
    long y;
    unsigned m, d;
    parse_iso(iso, y, m, d);
    return static_cast<int>(m);
}

int year_of(const std::string& iso) {
    long y;
    unsigned m, d;
    parse_iso(iso, y, m, d);
    return static_cast<int>(y);
}

std::vector<std::string> business_days(const std::string& start, const std::string& end) {
    const long s = to_serial(start);
    const long e = to_serial(end);
    if (e < s) throw InvalidValue("business_days: end before start");
    std::vector<std::string> out;
    for (long z = s; z <= e; ++z) {
        if (!is_weekend(z)) out.push_back(from_serial(z));
    }
    return out;
}

} // namespace dates

TradingCalendar::TradingCalendar(std::vector<std::string> sorted_dates)
    : dates_(std::move(sorted_dates)) {
    for (std::size_t i = 1; i < dates_.size(); ++i) {
        if (dates_[i - 1] >= dates_[i]) throw DataError("calendar dates not strictly increasing");
    }
}

std::size_t TradingCalendar::position(const std::string& iso) const {
    const auto it = std::lower_bound(dates_.begin(), dates_.end(), iso);
    if (it == dates_.end() || *it != iso) throw DataError("date not in calendar: " + iso);
    return static_cast<std::size_t>(it - dates_.begin());
}

bool TradingCalendar::contains(const std::string& iso) const {
    const auto it = std::lower_bound(dates_.begin(), dates_.end(), iso);
    return it != dates_.end() && *it == iso;
}

std::vector<std::size_t> TradingCalendar::month_start_positions() const {
    std::vector<std::size_t> out;
    int prev_year = -1, prev_month = -1;
    for (std::size_t i = 0; i < dates_.size(); ++i) {
        const int y = dates::year_of(dates_[i]);
        const int m = dates::month_of(dates_[i]);
        if (y != prev_year || m != prev_month) {
            out.push_back(i);
            prev_year = y;
            prev_month = m;
        }
    }
    return out;
}

} // namespace rankguard

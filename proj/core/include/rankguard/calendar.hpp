#pragma once

#include <string>
#include <vector>

namespace rankguard {

// Civil-date helpers over ISO-8601 strings (YYYY-MM-DD). ISO strings compare
// chronologically as plain strings, which the library relies on throughout.
namespace dates {

// Days since 1970-01-01; throws IngestError on malformed input.
[[nodiscard]] long to_serial(const std::string& iso);
[[nodiscard]] std::string from_serial(long serial);
[[nodiscard]] bool is_weekend(long serial);
[[nodiscard]] int month_of(const std::string& iso);  // 1..12
[[nodiscard]] int year_of(const std::string& iso);

// Weekdays (Mon-Fri) in [start, end], both inclusive, as ISO strings.
[[nodiscard]] std::vector<std::string> business_days(const std::string& start,
                                                     const std::string& end);

} // namespace dates

// The trading calendar is the sorted distinct date set of a panel. Positions
// index into it; all lags/windows count trading days, not calendar days.
class TradingCalendar {
public:
    TradingCalendar() = default;
    explicit TradingCalendar(std::vector<std::string> sorted_dates);

    [[nodiscard]] std::size_t size() const { return dates_.size(); }
    [[nodiscard]] const std::string& date(std::size_t pos) const { return dates_.at(pos); }
    [[nodiscard]] const std::vector<std::string>& dates() const { return dates_; }

    // Position of an exact date; throws DataError if absent.
    [[nodiscard]] std::size_t position(const std::string& iso) const;
    [[nodiscard]] bool contains(const std::string& iso) const;

    // Positions of the first trading day of each calendar month.
    [[nodiscard]] std::vector<std::size_t> month_start_positions() const;

private:
    std::vector<std::string> dates_;
};

} // namespace rankguard

#pragma once

#include <cctype>
#include <compare>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>

namespace ecvm {

// All simulator time lives on a virtual clock counted in whole microseconds.
// There is no sub-microsecond state anywhere in the model.
class SimTime {
 public:
  constexpr SimTime() = default;

  static constexpr SimTime zero() { return SimTime{}; }
  static constexpr SimTime us(std::int64_t v) { return SimTime(v); }
  static constexpr SimTime ms(std::int64_t v) { return SimTime(v * 1000); }
  static constexpr SimTime s(std::int64_t v) { return SimTime(v * 1000000); }

  constexpr std::int64_t count() const { return us_; }
  constexpr double seconds() const { return static_cast<double>(us_) / 1e6; }

  constexpr auto operator<=>(const SimTime&) const = default;

  constexpr SimTime operator+(SimTime o) const { return SimTime(us_ + o.us_); }
  constexpr SimTime operator-(SimTime o) const {
    if (o.us_ > us_) throw std::underflow_error("SimTime subtraction below zero");
    return SimTime(us_ - o.us_);
  }
  constexpr SimTime operator*(std::int64_t k) const { return SimTime(us_ * k); }
  constexpr std::int64_t operator/(SimTime o) const { return us_ / o.us_; }
  constexpr SimTime operator%(SimTime o) const { return SimTime(us_ % o.us_); }
  SimTime& operator+=(SimTime o) { return *this = *this + o; }
  SimTime& operator-=(SimTime o) { return *this = *this - o; }

 private:
  constexpr explicit SimTime(std::int64_t v) : us_(v) {
    if (v < 0) throw std::invalid_argument("SimTime cannot be negative");
  }
  std::int64_t us_ = 0;
};

inline SimTime min(SimTime a, SimTime b) { return a < b ? a : b; }
inline SimTime max(SimTime a, SimTime b) { return a < b ? b : a; }

// Duration literals accept a bare integer (microseconds) or a decimal with a
// us/ms/s suffix. Precision finer than one microsecond is rejected rather
// than rounded.
inline SimTime parse_duration(const std::string& text) {
  if (text.empty()) throw std::invalid_argument("empty duration");
  std::size_t pos = 0;
  while (pos < text.size() && (std::isdigit(static_cast<unsigned char>(text[pos])) || text[pos] == '.')) ++pos;
  const std::string number = text.substr(0, pos);
  const std::string suffix = text.substr(pos);
  if (number.empty()) throw std::invalid_argument("duration has no digits: " + text);

  std::int64_t scale = 0;
  if (suffix == "us") scale = 1;
  else if (suffix == "ms") scale = 1000;
  else if (suffix == "s") scale = 1000000;
  else if (suffix.empty()) scale = 1;
  else throw std::invalid_argument("unknown duration suffix '" + suffix + "' in " + text);

  const std::size_t dot = number.find('.');
  std::string whole = dot == std::string::npos ? number : number.substr(0, dot);
  std::string frac = dot == std::string::npos ? "" : number.substr(dot + 1);
  if (suffix.empty() && !frac.empty())
    throw std::invalid_argument("bare durations are integer microseconds: " + text);
  if (whole.empty() && frac.empty()) throw std::invalid_argument("malformed duration: " + text);
  if (frac.find('.') != std::string::npos) throw std::invalid_argument("malformed duration: " + text);

  std::int64_t value = 0;
  for (char c : whole) {
    if (!std::isdigit(static_cast<unsigned char>(c))) throw std::invalid_argument("malformed duration: " + text);
    value = value * 10 + (c - '0');
    if (value > (std::int64_t{1} << 53)) throw std::invalid_argument("duration out of range: " + text);
  }
  value *= scale;
  std::int64_t frac_scale = scale;
  for (char c : frac) {
    if (!std::isdigit(static_cast<unsigned char>(c))) throw std::invalid_argument("malformed duration: " + text);
    if (frac_scale % 10 != 0)
      throw std::invalid_argument("duration finer than 1us: " + text);
    frac_scale /= 10;
    value += (c - '0') * frac_scale;
  }
  return SimTime::us(value);
}

inline std::string format_duration(SimTime t) { return std::to_string(t.count()) + "us"; }

inline std::ostream& operator<<(std::ostream& os, SimTime t) { return os << t.count() << "us"; }

namespace literals {
constexpr SimTime operator""_us(unsigned long long v) { return SimTime::us(static_cast<std::int64_t>(v)); }
constexpr SimTime operator""_ms(unsigned long long v) { return SimTime::ms(static_cast<std::int64_t>(v)); }
constexpr SimTime operator""_s(unsigned long long v) { return SimTime::s(static_cast<std::int64_t>(v)); }
}  // namespace literals

}  // namespace ecvm

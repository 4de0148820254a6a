#include "skipseg/common.hpp"

#include <cmath>
#include <iostream>
#include <mutex>

namespace skipseg {

namespace {

std::mutex g_warn_mu;
std::function<void(const std::string&)> g_warn_handler;

}  // namespace

void warn(const std::string& message) {
  std::lock_guard lock(g_warn_mu);
  if (g_warn_handler)
    g_warn_handler(message);
  else
    std::clog << "warning: " << message << '\n';
}

void set_warning_handler(std::function<void(const std::string&)> handler) {
  std::lock_guard lock(g_warn_mu);
  g_warn_handler = std::move(handler);
}

const char* to_string(BoundaryKind kind) {
  return kind == BoundaryKind::kStructural ? "structural" : "extended";
}

BoundaryKind boundary_kind_from_string(const std::string& s) {
  if (s == "structural") return BoundaryKind::kStructural;
  if (s == "extended") return BoundaryKind::kExtended;
  throw ParseError("unknown boundary kind '" + s + "'");
}

void BoundarySet::validate(double track_duration_s) const {
  for (std::size_t i = 0; i < times_s.size(); ++i) {
    const double t = times_s[i];
    if (!std::isfinite(t) || t <= 0.0)
      throw Error("boundary set '" + track_id + "': non-positive time");
    if (track_duration_s > 0.0 && t >= track_duration_s)
      throw Error("boundary set '" + track_id + "': time beyond track end");
    if (i > 0 && t <= times_s[i - 1])
      throw Error("boundary set '" + track_id + "': times not strictly increasing");
  }
}

void LikelihoodCurve::validate() const {
  if (times_s.size() != values.size())
    throw Error("likelihood curve: times/values length mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0.0 || values[i] > 1.0)
      throw Error("likelihood curve: value outside [0,1] at index " + std::to_string(i));
    if (i > 0 && times_s[i] <= times_s[i - 1])
      throw Error("likelihood curve: times not increasing");
  }
}

}  // namespace skipseg

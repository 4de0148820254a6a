#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace skipseg {

/// Base error for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed external input (event records, model files, configs).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Non-fatal diagnostics (skipped tracks, dropped queries). Defaults to stderr.
void warn(const std::string& message);
void set_warning_handler(std::function<void(const std::string&)> handler);

enum class BoundaryKind { kStructural, kExtended };

const char* to_string(BoundaryKind kind);
BoundaryKind boundary_kind_from_string(const std::string& s);

/// Ordered boundary timestamps of one track.
struct BoundarySet {
  std::string track_id;
  std::vector<double> times_s;
  BoundaryKind kind = BoundaryKind::kStructural;

  /// Throws unless times are strictly increasing and inside (0, duration).
  /// A non-positive duration skips the upper-bound check.
  void validate(double track_duration_s = 0.0) const;
};

/// Time-indexed boundary probability emitted by the predictors.
struct LikelihoodCurve {
  std::vector<double> times_s;
  std::vector<double> values;
  std::string source;

  std::size_t size() const { return values.size(); }
  void validate() const;
};

}  // namespace skipseg

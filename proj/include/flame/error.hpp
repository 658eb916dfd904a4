#pragma once

#include <stdexcept>
#include <string>

namespace flame {

enum class Errc {
  bad_magic,
  truncated,
  count_mismatch,
  io,
  invalid_argument,
  dimension_mismatch,
  diverged,
  infeasible,
  redraw_exhausted,
  config_invalid,
};

const char* errc_name(Errc code);

/// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::bad_magic: return "bad_magic";
    case Errc::truncated: return "truncated";
    case Errc::count_mismatch: return "count_mismatch";
    case Errc::io: return "io";
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::dimension_mismatch: return "dimension_mismatch";
    case Errc::diverged: return "diverged";
    case Errc::infeasible: return "infeasible";
    case Errc::redraw_exhausted: return "redraw_exhausted";
    case Errc::config_invalid: return "config_invalid";
  }
  return "unknown";
}

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace flame

#pragma once

#include <stdexcept>
#include <string>

namespace estm {

// Error categories mirrored by the C API status codes.
enum class errc {
    invalid_arg = 1,
    io          = 2,
    format      = 3,
    shape       = 4,
    runtime     = 5,
};

class error : public std::runtime_error {
  public:
    error(errc c, const std::string & what) : std::runtime_error(what), code_(c) {}
    errc code() const { return code_; }

  private:
    errc code_;
};

[[noreturn]] inline void fail(errc c, const std::string & what) {
    throw error(c, what);
}

} // namespace estm

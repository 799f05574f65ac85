#pragma once

#include <stdexcept>
#include <string>

namespace genre {

// Every library failure surfaces as genre::Error. The code is a short
// machine-readable token ("shape_mismatch", "io", ...) used by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

inline void require(bool cond, const char* code, const std::string& msg) {
  if (!cond) throw Error(code, msg);
}

}  // namespace genre

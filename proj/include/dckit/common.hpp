#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dckit {

// Error taxonomy maps onto CLI exit codes: config=2, data=3, numeric=4.
enum class ErrorKind { config, data, numeric, internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void require(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace dckit

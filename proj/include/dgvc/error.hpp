#pragma once

#include <stdexcept>
#include <string>

namespace dgvc {

// Every error carries a short class name so command-line front ends can print
// a single machine-parseable token ahead of the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define DGVC_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  }

DGVC_DEFINE_ERROR(InvalidArgument);
DGVC_DEFINE_ERROR(ShapeError);
DGVC_DEFINE_ERROR(NumericError);
DGVC_DEFINE_ERROR(FormatError);
DGVC_DEFINE_ERROR(IoError);
DGVC_DEFINE_ERROR(ConfigError);
DGVC_DEFINE_ERROR(CheckpointError);

#undef DGVC_DEFINE_ERROR

template <class E>
inline void require(bool cond, const std::string& what) {
  if (!cond) throw E(what);
}

}  // namespace dgvc

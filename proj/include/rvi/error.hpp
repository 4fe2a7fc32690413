#pragma once

#include <stdexcept>
#include <string>

namespace rvi {

// Root of every error raised by the library. Subclasses name the failure
// category so callers (and tests) can catch precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RVI_DEFINE_ERROR(Name)          \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  }

RVI_DEFINE_ERROR(DimensionError);
RVI_DEFINE_ERROR(DomainError);
RVI_DEFINE_ERROR(IndexError);
RVI_DEFINE_ERROR(ContractError);
RVI_DEFINE_ERROR(ConfigError);
RVI_DEFINE_ERROR(ArgumentError);
RVI_DEFINE_ERROR(FormatError);
RVI_DEFINE_ERROR(LengthError);
RVI_DEFINE_ERROR(ConsistencyError);
RVI_DEFINE_ERROR(IoError);
RVI_DEFINE_ERROR(ParseError);
RVI_DEFINE_ERROR(UndefinedMetricError);

#undef RVI_DEFINE_ERROR

}  // namespace rvi

#pragma once

#include <stdexcept>
#include <string>

namespace topo {

// Every failure surfaced by the library derives from Error so the CLI can
// report it with a single handler.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TOPO_DEFINE_ERROR(Name)              \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  };

TOPO_DEFINE_ERROR(NormalizationError)
TOPO_DEFINE_ERROR(SchemaError)
TOPO_DEFINE_ERROR(FormatError)
TOPO_DEFINE_ERROR(ParameterError)
TOPO_DEFINE_ERROR(CacheDepthError)
TOPO_DEFINE_ERROR(NumericsError)
TOPO_DEFINE_ERROR(DegenerateInputError)
TOPO_DEFINE_ERROR(IoError)
TOPO_DEFINE_ERROR(ConfigError)

#undef TOPO_DEFINE_ERROR

}  // namespace topo

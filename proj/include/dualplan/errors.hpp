#pragma once

#include <stdexcept>
#include <string>

namespace dualplan {

// All library failures derive from Error and carry the originating module
// plus a stable variant name so the CLI can emit structured diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string module, std::string variant, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)), variant_(std::move(variant)) {}

  const std::string& module() const { return module_; }
  const std::string& variant() const { return variant_; }

 private:
  std::string module_;
  std::string variant_;
};

#define DUALPLAN_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                        \
   public:                                                           \
    Name(std::string module, const std::string& what)                \
        : Error(std::move(module), #Name, what) {}                   \
  }

DUALPLAN_DEFINE_ERROR(InvalidGeometry);
DUALPLAN_DEFINE_ERROR(HorizonExceeded);
DUALPLAN_DEFINE_ERROR(ShapeError);
DUALPLAN_DEFINE_ERROR(NumericsError);
DUALPLAN_DEFINE_ERROR(OptimizerError);
DUALPLAN_DEFINE_ERROR(BankBuildError);
DUALPLAN_DEFINE_ERROR(InvalidCommand);
DUALPLAN_DEFINE_ERROR(ModelNotReady);
DUALPLAN_DEFINE_ERROR(InvalidCandidates);
DUALPLAN_DEFINE_ERROR(StageOrderError);
DUALPLAN_DEFINE_ERROR(ClockError);
DUALPLAN_DEFINE_ERROR(DataError);
DUALPLAN_DEFINE_ERROR(FormatError);
DUALPLAN_DEFINE_ERROR(ConfigError);
DUALPLAN_DEFINE_ERROR(OutOfRange);
DUALPLAN_DEFINE_ERROR(FrozenParameterError);

#undef DUALPLAN_DEFINE_ERROR

}  // namespace dualplan

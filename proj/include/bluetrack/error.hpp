#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace bluetrack {

// Base of every error the library throws. `kind()` is a stable tag used by
// the HTTP layer and the CLI to report failures without RTTI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define BLUETRACK_ERROR(Name)                                               \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(#Name, what) {}          \
  }

// localization
BLUETRACK_ERROR(DegenerateGeometry);
BLUETRACK_ERROR(InvalidLayout);
BLUETRACK_ERROR(InvalidDistance);

// calibration
BLUETRACK_ERROR(InvalidSample);
BLUETRACK_ERROR(DegenerateTimes);
BLUETRACK_ERROR(CsvError);

// protocol
BLUETRACK_ERROR(ParseError);
BLUETRACK_ERROR(InvalidCode);
BLUETRACK_ERROR(InvalidDeviceId);
BLUETRACK_ERROR(DuplicateCode);
BLUETRACK_ERROR(FrameError);

// simulation
BLUETRACK_ERROR(ScriptError);

// monitoring / service
BLUETRACK_ERROR(NotInitialized);
BLUETRACK_ERROR(NoActiveAlarm);
BLUETRACK_ERROR(UnknownAp);
BLUETRACK_ERROR(UnknownDevice);
BLUETRACK_ERROR(ConfigError);

#undef BLUETRACK_ERROR

class InsufficientSamples : public Error {
 public:
  explicit InsufficientSamples(std::size_t count)
      : Error("InsufficientSamples",
              "at least 5 distance-time pairs are required, got " +
                  std::to_string(count)),
        count_(count) {}

  std::size_t count() const noexcept { return count_; }

 private:
  std::size_t count_;
};

}  // namespace bluetrack

#pragma once

#include <stdexcept>
#include <string>

namespace svox {

/// Library failure tagged with the module that raised it.
class Error : public std::runtime_error {
public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

private:
  std::string module_;
};

}  // namespace svox

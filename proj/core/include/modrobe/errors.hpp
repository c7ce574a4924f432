#pragma once

#include <stdexcept>
#include <string>

namespace modrobe {

/// Bad configuration or usage, as opposed to a failure at run time. The CLI
/// maps this to exit code 2; everything else derived from std::exception
/// exits 1.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace modrobe

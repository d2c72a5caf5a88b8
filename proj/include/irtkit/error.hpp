#pragma once

#include <stdexcept>
#include <string>

namespace irtkit {

// All recoverable failures carry a short machine-readable category that the
// CLI echoes on its error line (e.g. "parse", "conflict", "empty-fit").
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

[[noreturn]] inline void fail(const std::string& category, const std::string& message) {
    throw Error(category, message);
}

}  // namespace irtkit

#pragma once

#include <string>

namespace protomap {

// Warnings go to stderr by default; bulk randomized tests can silence them.
void set_warnings_enabled(bool enabled);
bool warnings_enabled();
void warn(const std::string& message);

}  // namespace protomap

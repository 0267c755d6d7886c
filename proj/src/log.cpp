#include "protomap/log.hpp"

#include <atomic>
#include <iostream>

namespace protomap {

namespace {
std::atomic<bool> g_warnings{true};
}

void set_warnings_enabled(bool enabled) { g_warnings.store(enabled); }

bool warnings_enabled() { return g_warnings.load(); }

void warn(const std::string& message) {
    if (g_warnings.load()) std::cerr << "protomap: " << message << "\n";
}

}  // namespace protomap

#pragma once

#include <stdexcept>
#include <string>

namespace protomap {

enum class ErrorKind {
    invalid_argument,
    dimension,
    validation,
    usage,
    training,
    io,
    parse,
    metric_undefined,
    internal,
};

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid_argument";
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::validation: return "validation";
        case ErrorKind::usage: return "usage";
        case ErrorKind::training: return "training";
        case ErrorKind::io: return "io";
        case ErrorKind::parse: return "parse";
        case ErrorKind::metric_undefined: return "metric_undefined";
        case ErrorKind::internal: return "internal";
    }
    return "internal";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace protomap

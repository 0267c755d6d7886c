#include "protomap/tensor.hpp"

#include <cmath>
#include <sstream>

namespace protomap {

bool Tensor::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string Tensor::shape_string() const {
    std::ostringstream out;
    out << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) out << " x ";
        out << shape_[i];
    }
    out << "]";
    return out.str();
}

}  // namespace protomap

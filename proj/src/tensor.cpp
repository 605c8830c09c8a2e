#include "claf/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace claf {

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (claf::numel(shape) != data.size())
        throw Error("Tensor: shape " + shape_str(shape) + " does not match data length " +
                    std::to_string(data.size()));
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data.assign(1, v);
    return t;
}

Tensor Tensor::filled(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
}

double Tensor::item() const {
    if (data.size() != 1) throw Error("Tensor::item: tensor of shape " + shape_str(shape) + " is not scalar");
    return data[0];
}

std::uint64_t fnv1a(const void* p, std::size_t n, std::uint64_t h) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t tensor_hash(const Tensor& t) {
    std::uint64_t h = fnv1a(t.shape.data(), t.shape.size() * sizeof(std::size_t));
    return fnv1a(t.data.data(), t.data.size() * sizeof(double), h);
}

double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::fabs(v));
    return m;
}

}  // namespace claf

#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace claf {

// All library errors derive from this; messages name the failing operation
// and the offending shapes/values.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of 64-bit floats. A scalar has an empty shape.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(claf::numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d);

    static Tensor scalar(double v);
    static Tensor filled(Shape s, double v);

    std::size_t numel() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double item() const;

    // Flat accessors; multi-dimensional indexing is the caller's business.
    double operator[](std::size_t i) const { return data[i]; }
    double& operator[](std::size_t i) { return data[i]; }
};

// FNV-1a over raw bytes; used for parameter freezing contracts and
// checkpoint equality checks.
std::uint64_t fnv1a(const void* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t tensor_hash(const Tensor& t);

double max_abs(const Tensor& t);

}  // namespace claf

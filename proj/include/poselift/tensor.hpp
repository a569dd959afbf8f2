#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace poselift {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Training allocates and frees many short-lived activation buffers of a few
// hundred KB; glibc would serve each from a fresh mmap. Call once at startup
// to keep them on the heap. No-op on other C libraries.
void tune_allocator();

// Dense row-major float64 array with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2D / 3D element access; no bounds checks beyond the debug asserts.
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }
    double& at(std::size_t b, std::size_t i, std::size_t j) {
        return data_[(b * shape_[rank() - 2] + i) * shape_.back() + j];
    }
    double at(std::size_t b, std::size_t i, std::size_t j) const {
        return data_[(b * shape_[rank() - 2] + i) * shape_.back() + j];
    }

    double item() const;
    Tensor reshaped(Shape shape) const;
    Tensor transposed() const;  // 2D only
    void fill(double v);
    bool all_finite() const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace poselift

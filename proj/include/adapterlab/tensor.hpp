#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace adapterlab::core {

/// Dense row-major tensor of 64-bit reals. Rank 0 is a scalar (size 1).
/// Stored values are always finite; constructors and the ops that produce
/// tensors reject non-finite values instead of propagating them.
class Tensor {
public:
    /// Scalar zero.
    Tensor();

    /// Zeros of the given shape. Dimensions must be positive.
    explicit Tensor(std::vector<int> shape);

    /// Shape plus data; data length must equal the shape product and all
    /// values must be finite.
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double v);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    /// Multi-index access, mostly for tests and small code paths.
    double& at(std::initializer_list<int> idx);
    double at(std::initializer_list<int> idx) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;

    void fill(double v);

    /// "2x3x4" (scalars print as "scalar").
    std::string shape_str() const;

    static std::int64_t shape_product(const std::vector<int>& shape);

private:
    std::int64_t flat_index(std::initializer_list<int> idx) const;

    std::vector<int> shape_;
    std::vector<double> data_;
};

/// Throws std::runtime_error naming `op` if t holds a non-finite value.
void require_finite(const Tensor& t, const char* op);

} // namespace adapterlab::core

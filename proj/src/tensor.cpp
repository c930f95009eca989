#include "adapterlab/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace adapterlab::core {

std::int64_t Tensor::shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::runtime_error("tensor shape has non-positive dimension " + std::to_string(d));
        n *= d;
    }
    return n;
}

Tensor::Tensor() : data_(1, 0.0) {}

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_product(shape_)), 0.0) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_product(shape_))
        throw std::runtime_error("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str());
    require_finite(*this, "tensor construction");
}

Tensor Tensor::scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    require_finite(t, "tensor construction");
    return t;
}

Tensor Tensor::zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    require_finite(t, "tensor construction");
    return t;
}

std::int64_t Tensor::flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
        throw std::runtime_error("index rank " + std::to_string(idx.size()) +
                                 " does not match tensor rank " + std::to_string(rank()));
    std::int64_t flat = 0;
    int axis = 0;
    for (int i : idx) {
        int d = shape_[static_cast<std::size_t>(axis)];
        if (i < 0 || i >= d)
            throw std::runtime_error("index " + std::to_string(i) + " out of range for axis " +
                                     std::to_string(axis) + " of " + shape_str());
        flat = flat * d + i;
        ++axis;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<int> idx) {
    return data_[static_cast<std::size_t>(flat_index(idx))];
}

double Tensor::at(std::initializer_list<int> idx) const {
    return data_[static_cast<std::size_t>(flat_index(idx))];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

std::string Tensor::shape_str() const {
    if (shape_.empty()) return "scalar";
    std::ostringstream os;
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << 'x';
        os << shape_[i];
    }
    return os.str();
}

void require_finite(const Tensor& t, const char* op) {
    if (!t.all_finite())
        throw std::runtime_error(std::string(op) + " produced a non-finite value");
}

} // namespace adapterlab::core

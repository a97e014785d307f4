#ifndef GATSM_TENSOR_HPP
#define GATSM_TENSOR_HPP

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace gatsm {

/// Dense row-major tensor of doubles. Shape product always equals data length.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor identity(std::size_t n);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const;
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    bool is_scalar() const { return data_.size() == 1; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D access; bounds are the caller's responsibility.
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    // 3-D access.
    double& at(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }
    std::span<const double> values() const { return data_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    /// True when every value is finite. Negative infinity is tolerated when
    /// `allow_neg_inf` is set (mask sentinel).
    bool all_finite(bool allow_neg_inf = false) const;

    Tensor reshaped(std::vector<std::size_t> shape) const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

} // namespace gatsm

#endif

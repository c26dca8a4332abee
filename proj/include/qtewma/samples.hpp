#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "qtewma/errors.hpp"

namespace qtewma {

/// Row-major n x d block of samples.
class SampleMatrix {
public:
    SampleMatrix() = default;
    SampleMatrix(std::size_t rows, std::size_t dim) : dim_(dim), values_(rows * dim, 0.0) {}
    SampleMatrix(std::size_t dim, std::vector<double> values) : dim_(dim), values_(std::move(values)) {
        if (dim_ == 0 || values_.size() % dim_ != 0) {
            throw ShapeError("sample buffer size is not a multiple of the dimension");
        }
    }

    std::size_t rows() const noexcept { return dim_ == 0 ? 0 : values_.size() / dim_; }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return values_.empty(); }

    std::span<const double> row(std::size_t i) const noexcept { return {values_.data() + i * dim_, dim_}; }
    std::span<double> row(std::size_t i) noexcept { return {values_.data() + i * dim_, dim_}; }

    double operator()(std::size_t i, std::size_t k) const noexcept { return values_[i * dim_ + k]; }
    double& operator()(std::size_t i, std::size_t k) noexcept { return values_[i * dim_ + k]; }

    void append(std::span<const double> x) {
        if (dim_ == 0) {
            dim_ = x.size();
        }
        if (x.size() != dim_) {
            throw ShapeError("appended sample has the wrong dimension");
        }
        values_.insert(values_.end(), x.begin(), x.end());
    }

    const std::vector<double>& values() const noexcept { return values_; }

private:
    std::size_t dim_ = 0;
    std::vector<double> values_;
};

}  // namespace qtewma

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "regvd/check.hpp"

namespace regvd {

/// Dense row-major matrix. The whole numeric stack is templated on the
/// scalar type; double is the default everywhere and the only type used
/// in tests, float is available for faster training runs.
template <typename T>
class Matrix {
    static_assert(std::is_floating_point_v<T>);

public:
    Matrix() = default;

    Matrix(int rows, int cols)
        : rows_(rows), cols_(cols), data_(check_extents(rows, cols), T(0)) {}

    Matrix(int rows, int cols, std::initializer_list<T> values)
        : rows_(rows), cols_(cols), data_(values) {
        if (data_.size() != check_extents(rows, cols)) {
            throw std::invalid_argument("Matrix: initializer size " +
                                        std::to_string(data_.size()) + " != " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    static Matrix zeros(int rows, int cols) { return Matrix(rows, cols); }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    T operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
    const T* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    /// NaN/Inf anywhere is a contract violation; callers check at module
    /// boundaries (loss, optimizer step, serialization).
    void require_finite(const char* what) const {
        if (!all_finite()) {
            throw std::runtime_error(std::string("non-finite values in ") + what);
        }
    }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    static std::size_t check_extents(int rows, int cols) {
        if (rows < 0 || cols < 0) {
            throw std::invalid_argument("Matrix: negative extent");
        }
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

}  // namespace regvd

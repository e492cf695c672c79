// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace srlab::linalg {

// Dense row-major matrix of doubles. Plain value type; all shape errors
// throw std::invalid_argument.
class Mat {
  public:
    Mat() = default;

    Mat(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(check_extent(rows, cols), fill) {}

    Mat(int rows, int cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != check_extent(rows, cols))
            throw std::invalid_argument("Mat: data length does not match rows*cols");
    }

    Mat(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = static_cast<int>(rows.size());
        cols_ = rows_ ? static_cast<int>(rows.begin()->size()) : 0;
        data_.reserve(static_cast<std::size_t>(rows_) * cols_);
        for (const auto& r : rows) {
            if (static_cast<int>(r.size()) != cols_)
                throw std::invalid_argument("Mat: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Mat& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

    // Bitwise equality; used by the determinism and weight-sharing checks.
    friend bool operator==(const Mat& a, const Mat& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

    Mat transposed() const {
        Mat t(cols_, rows_);
        for (int r = 0; r < rows_; ++r)
            for (int c = 0; c < cols_; ++c)
                t(c, r) = (*this)(r, c);
        return t;
    }

    Mat row(int r) const {
        Mat out(1, cols_);
        for (int c = 0; c < cols_; ++c) out(0, c) = (*this)(r, c);
        return out;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

  private:
    static std::size_t check_extent(int rows, int cols) {
        if (rows < 0 || cols < 0)
            throw std::invalid_argument("Mat: negative dimension");
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

} // namespace srlab::linalg

#pragma once

// Small dense row-major matrix used for L x K sequence states and logits.
// Templated on the scalar so the same code runs in plain double and in
// dual-number forward mode.

#include <cassert>
#include <cstddef>
#include <vector>

namespace dfm {

template <typename S>
class MatT {
public:
    MatT() = default;
    MatT(int rows, int cols, S fill = S{})
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }

    S& operator()(int r, int c) {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<size_t>(r) * cols_ + c];
    }
    const S& operator()(int r, int c) const {
        assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
        return data_[static_cast<size_t>(r) * cols_ + c];
    }

    S* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const S* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

    std::vector<S>& data() { return data_; }
    const std::vector<S>& data() const { return data_; }

    bool same_shape(const MatT& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    MatT& operator+=(const MatT& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    MatT& operator-=(const MatT& o) {
        assert(same_shape(o));
        for (size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    MatT& operator*=(S a) {
        for (auto& v : data_) v *= a;
        return *this;
    }

    friend MatT operator+(MatT a, const MatT& b) { return a += b; }
    friend MatT operator-(MatT a, const MatT& b) { return a -= b; }
    friend MatT operator*(MatT a, S s) { return a *= s; }
    friend MatT operator*(S s, MatT a) { return a *= s; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<S> data_;
};

using Mat = MatT<double>;

// Linear combination a*x + b*y, shapes must match.
inline Mat axby(double a, const Mat& x, double b, const Mat& y) {
    assert(x.same_shape(y));
    Mat out(x.rows(), x.cols());
    for (size_t i = 0; i < x.size(); ++i) out.data()[i] = a * x.data()[i] + b * y.data()[i];
    return out;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    assert(a.same_shape(b));
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        if (d < 0) d = -d;
        if (d > m) m = d;
    }
    return m;
}

}  // namespace dfm

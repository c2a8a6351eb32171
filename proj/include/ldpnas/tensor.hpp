#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ldpnas/errors.hpp"

namespace ldpnas {

/// Dense NCHW tensor with contiguous storage.
template <class Scalar>
class Tensor4 {
public:
    Tensor4() = default;
    Tensor4(int n, int c, int h, int w, Scalar fill = Scalar(0))
        : n_(n), c_(c), h_(h), w_(w), data_(std::size_t(n) * c * h * w, fill) {}

    int n() const { return n_; }
    int c() const { return c_; }
    int h() const { return h_; }
    int w() const { return w_; }
    std::size_t size() const { return data_.size(); }
    std::size_t sample_size() const { return std::size_t(c_) * h_ * w_; }
    bool empty() const { return data_.empty(); }

    Scalar* data() { return data_.data(); }
    const Scalar* data() const { return data_.data(); }
    std::span<Scalar> span() { return data_; }
    std::span<const Scalar> span() const { return data_; }
    std::vector<Scalar>& vec() { return data_; }
    const std::vector<Scalar>& vec() const { return data_; }

    Scalar& operator()(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    Scalar operator()(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    std::span<Scalar> sample(int i) { return span().subspan(i * sample_size(), sample_size()); }
    std::span<const Scalar> sample(int i) const { return span().subspan(i * sample_size(), sample_size()); }

    bool same_shape(const Tensor4& o) const { return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }

    bool all_finite() const {
        for (Scalar v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Copies samples [first, first + count) into a new tensor.
    Tensor4 slice(int first, int count) const {
        Tensor4 out(count, c_, h_, w_);
        std::copy(data_.begin() + std::size_t(first) * sample_size(),
                  data_.begin() + std::size_t(first + count) * sample_size(), out.data_.begin());
        return out;
    }

    template <class Other>
    Tensor4<Other> cast() const {
        Tensor4<Other> out(n_, c_, h_, w_);
        for (std::size_t i = 0; i < data_.size(); ++i) out.data()[i] = Other(data_[i]);
        return out;
    }

    void release() {
        data_.clear();
        data_.shrink_to_fit();
    }

private:
    std::size_t index(int n, int c, int h, int w) const {
        return ((std::size_t(n) * c_ + c) * h_ + h) * w_ + w;
    }

    int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
    std::vector<Scalar> data_;
};

} // namespace ldpnas

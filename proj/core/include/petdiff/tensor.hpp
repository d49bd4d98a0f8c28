// Copyright (C) 2026 The petdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace petdiff {

using Shape = std::vector<std::int64_t>;

/// 64-byte aligned storage. Vectorised reductions then see the same
/// head/tail split for every buffer, which keeps runs bit-reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Images are (H, W); network activations
/// are (N, C, H, W); volumes are (D, H, W).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
    static Tensor full_like(const Tensor& other, double v) { return Tensor(other.shape_, v); }

    const Shape& shape() const noexcept { return shape_; }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> span() noexcept { return data_; }
    std::span<const double> span() const noexcept { return data_; }
    Storage& vec() noexcept { return data_; }
    const Storage& vec() const noexcept { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    double& at(std::int64_t y, std::int64_t x) { return data_[static_cast<std::size_t>(y * shape_.back() + x)]; }
    double at(std::int64_t y, std::int64_t x) const { return data_[static_cast<std::size_t>(y * shape_.back() + x)]; }

    /// Same data, new shape; element count must agree.
    Tensor reshaped(Shape shape) const;

    void fill(double v);
    bool all_finite() const;
    bool any_nan() const;
    double sum() const;
    double min() const;
    double max() const;

private:
    Shape shape_;
    Storage data_;
};

bool same_shape(const Tensor& a, const Tensor& b);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Bitwise equality of shape and contents.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace petdiff

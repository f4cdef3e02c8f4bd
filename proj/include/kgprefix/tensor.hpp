// Dense row-major tensor. Values are held as doubles; tensors tagged f32
// keep every stored value exactly representable in IEEE float so that
// float32 semantics and byte-lossless serialization hold at once.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "kgprefix/common.hpp"

namespace kgprefix {

enum class DType : uint8_t { f32 = 0, f64 = 1 };

inline const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }
inline size_t dtype_bytes(DType d) { return d == DType::f32 ? 4 : 8; }

class Rng;

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<long> shape, DType dtype = DType::f64);

    static Tensor full(std::vector<long> shape, double value, DType dtype = DType::f64);
    static Tensor scalar(double value, DType dtype = DType::f64);
    // 2-D literal, mostly for tests and fixtures
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                            DType dtype = DType::f64);
    static Tensor randn(std::vector<long> shape, Rng& rng, double stddev,
                        DType dtype = DType::f64);

    const std::vector<long>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    long dim(int i) const;
    long size() const { return static_cast<long>(data_.size()); }
    DType dtype() const { return dtype_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<const double> values() const { return data_; }

    double& at(long i);
    double at(long i) const;
    double& at(long r, long c);
    double at(long r, long c) const;
    // scalar (rank 0 or single element)
    double item() const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    bool bit_equal(const Tensor& o) const;
    bool allclose(const Tensor& o, double atol, double rtol = 0.0) const;
    double max_abs() const;
    std::string shape_str() const;

    // Rounds every value through float when dtype is f32; identity for f64.
    void enforce_dtype();
    // Throws NumericError naming `what` if any value is NaN/Inf.
    void check_finite(const char* what) const;

private:
    std::vector<long> shape_;
    std::vector<double> data_;
    DType dtype_ = DType::f64;
};

long shape_product(const std::vector<long>& shape);
std::string shape_to_string(const std::vector<long>& shape);

}  // namespace kgprefix

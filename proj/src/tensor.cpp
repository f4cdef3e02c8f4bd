#include "kgprefix/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace kgprefix {

long shape_product(const std::vector<long>& shape) {
    long n = 1;
    for (long d : shape) {
        if (d < 0) throw DimensionError("negative dimension in shape " + shape_to_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<long>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<long> shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
    data_.assign(static_cast<size_t>(shape_product(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<long> shape, double value, DType dtype) {
    Tensor t(std::move(shape), dtype);
    for (double& v : t.data_) v = value;
    t.enforce_dtype();
    return t;
}

Tensor Tensor::scalar(double value, DType dtype) {
    Tensor t(std::vector<long>{}, dtype);
    t.data_[0] = value;
    t.enforce_dtype();
    return t;
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows, DType dtype) {
    const long r = static_cast<long>(rows.size());
    const long c = r > 0 ? static_cast<long>(rows.begin()->size()) : 0;
    Tensor t({r, c}, dtype);
    long i = 0;
    for (const auto& row : rows) {
        if (static_cast<long>(row.size()) != c)
            throw DimensionError("from_rows: ragged row lengths");
        for (double v : row) t.data_[static_cast<size_t>(i++)] = v;
    }
    t.enforce_dtype();
    return t;
}

Tensor Tensor::randn(std::vector<long> shape, Rng& rng, double stddev, DType dtype) {
    Tensor t(std::move(shape), dtype);
    for (double& v : t.data_) v = rng.normal(0.0, stddev);
    t.enforce_dtype();
    return t;
}

long Tensor::dim(int i) const {
    if (i < 0) i += rank();
    if (i < 0 || i >= rank()) throw IndexError("Tensor::dim: axis out of range");
    return shape_[static_cast<size_t>(i)];
}

double& Tensor::at(long i) {
    if (i < 0 || i >= size()) throw IndexError("Tensor::at: flat index out of range");
    return data_[static_cast<size_t>(i)];
}

double Tensor::at(long i) const { return const_cast<Tensor*>(this)->at(i); }

double& Tensor::at(long r, long c) {
    if (rank() != 2) throw DimensionError("Tensor::at(r,c) requires rank 2, got " + shape_str());
    if (r < 0 || r >= shape_[0] || c < 0 || c >= shape_[1])
        throw IndexError("Tensor::at(r,c): index out of range");
    return data_[static_cast<size_t>(r * shape_[1] + c)];
}

double Tensor::at(long r, long c) const { return const_cast<Tensor*>(this)->at(r, c); }

double Tensor::item() const {
    if (size() != 1) throw DimensionError("Tensor::item requires a single element, got " + shape_str());
    return data_[0];
}

bool Tensor::bit_equal(const Tensor& o) const {
    if (shape_ != o.shape_ || dtype_ != o.dtype_) return false;
    return std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(double)) == 0;
}

bool Tensor::allclose(const Tensor& o, double atol, double rtol) const {
    if (shape_ != o.shape_) return false;
    for (size_t i = 0; i < data_.size(); ++i) {
        const double diff = std::fabs(data_[i] - o.data_[i]);
        if (diff > atol + rtol * std::fabs(o.data_[i])) return false;
    }
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::fabs(v));
    return m;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

void Tensor::enforce_dtype() {
    if (dtype_ != DType::f32) return;
    for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

void Tensor::check_finite(const char* what) const {
    for (double v : data_) {
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value produced by ") + what);
    }
}

}  // namespace kgprefix

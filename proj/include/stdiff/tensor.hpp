#ifndef STDIFF_TENSOR_HPP
#define STDIFF_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace stdiff {

// Dense shape, rank <= 4 in practice (vectors, CHW maps, OIHW conv kernels).
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<Eigen::Index> d) : dims_(d) { check(); }
    explicit Shape(std::vector<Eigen::Index> d) : dims_(std::move(d)) { check(); }

    static Shape chw(Eigen::Index c, Eigen::Index h, Eigen::Index w) { return Shape{c, h, w}; }

    Eigen::Index rank() const { return static_cast<Eigen::Index>(dims_.size()); }
    Eigen::Index operator[](Eigen::Index i) const { return dims_[static_cast<std::size_t>(i)]; }
    const std::vector<Eigen::Index>& dims() const { return dims_; }

    Eigen::Index numel() const {
        Eigen::Index n = 1;
        for (auto d : dims_) n *= d;
        return n;
    }

    bool operator==(const Shape& o) const { return dims_ == o.dims_; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < dims_.size(); ++i) os << (i ? "x" : "") << dims_[i];
        os << ")";
        return os.str();
    }

private:
    void check() const {
        for (auto d : dims_)
            if (d <= 0) throw std::invalid_argument("Shape: nonpositive dimension in " + str());
    }
    std::vector<Eigen::Index> dims_;
};

// Dense tensor: a shape over a flat Eigen array, row-major within the shape
// (for CHW maps, index = (c*H + y)*W + x).
template <typename Scalar>
struct Tensor {
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    Shape shape;
    Storage data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(Storage::Zero(shape.numel())) {}
    Tensor(Shape s, Storage d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape.numel())
            throw std::invalid_argument("Tensor: storage size " + std::to_string(data.size()) +
                                        " does not match shape " + shape.str());
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor constant(Shape s, Scalar v) {
        Tensor t(std::move(s));
        t.data.setConstant(v);
        return t;
    }

    Eigen::Index numel() const { return data.size(); }

    Scalar& at(Eigen::Index i) { return data[i]; }
    Scalar at(Eigen::Index i) const { return data[i]; }

    // CHW accessors; only valid for rank-3 tensors.
    Scalar& chw(Eigen::Index c, Eigen::Index y, Eigen::Index x) {
        return data[(c * shape[1] + y) * shape[2] + x];
    }
    Scalar chw(Eigen::Index c, Eigen::Index y, Eigen::Index x) const {
        return data[(c * shape[1] + y) * shape[2] + x];
    }

    bool all_finite() const { return data.isFinite().all(); }

    template <typename T>
    Tensor<T> cast() const {
        return Tensor<T>(shape, data.template cast<T>());
    }
};

template <typename Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& want, const char* who) {
    if (t.shape != want)
        throw std::invalid_argument(std::string(who) + ": expected shape " + want.str() +
                                    ", got " + t.shape.str());
}

template <typename Scalar>
void require_rank3(const Tensor<Scalar>& t, const char* who) {
    if (t.shape.rank() != 3)
        throw std::invalid_argument(std::string(who) + ": expected rank-3 CHW tensor, got " +
                                    t.shape.str());
}

}  // namespace stdiff

#endif

#pragma once

#include <cstddef>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace convseq {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Dense row-major tensor of doubles.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        require(data.size() == numel_of(shape),
                "tensor data length " + std::to_string(data.size()) +
                    " does not match shape " + shape_str(shape));
    }

    static std::size_t numel_of(const Shape& s) {
        std::size_t n = 1;
        for (std::size_t d : s) {
            require(d > 0, "zero dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    double& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& at3(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at3(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    double at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " +
                                 shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// True if `small` broadcasts to `big` over leading axes, i.e. small.shape is a
// suffix of big.shape. Equal shapes qualify trivially.
inline bool broadcasts_to(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    std::size_t off = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[off + i]) return false;
    return true;
}

// Sum g over leading axes so the result has shape `target` (suffix of g.shape).
inline Tensor reduce_to_suffix(const Tensor& g, const Shape& target) {
    require(broadcasts_to(target, g.shape),
            "reduce_to_suffix: " + shape_str(target) + " is not a suffix of " + shape_str(g.shape));
    Tensor out(target);
    std::size_t m = out.numel();
    for (std::size_t i = 0; i < g.numel(); ++i) out.data[i % m] += g.data[i];
    return out;
}

}  // namespace convseq

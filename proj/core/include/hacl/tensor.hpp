#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace hacl::diff {

/// Dense real tensor of rank 0..3. Rank 0 is a scalar (one element).
/// Data is row-major; double precision throughout so gradient checks
/// have headroom. Values headed for a checkpoint are rounded to float32
/// by the training code, not here.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        check_shape(shape);
        data.assign(numel_of(shape), 0.0);
    }

    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        check_shape(shape);
        if (data.size() != numel_of(shape)) {
            throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape (numel " +
                                        std::to_string(numel_of(shape)) + ")");
        }
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        for (double& x : t.data) x = v;
        return t;
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }

    size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }

    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return rank() == 2 ? shape[1] : (rank() == 1 ? shape[0] : 1); }

    double& at(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    double at(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

  private:
    static void check_shape(const std::vector<int>& s) {
        if (s.size() > 3) throw std::invalid_argument("Tensor: rank > 3 not supported");
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
        }
    }
};

}  // namespace hacl::diff

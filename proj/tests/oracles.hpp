// Test-only oracles, independent of the library's computation paths:
// direct-summation contrastive losses, naive matmul, central differences,
// and a chi-square tail probability for histogram checks.
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "hacl/rng.hpp"
#include "hacl/tensor.hpp"

namespace oracle {

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
    return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

// f(a, b) = exp(cos(a,b)/tau), written out directly
inline double f_sim(std::span<const double> a, std::span<const double> b, double tau) {
    return std::exp(cosine(a, b) / tau);
}

using Vecs = std::vector<std::vector<double>>;

// Direct summation of the anchors-vs-candidates softmax loss:
// -1/B sum_i log[ f(anchor_i, pos_i) / (sum_k f(anchor_i, pos_k) + queue terms
// + optional own hard negative) ]
inline double infonce_direct(const Vecs& anchors, const Vecs& positives, const Vecs& queue,
                             double tau, const Vecs* hard = nullptr) {
    const size_t b = anchors.size();
    double total = 0.0;
    for (size_t i = 0; i < b; ++i) {
        const double pos = f_sim(anchors[i], positives[i], tau);
        double denom = 0.0;
        for (size_t k = 0; k < b; ++k) denom += f_sim(anchors[i], positives[k], tau);
        for (const auto& q : queue) denom += f_sim(anchors[i], q, tau);
        if (hard) denom += f_sim(anchors[i], (*hard)[i], tau);
        total += -std::log(pos / denom);
    }
    return total / static_cast<double>(b);
}

inline hacl::diff::Tensor random_tensor(hacl::Rng& rng, std::vector<int> shape,
                                        double scale = 1.0) {
    hacl::diff::Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.next_gauss() * scale;
    return t;
}

inline std::vector<double> random_vec(hacl::Rng& rng, int n, double scale = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.next_gauss() * scale;
    return v;
}

// naive triple loop, no blocking, no reuse of the library kernels
inline hacl::diff::Tensor matmul_naive(const hacl::diff::Tensor& a, const hacl::diff::Tensor& b) {
    hacl::diff::Tensor c({a.shape[0], b.shape[1]});
    for (int i = 0; i < a.shape[0]; ++i)
        for (int j = 0; j < b.shape[1]; ++j) {
            double s = 0.0;
            for (int k = 0; k < a.shape[1]; ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    return c;
}

// central differences of a scalar function of flat inputs
inline std::vector<std::vector<double>> central_differences(
    const std::function<double(const std::vector<hacl::diff::Tensor>&)>& f,
    std::vector<hacl::diff::Tensor> inputs, double step = 1e-5) {
    std::vector<std::vector<double>> grads;
    for (size_t i = 0; i < inputs.size(); ++i) {
        std::vector<double> g(inputs[i].data.size());
        for (size_t j = 0; j < inputs[i].data.size(); ++j) {
            const double orig = inputs[i].data[j];
            inputs[i].data[j] = orig + step;
            const double fp = f(inputs);
            inputs[i].data[j] = orig - step;
            const double fm = f(inputs);
            inputs[i].data[j] = orig;
            g[j] = (fp - fm) / (2.0 * step);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// regularized upper incomplete gamma Q(s, x), series + continued fraction
inline double gammq(double s, double x) {
    if (x < 0.0 || s <= 0.0) return 1.0;
    if (x == 0.0) return 1.0;
    const double lg = std::lgamma(s);
    if (x < s + 1.0) {
        // lower series
        double ap = s, sum = 1.0 / s, del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-15) break;
        }
        return 1.0 - sum * std::exp(-x + s * std::log(x) - lg);
    }
    // continued fraction for Q
    double b = x + 1.0 - s, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -i * (i - s);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + s * std::log(x) - lg) * h;
}

// chi-square upper tail probability with k bins against uniform expectation
inline double chi_square_uniform_pvalue(std::span<const int> counts) {
    double total = 0.0;
    for (int c : counts) total += c;
    const double expected = total / static_cast<double>(counts.size());
    double stat = 0.0;
    for (int c : counts) stat += (c - expected) * (c - expected) / expected;
    return gammq(0.5 * static_cast<double>(counts.size() - 1), 0.5 * stat);
}

}  // namespace oracle

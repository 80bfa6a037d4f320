#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "macnet/tensor.hpp"

namespace testutil {

inline macnet::Tensor rand_tensor(macnet::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(macnet::shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return macnet::Tensor(std::move(shape), std::move(v));
}

// Worst relative error between tape gradients and central finite differences,
// probing every entry of every listed input. loss_fn must rebuild the scalar
// loss from the inputs' current values; it receives the tape (null = untraced).
inline double max_grad_err(const std::function<macnet::Tensor(macnet::Tape*)>& loss_fn,
                           std::vector<macnet::Tensor> inputs, double h = 1e-6,
                           double denom_floor = 1e-6) {
    macnet::Tape tape;
    macnet::Tensor loss = loss_fn(&tape);
    tape.backward(loss);
    double worst = 0.0;
    for (auto& t : inputs) {
        const std::vector<double> g = tape.has_grad(t)
                                          ? tape.grad(t).to_vector()
                                          : std::vector<double>(t.numel(), 0.0);
        auto d = t.mutable_data();
        for (size_t j = 0; j < d.size(); ++j) {
            const double orig = d[j];
            d[j] = orig + h;
            const double up = macnet::item(loss_fn(nullptr));
            d[j] = orig - h;
            const double dn = macnet::item(loss_fn(nullptr));
            d[j] = orig;
            const double fd = (up - dn) / (2.0 * h);
            const double rel =
                std::abs(fd - g[j]) / std::max({std::abs(fd), std::abs(g[j]), denom_floor});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

inline bool bitwise_equal(const macnet::Tensor& a, const macnet::Tensor& b) {
    return a.shape() == b.shape() && a.to_vector() == b.to_vector();
}

inline bool same_file_bytes(const std::string& a, const std::string& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return ca == cb;
}

}  // namespace testutil

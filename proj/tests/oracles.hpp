#pragma once

// Reference implementations shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <vector>

#include "steerkit/numerics.hpp"

namespace oracles {

// Plug-in MI straight from a brute-force joint histogram: bin 0 holds exact
// zeros, bins 1..bins split the nonzero range into equal widths.
inline double mutual_information(const std::vector<double>& plus, const std::vector<double>& minus,
                                 std::size_t bins) {
    std::vector<double> nz;
    for (const auto* side : {&plus, &minus})
        for (double v : *side)
            if (v != 0.0) nz.push_back(v);
    const double lo = nz.empty() ? 0.0 : *std::min_element(nz.begin(), nz.end());
    const double hi = nz.empty() ? 0.0 : *std::max_element(nz.begin(), nz.end());
    auto cell = [&](double v) -> std::size_t {
        if (v == 0.0) return 0;
        if (hi == lo) return 1;
        std::size_t k = static_cast<std::size_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
        if (k >= bins) k = bins - 1;
        return k + 1;
    };
    const double n = static_cast<double>(plus.size() + minus.size());
    const double ny[2] = {static_cast<double>(plus.size()), static_cast<double>(minus.size())};
    double mi = 0.0;
    for (std::size_t b = 0; b <= bins; ++b) {
        std::size_t c[2] = {0, 0};
        for (double v : plus) c[0] += cell(v) == b;
        for (double v : minus) c[1] += cell(v) == b;
        const double nb = static_cast<double>(c[0] + c[1]);
        for (int y = 0; y < 2; ++y) {
            if (c[y] == 0) continue;
            const double nby = static_cast<double>(c[y]);
            mi += (nby / n) * std::log2((nby * n) / (nb * ny[y]));
        }
    }
    return std::max(0.0, mi);
}

// Roughly 40% exact zeros, the rest uniform on (0, 3).
inline std::vector<double> random_feature(steerkit::Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform() < 0.4 ? 0.0 : rng.uniform(0.0, 3.0);
    return v;
}

// Samples that are sparse non-negative mixtures of `atoms` unit vectors.
inline steerkit::Matrix dictionary_data(steerkit::Rng& rng, std::size_t n, std::size_t d, std::size_t atoms,
                                        double sigma) {
    using steerkit::Vector;
    std::vector<Vector> dict;
    for (std::size_t a = 0; a < atoms; ++a) dict.push_back(rng.unit_vector(d));
    steerkit::Matrix Z(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        Vector z(d);
        for (std::size_t a = 0; a < atoms; ++a)
            if (rng.uniform() < 0.25) z += rng.uniform(0.5, 1.5) * dict[a];
        for (auto& x : z) x += sigma * rng.normal();
        Z.set_row(r, z);
    }
    return Z;
}

}  // namespace oracles

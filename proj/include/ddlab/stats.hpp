// Replicate summary statistics: medians, quartiles and ranges per time step,
// matching the figure conventions (solid median, shaded IQR, dotted min/max).
#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ddlab {

// Linear-interpolation quantile (R type 7). q in [0, 1].
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

inline double median(const std::vector<double>& values) { return quantile(values, 0.5); }

struct SeriesSummary {
    std::vector<double> median, q25, q75, min, max;

    std::size_t size() const { return median.size(); }
};

// Summarizes a family of equal-length curves (one per replicate) pointwise.
inline SeriesSummary summarize_curves(const std::vector<std::vector<double>>& curves) {
    if (curves.empty()) throw std::invalid_argument("summarize_curves: no curves");
    const std::size_t T = curves.front().size();
    for (const auto& c : curves)
        if (c.size() != T) throw std::invalid_argument("summarize_curves: length mismatch");

    SeriesSummary s;
    s.median.resize(T);
    s.q25.resize(T);
    s.q75.resize(T);
    s.min.resize(T);
    s.max.resize(T);
    std::vector<double> column(curves.size());
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t k = 0; k < curves.size(); ++k) column[k] = curves[k][t];
        s.median[t] = quantile(column, 0.5);
        s.q25[t] = quantile(column, 0.25);
        s.q75[t] = quantile(column, 0.75);
        s.min[t] = *std::min_element(column.begin(), column.end());
        s.max[t] = *std::max_element(column.begin(), column.end());
    }
    return s;
}

}  // namespace ddlab

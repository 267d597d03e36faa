#pragma once

// Spectrum results shared by the discretizations, and set distances on them.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gapeig/bloch.hpp"

namespace gapeig {

/// Eigenvalues found inside a gap window by one discretization.
struct SpectrumResult {
    std::string method;  // supercell | galerkin | augmented | dislocation
    std::vector<std::pair<std::string, double>> params;
    std::vector<double> eigenvalues;
    /// Coefficient vectors in the method's own basis, one column per eigenvalue.
    std::optional<Eigen::MatrixXd> vectors;
    bloch::GapWindow window;

    double param(const std::string& key) const {
        for (const auto& [k, v] : params)
            if (k == key) return v;
        throw InvalidArgument("spectrum result has no parameter " + key);
    }
};

/// Values of `values` strictly inside the window, ascending.
inline std::vector<double> inside(const Eigen::VectorXd& values, double lo, double hi) {
    std::vector<double> out;
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (lo < values(i) && values(i) < hi) out.push_back(values(i));
    std::sort(out.begin(), out.end());
    return out;
}

inline double distance_to_set(double x, const std::vector<double>& set) {
    double d = std::numeric_limits<double>::infinity();
    for (double y : set) d = std::min(d, std::abs(x - y));
    return d;
}

/// Hausdorff distance between finite sets: 0 if both are empty, +inf if
/// exactly one is.
inline double hausdorff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() && b.empty()) return 0.0;
    if (a.empty() || b.empty()) return std::numeric_limits<double>::infinity();
    double h = 0.0;
    for (double x : a) h = std::max(h, distance_to_set(x, b));
    for (double y : b) h = std::max(h, distance_to_set(y, a));
    return h;
}

}  // namespace gapeig

#pragma once

// Parameter-budget calculus for Mixer-style models.
//
// For one base block the average per-layer count of effective nonzeros is
//     Omega = gamma * (C S^2 + C^2 S) / 2.
// Fixing Omega and gamma, the effective width m = S C is maximized at
// C = S = (Omega / gamma)^(1/3). All formulas are real-valued; counts are
// rounded only where a report is produced.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"

namespace pkmix::sizing {

inline double omega(double S, double C, double gamma) { return gamma * (C * S * S + C * C * S) / 2.0; }

// Positive root of omega(S, C, gamma) = budget in S, (sqrt(C^2 + 8 q) - C) / 2
// with q = budget / (gamma C), rationalized to avoid cancellation for large C.
inline double solve_S(double C, double budget, double gamma) {
    if (!(C > 0.0) || !(budget > 0.0) || !(gamma > 0.0)) throw value_error("solve_S: arguments must be positive");
    const double q = budget / (gamma * C);
    return 4.0 * q / (std::sqrt(C * C + 8.0 * q) + C);
}

// m(C) = C * solve_S(C): the effective width along the fixed-budget curve.
inline double width_at(double C, double budget, double gamma) { return C * solve_S(C, budget, gamma); }

struct Optimum {
    double C = 0.0;
    double S = 0.0;
    double m_max = 0.0;
};

inline Optimum optimal(double budget, double gamma) {
    if (!(budget > 0.0) || !(gamma > 0.0)) throw value_error("optimal: arguments must be positive");
    const double side = std::cbrt(budget / gamma);
    return {side, side, side * side};
}

struct WidthBounds {
    double lower = 0.0;  // attained at S = 1 or C = 1
    double upper = 0.0;  // attained at C = S
};

inline WidthBounds width_bounds(double budget, double gamma) {
    if (!(budget > 0.0) || !(gamma > 0.0)) throw value_error("width_bounds: arguments must be positive");
    return {(std::sqrt(1.0 + 8.0 * budget / gamma) - 1.0) / 2.0, std::pow(budget / gamma, 2.0 / 3.0)};
}

// Expansion factor that spends the budget at fixed width m with C channels.
inline double gamma_given(double m, double C, double budget) {
    if (!(m > 0.0)) throw value_error("gamma_given: width must be positive");
    if (!(C > 0.0)) throw value_error("gamma_given: channel count must be positive");
    return 2.0 * budget / (m * (C + m / C));
}

inline double max_gamma(double m, double budget) { return budget / (m * std::sqrt(m)); }

// Width of a sparse-weight MLP whose masked layers hold the budget:
// round(sqrt(Omega / (gamma p))).
inline std::size_t sw_width(double budget, double p, double gamma = 1.0) {
    if (!(p > 0.0 && p <= 1.0)) throw value_error("sw_width: p must lie in (0, 1]");
    if (!(budget > 0.0) || !(gamma > 0.0)) throw value_error("sw_width: arguments must be positive");
    return static_cast<std::size_t>(std::floor(std::sqrt(budget / (gamma * p)) + 0.5));
}

struct Pair {
    std::size_t C = 0;
    std::size_t S = 0;
    double achieved_omega = 0.0;
    double relative_error = 0.0;  // |achieved - target| / target
    std::size_t width = 0;        // m = S C
    double density = 0.0;         // Omega / m^2
};

inline Pair make_pair(std::size_t C, std::size_t S, double budget, double gamma) {
    Pair p;
    p.C = C;
    p.S = S;
    p.achieved_omega = omega(static_cast<double>(S), static_cast<double>(C), gamma);
    p.relative_error = std::abs(p.achieved_omega - budget) / budget;
    p.width = S * C;
    p.density = budget / (static_cast<double>(p.width) * static_cast<double>(p.width));
    return p;
}

// For each candidate C, S = round-half-up(solve_S). Mirrors (C, S) -> (S, C)
// are appended when not already present. Result is ordered by C.
inline std::vector<Pair> integer_pairs(double budget, double gamma, const std::vector<std::size_t>& candidates) {
    std::vector<Pair> out;
    const auto contains = [&](std::size_t C, std::size_t S) {
        for (const auto& p : out)
            if (p.C == C && p.S == S) return true;
        return false;
    };
    for (std::size_t C : candidates) {
        if (C == 0) throw value_error("integer_pairs: candidate C must be positive");
        const double s = solve_S(static_cast<double>(C), budget, gamma);
        auto S = static_cast<std::size_t>(std::floor(s + 0.5));
        if (S == 0) S = 1;
        if (!contains(C, S)) out.push_back(make_pair(C, S, budget, gamma));
    }
    const std::size_t direct = out.size();
    for (std::size_t i = 0; i < direct; ++i) {
        const Pair p = out[i];
        if (!contains(p.S, p.C)) out.push_back(make_pair(p.S, p.C, budget, gamma));
    }
    std::sort(out.begin(), out.end(), [](const Pair& a, const Pair& b) { return a.C < b.C; });
    return out;
}

struct CurvePoint {
    std::size_t C = 0;
    double S = 0.0;
    double m = 0.0;
    double density = 0.0;
};

inline std::vector<CurvePoint> width_curve(double budget, double gamma, std::size_t c_max) {
    std::vector<CurvePoint> out;
    out.reserve(c_max);
    for (std::size_t c = 1; c <= c_max; ++c) {
        const double s = solve_S(static_cast<double>(c), budget, gamma);
        const double m = s * static_cast<double>(c);
        out.push_back({c, s, m, budget / (m * m)});
    }
    return out;
}

struct SizingReport {
    double omega = 0.0;
    double gamma = 1.0;
    std::vector<Pair> pairs;
    Optimum optimum;
    WidthBounds bounds;
};

inline SizingReport report(double budget, double gamma, const std::vector<std::size_t>& candidates) {
    return {budget, gamma, integer_pairs(budget, gamma, candidates), optimal(budget, gamma),
            width_bounds(budget, gamma)};
}

} // namespace pkmix::sizing

#pragma once

// Shared fixtures for the unit tests: a deterministic plausible 68-point face
// and a few comparison helpers.

#include <cmath>
#include <vector>

#include "ldlab/landmarks.hpp"

namespace testutil {

// Hand-placed face in normalized coordinates, well inside [0.1, 0.9] so edits
// at legal strengths stay in frame.
inline ldlab::LandmarkSet make_test_face() {
    using ldlab::P2;
    std::vector<P2> p(68);
    const double pi = 3.14159265358979323846;
    // jaw: U-shaped contour, chin at the bottom center
    for (int i = 0; i <= 16; ++i) {
        const double t = static_cast<double>(i) / 16.0;
        p[static_cast<std::size_t>(i)] = {0.2 + 0.6 * t, 0.45 + 0.4 * std::sin(pi * t)};
    }
    // brows
    for (int j = 0; j < 5; ++j) {
        const double arc = 0.02 * std::sin(pi * j / 4.0);
        p[static_cast<std::size_t>(17 + j)] = {0.26 + 0.045 * j, 0.33 - arc};
        p[static_cast<std::size_t>(22 + j)] = {0.56 + 0.045 * j, 0.33 - arc};
    }
    // nose bridge 27-30, base row 31-35
    for (int j = 0; j < 4; ++j) p[static_cast<std::size_t>(27 + j)] = {0.5, 0.40 + 0.045 * j};
    for (int j = 0; j < 5; ++j) p[static_cast<std::size_t>(31 + j)] = {0.44 + 0.03 * j, 0.60};
    // eyes: hexagons; 36 = outer left corner, 45 = outer right corner
    const double exl = 0.35, exr = 0.65, ey = 0.42;
    const double dx[6] = {-0.05, -0.02, 0.02, 0.05, 0.02, -0.02};
    const double dy[6] = {0.0, -0.02, -0.02, 0.0, 0.02, 0.02};
    for (int j = 0; j < 6; ++j) {
        p[static_cast<std::size_t>(36 + j)] = {exl + dx[j], ey + dy[j]};
        p[static_cast<std::size_t>(42 + j)] = {exr + dx[j], ey + dy[j]};
    }
    // mouth: outer ring 48-59, inner ring 60-67
    const double mx = 0.5, my = 0.72;
    for (int j = 0; j < 12; ++j) {
        const double a = 2.0 * pi * j / 12.0;
        p[static_cast<std::size_t>(48 + j)] = {mx + 0.10 * std::cos(a), my + 0.045 * std::sin(a)};
    }
    for (int j = 0; j < 8; ++j) {
        const double a = 2.0 * pi * j / 8.0;
        p[static_cast<std::size_t>(60 + j)] = {mx + 0.05 * std::cos(a), my + 0.02 * std::sin(a)};
    }
    return ldlab::validate(p);
}

inline bool points_equal(const ldlab::LandmarkSet& a, const ldlab::LandmarkSet& b) {
    if (a.points.size() != b.points.size()) return false;
    for (std::size_t i = 0; i < a.points.size(); ++i)
        if (a.points[i].x != b.points[i].x || a.points[i].y != b.points[i].y) return false;
    return true;
}

inline double max_point_dist(const ldlab::LandmarkSet& a, const ldlab::LandmarkSet& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.points.size(); ++i)
        m = std::max(m, std::hypot(a.points[i].x - b.points[i].x, a.points[i].y - b.points[i].y));
    return m;
}

}  // namespace testutil

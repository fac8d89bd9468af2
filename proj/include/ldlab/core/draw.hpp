#pragma once

// 2-D rasterization helpers shared by the condition-image rasterizer and the
// procedural face renderer. Coordinates are continuous pixel coordinates; the
// pixel at index (ix, iy) owns the unit square with center (ix+0.5, iy+0.5).
// A pixel is painted when its center lies inside the shape, which keeps every
// primitive a pure function of its arguments.

#include <algorithm>
#include <cmath>
#include <vector>

#include "ldlab/core/image.hpp"

namespace ldlab {

struct P2 {
    double x = 0.0, y = 0.0;
};

inline void set_px(ImageF& img, int ix, int iy, const float* color) {
    if (ix < 0 || iy < 0 || ix >= img.w || iy >= img.h) return;
    for (int ch = 0; ch < img.c; ++ch) img.at(iy, ix, ch) = color[ch];
}

inline void paint_disc(ImageF& img, double cx, double cy, double r, const float* color) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1.0)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1.0)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + r)));
    const double r2 = r * r;
    for (int iy = y0; iy <= y1; ++iy)
        for (int ix = x0; ix <= x1; ++ix) {
            const double dx = (ix + 0.5) - cx, dy = (iy + 0.5) - cy;
            if (dx * dx + dy * dy <= r2) set_px(img, ix, iy, color);
        }
}

inline void paint_ellipse(ImageF& img, double cx, double cy, double rx, double ry, const float* color) {
    if (rx <= 0.0 || ry <= 0.0) return;
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx - 1.0)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(cx + rx)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry - 1.0)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(cy + ry)));
    for (int iy = y0; iy <= y1; ++iy)
        for (int ix = x0; ix <= x1; ++ix) {
            const double nx = ((ix + 0.5) - cx) / rx, ny = ((iy + 0.5) - cy) / ry;
            if (nx * nx + ny * ny <= 1.0) set_px(img, ix, iy, color);
        }
}

// Thick segment: all pixels whose center is within radius r of the segment.
inline void paint_segment(ImageF& img, double ax, double ay, double bx, double by, double r, const float* color) {
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - r - 1.0)));
    const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(std::max(ax, bx) + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - r - 1.0)));
    const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(std::max(ay, by) + r)));
    const double ux = bx - ax, uy = by - ay;
    const double len2 = ux * ux + uy * uy;
    const double r2 = r * r;
    for (int iy = y0; iy <= y1; ++iy)
        for (int ix = x0; ix <= x1; ++ix) {
            const double px = (ix + 0.5) - ax, py = (iy + 0.5) - ay;
            double t = len2 > 0.0 ? (px * ux + py * uy) / len2 : 0.0;
            t = std::min(1.0, std::max(0.0, t));
            const double dx = px - t * ux, dy = py - t * uy;
            if (dx * dx + dy * dy <= r2) set_px(img, ix, iy, color);
        }
}

inline void paint_polyline(ImageF& img, const std::vector<P2>& pts, double r, const float* color) {
    for (std::size_t i = 0; i + 1 < pts.size(); ++i)
        paint_segment(img, pts[i].x, pts[i].y, pts[i + 1].x, pts[i + 1].y, r, color);
    if (pts.size() == 1) paint_disc(img, pts[0].x, pts[0].y, r, color);
}

// Even-odd scanline fill evaluated at pixel centers. Vertices exactly on a
// scanline are resolved by the half-open rule so edges are counted once.
inline void fill_polygon(ImageF& img, const std::vector<P2>& poly, const float* color) {
    if (poly.size() < 3) return;
    double ymin = poly[0].y, ymax = poly[0].y;
    for (const auto& p : poly) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const int iy0 = std::max(0, static_cast<int>(std::floor(ymin - 0.5)));
    const int iy1 = std::min(img.h - 1, static_cast<int>(std::ceil(ymax)));
    std::vector<double> xs;
    for (int iy = iy0; iy <= iy1; ++iy) {
        const double yc = iy + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const P2& a = poly[i];
            const P2& b = poly[(i + 1) % poly.size()];
            if ((a.y <= yc) != (b.y <= yc)) {
                const double t = (yc - a.y) / (b.y - a.y);
                xs.push_back(a.x + t * (b.x - a.x));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
            const int x1 = std::min(img.w - 1, static_cast<int>(std::floor(xs[k + 1] - 0.5)));
            for (int ix = x0; ix <= x1; ++ix) set_px(img, ix, iy, color);
        }
    }
}

}  // namespace ldlab

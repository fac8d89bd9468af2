#pragma once

// 68-point facial landmark representation: validation, semantic grouping,
// inter-ocular distance, JSON persistence, and rasterization into the
// condition images consumed by the conditional denoiser.
//
// Index convention (iBUG-style): jaw 0-16, left brow 17-21, right brow 22-26,
// nose 27-35, left eye 36-41, right eye 42-47, mouth 48-67. Coordinates are
// normalized fractions of image width/height in [0,1].

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldlab/core/draw.hpp"
#include "ldlab/core/error.hpp"
#include "ldlab/core/image.hpp"

namespace ldlab {

inline constexpr int kNumLandmarks = 68;
inline constexpr int kOuterLeftEye = 36;
inline constexpr int kOuterRightEye = 45;

struct LandmarkSet {
    std::vector<P2> points;
    int n = kNumLandmarks;
    bool clamped = false;  // set when validate() had to pull a point back into [0,1]
};

enum class GroupName { jaw, left_brow, right_brow, nose, left_eye, right_eye, mouth };

struct SemanticGroup {
    GroupName name;
    int first = 0;  // inclusive
    int last = 0;   // inclusive
};

inline const std::array<SemanticGroup, 7>& semantic_groups() {
    static const std::array<SemanticGroup, 7> groups = {{
        {GroupName::jaw, 0, 16},
        {GroupName::left_brow, 17, 21},
        {GroupName::right_brow, 22, 26},
        {GroupName::nose, 27, 35},
        {GroupName::left_eye, 36, 41},
        {GroupName::right_eye, 42, 47},
        {GroupName::mouth, 48, 67},
    }};
    return groups;
}

inline const char* group_name(GroupName g) {
    switch (g) {
        case GroupName::jaw: return "jaw";
        case GroupName::left_brow: return "left_brow";
        case GroupName::right_brow: return "right_brow";
        case GroupName::nose: return "nose";
        case GroupName::left_eye: return "left_eye";
        case GroupName::right_eye: return "right_eye";
        case GroupName::mouth: return "mouth";
    }
    return "?";
}

inline const SemanticGroup& group(GroupName g) {
    return semantic_groups()[static_cast<std::size_t>(g)];
}

inline P2 group_centroid(const LandmarkSet& lm, GroupName g) {
    const SemanticGroup& sg = group(g);
    P2 c;
    for (int i = sg.first; i <= sg.last; ++i) {
        c.x += lm.points[static_cast<std::size_t>(i)].x;
        c.y += lm.points[static_cast<std::size_t>(i)].y;
    }
    const double k = 1.0 / static_cast<double>(sg.last - sg.first + 1);
    return {c.x * k, c.y * k};
}

// Coordinates slightly outside [0,1] (from aggressive edits or loose
// annotations) are clamped and flagged; anything beyond the tolerance band
// is treated as corrupt input.
inline constexpr double kClampBandLo = -0.25;
inline constexpr double kClampBandHi = 1.25;

inline LandmarkSet validate(const std::vector<P2>& raw_points, int n = kNumLandmarks) {
    require(static_cast<int>(raw_points.size()) == n, Err::WrongCount,
            "expected " + std::to_string(n) + " points, got " + std::to_string(raw_points.size()));
    LandmarkSet out;
    out.n = n;
    out.points.reserve(raw_points.size());
    for (const P2& p : raw_points) {
        require(std::isfinite(p.x) && std::isfinite(p.y), Err::NonFinite, "non-finite landmark coordinate");
        require(p.x >= kClampBandLo && p.x <= kClampBandHi && p.y >= kClampBandLo && p.y <= kClampBandHi,
                Err::OutOfRange, "landmark coordinate outside tolerance band [-0.25, 1.25]");
        P2 q{std::min(1.0, std::max(0.0, p.x)), std::min(1.0, std::max(0.0, p.y))};
        if (q.x != p.x || q.y != p.y) out.clamped = true;
        out.points.push_back(q);
    }
    return out;
}

// Euclidean distance between the outer eye corners, the NME normalizer.
inline double interocular_distance(const LandmarkSet& lm) {
    require(lm.n == kNumLandmarks, Err::WrongCount, "interocular_distance needs the 68-point convention");
    const P2& a = lm.points[kOuterLeftEye];
    const P2& b = lm.points[kOuterRightEye];
    const double d = std::hypot(a.x - b.x, a.y - b.y);
    require(d >= 1e-6, Err::DegenerateFace, "outer eye corners coincide");
    return d;
}

// --- condition-image rasterization -----------------------------------------

using ConditionImage = ImageF;

struct RasterSpec {
    int height = 64;
    int width = 64;
    double stroke_radius_px = 1.0;
    bool draw_polylines = true;
    // One RGB color per semantic group, in semantic_groups() order.
    std::array<std::array<float, 3>, 7> group_colors = {{
        {1.0f, 1.0f, 1.0f},  // jaw
        {1.0f, 0.4f, 0.0f},  // left_brow
        {1.0f, 0.0f, 0.4f},  // right_brow
        {0.0f, 1.0f, 0.0f},  // nose
        {0.2f, 0.6f, 1.0f},  // left_eye
        {0.2f, 0.2f, 1.0f},  // right_eye
        {1.0f, 0.0f, 1.0f},  // mouth
    }};
};

// Deterministic: identical (lm, spec) pairs produce bit-identical images.
inline ConditionImage rasterize(const LandmarkSet& lm, const RasterSpec& spec) {
    require(spec.height >= 8 && spec.width >= 8, Err::BadResolution, "raster resolution below 8x8");
    ConditionImage img(spec.height, spec.width, 3);
    const double W = spec.width, H = spec.height;
    const int avail = static_cast<int>(lm.points.size());
    for (const SemanticGroup& sg : semantic_groups()) {
        if (sg.first >= avail) break;  // n=0 test mode draws nothing
        const float* color = spec.group_colors[static_cast<std::size_t>(sg.name)].data();
        std::vector<P2> px;
        px.reserve(static_cast<std::size_t>(sg.last - sg.first + 1));
        for (int i = sg.first; i <= sg.last && i < avail; ++i)
            px.push_back({lm.points[static_cast<std::size_t>(i)].x * W, lm.points[static_cast<std::size_t>(i)].y * H});
        // polylines only make sense for complete groups; partial sets (test
        // mode) still get their point discs
        if (spec.draw_polylines && sg.last < avail) paint_polyline(img, px, spec.stroke_radius_px, color);
        for (const P2& p : px) paint_disc(img, p.x, p.y, spec.stroke_radius_px, color);
    }
    return img;
}

// --- JSON persistence -------------------------------------------------------
// {"version":1, "n":68, "normalized":true, "points":[[x,y],...]}

inline nlohmann::json landmarks_to_json(const LandmarkSet& lm) {
    nlohmann::json pts = nlohmann::json::array();
    for (const P2& p : lm.points) pts.push_back({p.x, p.y});
    return {{"version", 1}, {"n", lm.n}, {"normalized", true}, {"points", std::move(pts)}};
}

inline LandmarkSet landmarks_from_json(const nlohmann::json& j) {
    require(j.is_object() && j.contains("version"), Err::BadFormat, "landmark file: missing version");
    require(j["version"].is_number_integer() && j["version"].get<int>() == 1, Err::BadFormat,
            "landmark file: unknown version");
    require(j.contains("n") && j.contains("normalized") && j.contains("points"), Err::BadFormat,
            "landmark file: missing fields");
    require(j["normalized"].get<bool>(), Err::BadFormat, "landmark file: expected normalized coordinates");
    const int n = j["n"].get<int>();
    std::vector<P2> pts;
    for (const auto& e : j["points"]) {
        require(e.is_array() && e.size() == 2, Err::BadFormat, "landmark file: bad point entry");
        pts.push_back({e[0].get<double>(), e[1].get<double>()});
    }
    return validate(pts, n);
}

}  // namespace ldlab

#pragma once

// Procedural toy face domain: a deterministic renderer over 68-point
// landmark sets, 25 registered styles plus a neutral base style, landmark
// sampling around a fixed template, corpus builders, and the color-mass
// alignment oracle.
//
// Feature colors live in disjoint RGB wedges across every style (eyes
// blue-ish, nose green-ish, mouth red-ish, skin warm low-sat, backgrounds
// desaturated, outlines dark), so nearest-palette-color classification
// recovers which pixels belong to which feature without knowing the style
// that produced an image.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "ldlab/core/draw.hpp"
#include "ldlab/core/error.hpp"
#include "ldlab/core/image.hpp"
#include "ldlab/core/png_io.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/dataset.hpp"
#include "ldlab/landmarks.hpp"

namespace ldlab {

struct StyleSpec {
    int style_id = 0;
    std::array<float, 3> background{};
    std::array<float, 3> skin{};
    std::array<float, 3> outline{};
    std::array<float, 3> eye{};
    std::array<float, 3> nose{};
    std::array<float, 3> mouth{};
    double line_width_px = 1.0;  // stroke width at 64 px resolution
    double exaggeration = 1.0;   // scales feature ellipse radii
};

namespace detail {

inline std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
    h = std::fmod(std::fmod(h, 360.0) + 360.0, 360.0) / 60.0;
    const int i = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    double r = 0, g = 0, b = 0;
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
    return {static_cast<float>(r), static_cast<float>(g), static_cast<float>(b)};
}

// Well-mixed unit draw per (style, slot); keeps palettes decorrelated while
// remaining a pure function.
inline double style_unit(int style_id, int slot) {
    const std::uint64_t s = derive_seed(0xFACE5u, "style-palette",
                                        static_cast<std::uint64_t>(style_id) * 64 + slot);
    return static_cast<double>(s >> 11) * 0x1.0p-53;
}

}  // namespace detail

inline StyleSpec base_style() {
    StyleSpec s;
    s.style_id = 0;
    s.background = {0.85f, 0.85f, 0.87f};
    s.skin = {0.91f, 0.76f, 0.65f};
    s.outline = {0.15f, 0.12f, 0.12f};
    s.eye = {0.25f, 0.45f, 0.85f};
    s.nose = {0.30f, 0.65f, 0.35f};
    s.mouth = {0.80f, 0.25f, 0.35f};
    s.line_width_px = 1.0;
    s.exaggeration = 1.0;
    return s;
}

inline const std::vector<StyleSpec>& styles() {
    static const std::vector<StyleSpec> all = [] {
        std::vector<StyleSpec> v;
        v.reserve(25);
        for (int id = 1; id <= 25; ++id) {
            auto u = [id](int slot) { return detail::style_unit(id, slot); };
            StyleSpec s;
            s.style_id = id;
            s.eye = detail::hsv_to_rgb(205.0 + 50.0 * u(0), 0.60 + 0.30 * u(1), 0.60 + 0.35 * u(2));
            s.nose = detail::hsv_to_rgb(95.0 + 50.0 * u(3), 0.55 + 0.30 * u(4), 0.55 + 0.35 * u(5));
            s.mouth = detail::hsv_to_rgb(345.0 + 30.0 * u(6), 0.60 + 0.35 * u(7), 0.60 + 0.35 * u(8));
            s.skin = detail::hsv_to_rgb(22.0 + 18.0 * u(9), 0.22 + 0.20 * u(10), 0.62 + 0.33 * u(11));
            const double bg_val = (id % 2 == 1) ? 0.88 + 0.10 * u(14) : 0.16 + 0.12 * u(14);
            s.background = detail::hsv_to_rgb(360.0 * u(12), 0.04 + 0.08 * u(13), bg_val);
            s.outline = detail::hsv_to_rgb(360.0 * u(15), 0.10 + 0.15 * u(16), 0.06 + 0.12 * u(17));
            s.line_width_px = 1.0 + 0.5 * static_cast<double>(id % 3);
            s.exaggeration = 0.8 + 0.6 * u(18);
            v.push_back(s);
        }
        return v;
    }();
    return all;
}

inline const StyleSpec& style_by_id(int style_id) {
    static const StyleSpec base = base_style();
    if (style_id == 0) return base;
    require(style_id >= 1 && style_id <= 25, Err::OutOfRange,
            "style_id must lie in [0,25], got " + std::to_string(style_id));
    return styles()[static_cast<std::size_t>(style_id - 1)];
}

// --- landmark template and sampling -----------------------------------------

inline LandmarkSet face_template() {
    std::vector<P2> p(kNumLandmarks);
    const double pi = 3.14159265358979323846;
    for (int i = 0; i <= 16; ++i) {  // jaw
        const double t = static_cast<double>(i) / 16.0;
        p[static_cast<std::size_t>(i)] = {0.5 - 0.32 * std::cos(pi * t), 0.34 + 0.50 * std::sin(pi * t)};
    }
    for (int j = 0; j < 5; ++j) {  // brows
        const double t = static_cast<double>(j) / 4.0;
        const double arch = 0.025 * std::sin(pi * t);
        p[static_cast<std::size_t>(17 + j)] = {0.27 + 0.16 * t, 0.345 - arch};
        p[static_cast<std::size_t>(22 + j)] = {0.57 + 0.16 * t, 0.345 - arch};
    }
    for (int j = 0; j < 4; ++j)  // nose bridge
        p[static_cast<std::size_t>(27 + j)] = {0.5, 0.40 + 0.06 * j};
    for (int j = 0; j < 5; ++j)  // nose base
        p[static_cast<std::size_t>(31 + j)] = {0.44 + 0.03 * j, 0.64};
    const double edx[6] = {-0.055, -0.025, 0.025, 0.055, 0.025, -0.025};
    const double edy[6] = {0.0, -0.018, -0.018, 0.0, 0.018, 0.018};
    for (int j = 0; j < 6; ++j) {
        p[static_cast<std::size_t>(36 + j)] = {0.365 + edx[j], 0.42 + edy[j]};
        p[static_cast<std::size_t>(42 + j)] = {0.635 + edx[j], 0.42 + edy[j]};
    }
    const double mcx = 0.5, mcy = 0.70;
    for (int j = 0; j < 12; ++j) {  // outer lip ring, 48 at the left corner
        const double a = pi - pi * 2.0 * static_cast<double>(j) / 12.0;
        p[static_cast<std::size_t>(48 + j)] = {mcx + 0.085 * std::cos(a), mcy - 0.045 * std::sin(a)};
    }
    for (int j = 0; j < 8; ++j) {  // inner lip ring, 60 at the left corner
        const double a = pi - pi * 2.0 * static_cast<double>(j) / 8.0;
        p[static_cast<std::size_t>(60 + j)] = {mcx + 0.050 * std::cos(a), mcy - 0.020 * std::sin(a)};
    }
    return validate(p);
}

// Template plus bounded smooth perturbation: a small global similarity
// jitter, coherent per-group offsets, and tiny per-point noise. Magnitudes
// are chosen so every draw stays inside [0,1] without clamping.
inline LandmarkSet sample_base_landmarks(std::uint64_t rng_seed, double perturb_scale = 1.0) {
    require(perturb_scale >= 0.0 && perturb_scale <= 1.0, Err::OutOfRange,
            "perturb_scale must lie in [0,1]");
    const LandmarkSet tpl = face_template();
    Rng rng(derive_seed(rng_seed, "base-landmarks"));

    const double rot = rng.uniform(-0.10, 0.10) * perturb_scale;  // ~±6 degrees
    const double sc = 1.0 + rng.uniform(-0.07, 0.07) * perturb_scale;
    const double tx = rng.uniform(-0.025, 0.025) * perturb_scale;
    const double ty = rng.uniform(-0.025, 0.025) * perturb_scale;
    const double cx = 0.5, cy = 0.55;
    const double cr = std::cos(rot), sr = std::sin(rot);

    std::vector<P2> pts(kNumLandmarks);
    for (int i = 0; i < kNumLandmarks; ++i) {
        const P2& q = tpl.points[static_cast<std::size_t>(i)];
        const double dx = q.x - cx, dy = q.y - cy;
        pts[static_cast<std::size_t>(i)] = {cx + sc * (cr * dx - sr * dy) + tx,
                                            cy + sc * (sr * dx + cr * dy) + ty};
    }
    for (const SemanticGroup& sg : semantic_groups()) {
        const double gx = rng.uniform(-0.013, 0.013) * perturb_scale;
        const double gy = rng.uniform(-0.013, 0.013) * perturb_scale;
        for (int i = sg.first; i <= sg.last; ++i) {
            pts[static_cast<std::size_t>(i)].x += gx;
            pts[static_cast<std::size_t>(i)].y += gy;
        }
    }
    for (auto& q : pts) {
        q.x += rng.uniform(-0.004, 0.004) * perturb_scale;
        q.y += rng.uniform(-0.004, 0.004) * perturb_scale;
    }
    return validate(pts);
}

// --- rendering ----------------------------------------------------------------

inline ImageF render_face(const LandmarkSet& lm, const StyleSpec& style, int resolution) {
    require(lm.n == kNumLandmarks, Err::WrongCount, "render_face needs the 68-point convention");
    require(resolution >= 16 && resolution <= 1024, Err::BadResolution,
            "resolution must lie in [16,1024]");
    const double res = static_cast<double>(resolution);
    ImageF img(resolution, resolution, 3);
    fill(img, style.background.data());

    auto at = [&](int i) {
        const P2& q = lm.points[static_cast<std::size_t>(i)];
        return P2{q.x * res, q.y * res};
    };
    auto group_px_centroid = [&](GroupName g) {
        const P2 c = group_centroid(lm, g);
        return P2{c.x * res, c.y * res};
    };
    auto half_extents = [&](int first, int last, const P2& c) {
        double ex = 0.0, ey = 0.0;
        for (int i = first; i <= last; ++i) {
            const P2 q = at(i);
            ex = std::max(ex, std::abs(q.x - c.x));
            ey = std::max(ey, std::abs(q.y - c.y));
        }
        return P2{ex, ey};
    };

    // face region: jaw arc plus a synthesized forehead bezier
    std::vector<P2> poly;
    poly.reserve(24);
    for (int i = 0; i <= 16; ++i) poly.push_back(at(i));
    const P2 p0 = at(0), p16 = at(16);
    const P2 mid{(p0.x + p16.x) / 2.0, (p0.y + p16.y) / 2.0};
    const double chin_y = at(8).y;
    const double face_h = chin_y - mid.y;
    const P2 apex{mid.x, mid.y - 0.55 * face_h};
    const P2 ctrl{2.0 * apex.x - mid.x, 2.0 * apex.y - mid.y};
    for (int k = 1; k < 8; ++k) {
        const double t = static_cast<double>(k) / 8.0;
        const double a = (1.0 - t) * (1.0 - t), b = 2.0 * t * (1.0 - t), c = t * t;
        poly.push_back({a * p16.x + b * ctrl.x + c * p0.x, a * p16.y + b * ctrl.y + c * p0.y});
    }
    fill_polygon(img, poly, style.skin.data());

    const double stroke = 0.5 * style.line_width_px * res / 64.0;
    std::vector<P2> jaw_px;
    for (int i = 0; i <= 16; ++i) jaw_px.push_back(at(i));
    paint_polyline(img, jaw_px, stroke, style.outline.data());

    for (const auto& [first, last] : {std::pair<int, int>{17, 21}, {22, 26}}) {
        std::vector<P2> brow;
        for (int i = first; i <= last; ++i) brow.push_back(at(i));
        paint_polyline(img, brow, stroke * 1.2, style.outline.data());
    }

    const double ex_pad = 0.012 * res;
    for (GroupName g : {GroupName::left_eye, GroupName::right_eye}) {
        const int first = g == GroupName::left_eye ? 36 : 42;
        const P2 c = group_px_centroid(g);
        const P2 he = half_extents(first, first + 5, c);
        const double rx = (he.x + ex_pad) * style.exaggeration;
        const double ry = (he.y + ex_pad) * style.exaggeration;
        paint_ellipse(img, c.x, c.y, rx, ry, style.eye.data());
        paint_disc(img, c.x, c.y, 0.45 * std::min(rx, ry), style.outline.data());
    }
    {
        const P2 c = group_px_centroid(GroupName::nose);
        const P2 he = half_extents(27, 35, c);
        paint_ellipse(img, c.x, c.y, (0.55 * he.x + 0.008 * res) * style.exaggeration,
                      (0.50 * he.y + 0.008 * res) * style.exaggeration, style.nose.data());
    }
    {
        const P2 c = group_px_centroid(GroupName::mouth);
        const P2 he = half_extents(48, 67, c);
        paint_ellipse(img, c.x, c.y, (he.x + 0.01 * res) * style.exaggeration,
                      (he.y + 0.01 * res) * style.exaggeration, style.mouth.data());
    }
    return img;
}

// --- alignment oracle -----------------------------------------------------------

struct AlignmentParams {
    double color_cap = 0.35;  // max RGB distance for a pixel to count as a feature
};

struct AlignmentReport {
    double left_eye_px = 0.0;
    double right_eye_px = 0.0;
    double nose_px = 0.0;
    double mouth_px = 0.0;
    double mean_px = 0.0;
};

namespace detail {

enum class ColorClass { other = 0, eye, nose, mouth };

struct PaletteEntry {
    std::array<float, 3> rgb;
    ColorClass cls;
};

inline const std::vector<PaletteEntry>& class_palette() {
    static const std::vector<PaletteEntry> entries = [] {
        std::vector<PaletteEntry> v;
        auto push = [&](const StyleSpec& s) {
            v.push_back({s.background, ColorClass::other});
            v.push_back({s.skin, ColorClass::other});
            v.push_back({s.outline, ColorClass::other});
            v.push_back({s.eye, ColorClass::eye});
            v.push_back({s.nose, ColorClass::nose});
            v.push_back({s.mouth, ColorClass::mouth});
        };
        push(base_style());
        for (const auto& s : styles()) push(s);
        return v;
    }();
    return entries;
}

inline P2 mass_centroid(const std::vector<P2>& pts) {
    double sx = 0.0, sy = 0.0;
    for (const P2& p : pts) {
        sx += p.x;
        sy += p.y;
    }
    return {sx / static_cast<double>(pts.size()), sy / static_cast<double>(pts.size())};
}

}  // namespace detail

inline AlignmentReport measure_alignment(const ImageF& img, const LandmarkSet& lm,
                                         const AlignmentParams& ap = {}) {
    require(img.c == 3, Err::ShapeMismatch, "alignment oracle expects RGB images");
    require(lm.n == kNumLandmarks, Err::WrongCount, "alignment oracle needs 68 points");
    const auto& pal = detail::class_palette();
    const double cap2 = ap.color_cap * ap.color_cap;

    std::vector<P2> eye_px, nose_px, mouth_px;
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const float r = img.at(y, x, 0), g = img.at(y, x, 1), b = img.at(y, x, 2);
            double best = 1e30;
            detail::ColorClass cls = detail::ColorClass::other;
            for (const auto& e : pal) {
                const double dr = r - e.rgb[0], dg = g - e.rgb[1], db = b - e.rgb[2];
                const double d2 = dr * dr + dg * dg + db * db;
                if (d2 < best) {
                    best = d2;
                    cls = e.cls;
                }
            }
            if (best > cap2) continue;
            const P2 p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
            if (cls == detail::ColorClass::eye) eye_px.push_back(p);
            else if (cls == detail::ColorClass::nose) nose_px.push_back(p);
            else if (cls == detail::ColorClass::mouth) mouth_px.push_back(p);
        }
    }
    require(!eye_px.empty(), Err::FeatureNotFound, "no eye-colored pixels found");
    require(!nose_px.empty(), Err::FeatureNotFound, "no nose-colored pixels found");
    require(!mouth_px.empty(), Err::FeatureNotFound, "no mouth-colored pixels found");

    const double split_x = detail::mass_centroid(eye_px).x;
    std::vector<P2> left, right;
    for (const P2& p : eye_px) (p.x < split_x ? left : right).push_back(p);
    require(!left.empty() && !right.empty(), Err::FeatureNotFound,
            "could not separate two eye masses");

    auto dist = [&](const std::vector<P2>& mass, GroupName g) {
        const P2 mc = detail::mass_centroid(mass);
        const P2 lc = group_centroid(lm, g);
        const double dx = mc.x - lc.x * img.w, dy = mc.y - lc.y * img.h;
        return std::sqrt(dx * dx + dy * dy);
    };
    AlignmentReport rep;
    rep.left_eye_px = dist(left, GroupName::left_eye);
    rep.right_eye_px = dist(right, GroupName::right_eye);
    rep.nose_px = dist(nose_px, GroupName::nose);
    rep.mouth_px = dist(mouth_px, GroupName::mouth);
    rep.mean_px = (rep.left_eye_px + rep.right_eye_px + rep.nose_px + rep.mouth_px) / 4.0;
    return rep;
}

// --- corpus builders --------------------------------------------------------------

// n base-domain records (style 0, no edits). Returns the manifest path.
inline std::string build_stage1_corpus(int n, std::uint64_t rng_seed, const std::string& out_dir,
                                       int resolution = 64) {
    require(n >= 1, Err::BadConfig, "corpus size must be >= 1");
    std::error_code ec;
    std::filesystem::create_directories(std::filesystem::path(out_dir) / "images", ec);
    std::filesystem::create_directories(std::filesystem::path(out_dir) / "landmarks", ec);
    require(!ec, Err::IoError, "cannot create corpus directories under " + out_dir);

    std::vector<DatasetRecord> records;
    records.reserve(static_cast<std::size_t>(n));
    const StyleSpec base = base_style();
    for (int i = 0; i < n; ++i) {
        const std::uint64_t seed_i = derive_seed(rng_seed, "stage1-record", static_cast<std::uint64_t>(i));
        const LandmarkSet lm = sample_base_landmarks(seed_i);
        const ImageF img = render_face(lm, base, resolution);
        DatasetRecord r;
        r.image_path = "images/" + detail::index_name(i, ".png");
        r.landmarks_path = "landmarks/" + detail::index_name(i, ".json");
        r.style_id = 0;
        r.seed = seed_i;
        png_write((std::filesystem::path(out_dir) / r.image_path).string(), img);
        save_landmarks_json((std::filesystem::path(out_dir) / r.landmarks_path).string(), lm);
        records.push_back(std::move(r));
    }
    const std::string manifest = (std::filesystem::path(out_dir) / "manifest.jsonl").string();
    write_manifest(manifest, records);
    return manifest;
}

// per_style records for each listed style id (1..25). Returns the manifest path.
inline std::string build_stage2_corpus(int per_style, const std::vector<int>& style_ids,
                                       std::uint64_t rng_seed, const std::string& out_dir,
                                       int resolution = 64) {
    require(per_style >= 1, Err::BadConfig, "per_style must be >= 1");
    require(!style_ids.empty(), Err::BadConfig, "style list must not be empty");
    for (int sid : style_ids)
        require(sid >= 1 && sid <= 25, Err::OutOfRange, "stage-2 styles must lie in [1,25]");
    std::error_code ec;
    std::filesystem::create_directories(std::filesystem::path(out_dir) / "images", ec);
    std::filesystem::create_directories(std::filesystem::path(out_dir) / "landmarks", ec);
    require(!ec, Err::IoError, "cannot create corpus directories under " + out_dir);

    std::vector<DatasetRecord> records;
    records.reserve(style_ids.size() * static_cast<std::size_t>(per_style));
    int i = 0;
    for (int sid : style_ids) {
        for (int k = 0; k < per_style; ++k, ++i) {
            const std::uint64_t seed_i =
                derive_seed(rng_seed, "stage2-record", static_cast<std::uint64_t>(i));
            const LandmarkSet lm = sample_base_landmarks(seed_i);
            const ImageF img = render_face(lm, style_by_id(sid), resolution);
            DatasetRecord r;
            r.image_path = "images/" + detail::index_name(i, ".png");
            r.landmarks_path = "landmarks/" + detail::index_name(i, ".json");
            r.style_id = sid;
            r.seed = seed_i;
            png_write((std::filesystem::path(out_dir) / r.image_path).string(), img);
            save_landmarks_json((std::filesystem::path(out_dir) / r.landmarks_path).string(), lm);
            records.push_back(std::move(r));
        }
    }
    const std::string manifest = (std::filesystem::path(out_dir) / "manifest.jsonl").string();
    write_manifest(manifest, records);
    return manifest;
}

}  // namespace ldlab

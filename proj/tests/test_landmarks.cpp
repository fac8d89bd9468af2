#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/landmarks.hpp"

using namespace ldlab;
using Catch::Approx;
using testutil::make_test_face;

namespace {
bool throws_code(Err want, const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code() == want;
    }
    return false;
}
}  // namespace

TEST_CASE("semantic groups tile 0..67 exactly", "[landmarks]") {
    std::array<int, 68> hit{};
    for (const auto& g : semantic_groups()) {
        REQUIRE(g.first <= g.last);
        for (int i = g.first; i <= g.last; ++i) ++hit[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 68; ++i) REQUIRE(hit[static_cast<std::size_t>(i)] == 1);
    REQUIRE(group(GroupName::jaw).first == 0);
    REQUIRE(group(GroupName::jaw).last == 16);
    REQUIRE(group(GroupName::mouth).last == 67);
}

TEST_CASE("validate accepts in-range faces unchanged", "[landmarks]") {
    const auto lm = make_test_face();
    REQUIRE(lm.n == 68);
    REQUIRE_FALSE(lm.clamped);
    const auto again = validate(lm.points);
    REQUIRE(testutil::points_equal(lm, again));  // idempotent
}

TEST_CASE("validate rejects wrong counts", "[landmarks]") {
    auto pts = make_test_face().points;
    pts.pop_back();
    REQUIRE(throws_code(Err::WrongCount, [&] { validate(pts); }));
}

TEST_CASE("validate clamps the tolerance band and rejects beyond it", "[landmarks]") {
    auto pts = make_test_face().points;
    pts[10] = {1.1, 0.5};
    const auto lm = validate(pts);
    REQUIRE(lm.clamped);
    REQUIRE(lm.points[10].x == 1.0);
    REQUIRE(lm.points[10].y == 0.5);

    pts[10] = {1.3, 0.5};
    REQUIRE(throws_code(Err::OutOfRange, [&] { validate(pts); }));

    pts[10] = {std::numeric_limits<double>::quiet_NaN(), 0.5};
    REQUIRE(throws_code(Err::NonFinite, [&] { validate(pts); }));
}

TEST_CASE("interocular distance formula", "[landmarks]") {
    auto lm = make_test_face();
    lm.points[kOuterLeftEye] = {0.3, 0.4};
    lm.points[kOuterRightEye] = {0.7, 0.4};
    REQUIRE(interocular_distance(lm) == Approx(0.4).epsilon(1e-12));

    lm.points[kOuterRightEye] = {0.6, 0.8};  // 3-4-5 triangle
    REQUIRE(interocular_distance(lm) == Approx(0.5).epsilon(1e-12));

    lm.points[kOuterRightEye] = lm.points[kOuterLeftEye];
    REQUIRE(throws_code(Err::DegenerateFace, [&] { interocular_distance(lm); }));
}

TEST_CASE("interocular distance is translation invariant", "[landmarks]") {
    const auto lm = make_test_face();
    const double base = interocular_distance(lm);
    Rng rng(3);
    for (int k = 0; k < 20; ++k) {
        const double dx = rng.uniform(-0.08, 0.08), dy = rng.uniform(-0.08, 0.08);
        auto moved = lm;
        for (auto& p : moved.points) {
            p.x += dx;
            p.y += dy;
        }
        REQUIRE(interocular_distance(moved) == Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("rasterize of an empty set is all zero", "[landmarks]") {
    LandmarkSet empty;
    empty.points.clear();
    empty.n = 0;
    const auto img = rasterize(empty, RasterSpec{});
    for (float v : img.px) REQUIRE(v == 0.0f);
}

TEST_CASE("rasterize single point stays within one pixel of its cell", "[landmarks]") {
    LandmarkSet one;
    one.points = {{0.5, 0.5}};
    one.n = 1;
    RasterSpec spec;
    spec.stroke_radius_px = 1.0;
    const auto img = rasterize(one, spec);
    bool any = false;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            float mag = 0.0f;
            for (int c = 0; c < 3; ++c) mag += img.at(y, x, c);
            if (mag > 0.0f) {
                any = true;
                REQUIRE(std::abs(x - 32) <= 1);
                REQUIRE(std::abs(y - 32) <= 1);
            }
        }
    REQUIRE(any);
}

TEST_CASE("rasterize is bit-deterministic and marks every landmark", "[landmarks]") {
    const auto lm = make_test_face();
    RasterSpec spec;
    const auto a = rasterize(lm, spec);
    const auto b = rasterize(lm, spec);
    REQUIRE(a.px == b.px);

    // the pixel whose cell contains (x*W, y*H) is a nearest pixel and must be painted
    for (const auto& p : lm.points) {
        const double px = p.x * spec.width, py = p.y * spec.height;
        const int ix = std::clamp(static_cast<int>(px), 0, spec.width - 1);
        const int iy = std::clamp(static_cast<int>(py), 0, spec.height - 1);
        float mag = 0.0f;
        for (int c = 0; c < 3; ++c) mag += a.at(iy, ix, c);
        REQUIRE(mag > 0.0f);
    }
}

TEST_CASE("rasterize rejects tiny resolutions", "[landmarks]") {
    RasterSpec spec;
    spec.height = 4;
    REQUIRE(throws_code(Err::BadResolution, [&] { rasterize(make_test_face(), spec); }));
}

TEST_CASE("groups render in distinct colors", "[landmarks]") {
    const auto lm = make_test_face();
    RasterSpec spec;
    const auto img = rasterize(lm, spec);
    // left-eye center pixel should carry the left-eye palette color
    const auto c = group_centroid(lm, GroupName::left_eye);
    const int ix = static_cast<int>(c.x * spec.width);
    const int iy = static_cast<int>(c.y * spec.height);
    bool found = false;
    for (int dy = -2; dy <= 2 && !found; ++dy)
        for (int dx = -2; dx <= 2 && !found; ++dx) {
            const int x = ix + dx, y = iy + dy;
            if (x < 0 || y < 0 || x >= img.w || y >= img.h) continue;
            const auto& want = spec.group_colors[static_cast<std::size_t>(GroupName::left_eye)];
            if (img.at(y, x, 0) == want[0] && img.at(y, x, 1) == want[1] && img.at(y, x, 2) == want[2]) found = true;
        }
    REQUIRE(found);
}

TEST_CASE("landmark json round trip and version gate", "[landmarks]") {
    const auto lm = make_test_face();
    const auto j = landmarks_to_json(lm);
    REQUIRE(j["version"] == 1);
    REQUIRE(j["n"] == 68);
    REQUIRE(j["normalized"] == true);
    const auto back = landmarks_from_json(j);
    REQUIRE(testutil::points_equal(lm, back));

    auto bad = j;
    bad["version"] = 2;
    REQUIRE(throws_code(Err::BadFormat, [&] { landmarks_from_json(bad); }));
}

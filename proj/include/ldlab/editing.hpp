#pragma once

// The six landmark editing attributes and the sample-two-edits plan used for
// synthetic dataset generation. Every edit is a pure geometric map on a
// LandmarkSet; exaggerated results are clamped back into [0,1] rather than
// rejected, so they stay renderable.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldlab/core/error.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/landmarks.hpp"

namespace ldlab {

enum class EditKind {
    chubby,
    linear_transform,
    open_eyes,
    raised_eyebrow,
    stretched_nostrils,
    component_shift,
};
inline constexpr int kNumEditKinds = 6;

enum class EditSide { left, right, both };
enum class EditComponent { left_eye, right_eye, nose, mouth };

inline const char* edit_kind_name(EditKind k) {
    switch (k) {
        case EditKind::chubby: return "chubby";
        case EditKind::linear_transform: return "linear_transform";
        case EditKind::open_eyes: return "open_eyes";
        case EditKind::raised_eyebrow: return "raised_eyebrow";
        case EditKind::stretched_nostrils: return "stretched_nostrils";
        case EditKind::component_shift: return "component_shift";
    }
    return "?";
}

inline EditKind edit_kind_from_name(const std::string& s) {
    for (int i = 0; i < kNumEditKinds; ++i) {
        const EditKind k = static_cast<EditKind>(i);
        if (s == edit_kind_name(k)) return k;
    }
    fail(Err::UnknownKind, "unknown edit kind: " + s);
}

struct EditOp {
    EditKind kind = EditKind::chubby;
    double strength = 0.0;
    // linear_transform
    std::array<std::array<double, 2>, 2> matrix = {{{1.0, 0.0}, {0.0, 1.0}}};
    std::array<double, 2> offset = {0.0, 0.0};
    // open_eyes / raised_eyebrow
    EditSide side = EditSide::both;
    // component_shift
    EditComponent component = EditComponent::mouth;
    std::array<double, 2> delta = {0.0, 0.0};
};

struct StrengthRange {
    double lo = 0.0, hi = 0.0;
};

struct EditConfig {
    std::array<bool, kNumEditKinds> enabled = {true, true, true, true, true, true};
    // Strength range per kind; for component_shift the strength is the shift
    // magnitude, for linear_transform it scales the deviation from identity.
    std::array<StrengthRange, kNumEditKinds> strength = {{
        {-0.15, 0.25},  // chubby: radial jaw scale (1+s)
        {0.0, 1.0},     // linear_transform: deviation blend
        {-0.5, 1.0},    // open_eyes: eyelid vertical scale (1+s)
        {0.0, 0.3},     // raised_eyebrow: upward shift s * interocular
        {0.0, 0.6},     // stretched_nostrils: horizontal scale (1+s)
        {0.0, 0.05},    // component_shift: displacement magnitude
    }};
    // linear_transform parameter ranges
    double max_rotation_rad = 10.0 * 3.14159265358979323846 / 180.0;
    StrengthRange scale_range = {0.85, 1.15};
    double max_shear = 0.1;
    double max_offset = 0.05;
};

struct EditPlan {
    std::array<EditOp, 2> ops;
    std::uint64_t seed = 0;
};

namespace editdetail {

inline bool is_identity(const EditOp& op) {
    switch (op.kind) {
        case EditKind::linear_transform:
            return op.strength == 0.0 ||
                   (op.matrix[0][0] == 1.0 && op.matrix[0][1] == 0.0 && op.matrix[1][0] == 0.0 &&
                    op.matrix[1][1] == 1.0 && op.offset[0] == 0.0 && op.offset[1] == 0.0);
        case EditKind::component_shift:
            return op.delta[0] == 0.0 && op.delta[1] == 0.0;
        default:
            return op.strength == 0.0;
    }
}

inline void check_strength(const EditOp& op, const EditConfig& cfg) {
    const auto& r = cfg.strength[static_cast<std::size_t>(op.kind)];
    require(op.strength >= r.lo && op.strength <= r.hi, Err::IllegalStrength,
            std::string(edit_kind_name(op.kind)) + " strength " + std::to_string(op.strength) +
                " outside [" + std::to_string(r.lo) + ", " + std::to_string(r.hi) + "]");
    if (op.kind == EditKind::linear_transform) {
        const double det = op.matrix[0][0] * op.matrix[1][1] - op.matrix[0][1] * op.matrix[1][0];
        require(det >= 0.5 && det <= 2.0, Err::IllegalStrength, "linear_transform determinant outside [0.5, 2]");
    }
}

inline P2 centroid(const LandmarkSet& lm, int first, int last) {
    P2 c;
    for (int i = first; i <= last; ++i) {
        c.x += lm.points[static_cast<std::size_t>(i)].x;
        c.y += lm.points[static_cast<std::size_t>(i)].y;
    }
    const double k = 1.0 / static_cast<double>(last - first + 1);
    return {c.x * k, c.y * k};
}

inline void eye_indices(EditSide side, std::vector<GroupName>& out) {
    out.clear();
    if (side == EditSide::left || side == EditSide::both) out.push_back(GroupName::left_eye);
    if (side == EditSide::right || side == EditSide::both) out.push_back(GroupName::right_eye);
}

inline void brow_indices(EditSide side, std::vector<GroupName>& out) {
    out.clear();
    if (side == EditSide::left || side == EditSide::both) out.push_back(GroupName::left_brow);
    if (side == EditSide::right || side == EditSide::both) out.push_back(GroupName::right_brow);
}

inline GroupName component_group(EditComponent c) {
    switch (c) {
        case EditComponent::left_eye: return GroupName::left_eye;
        case EditComponent::right_eye: return GroupName::right_eye;
        case EditComponent::nose: return GroupName::nose;
        case EditComponent::mouth: return GroupName::mouth;
    }
    return GroupName::mouth;
}

}  // namespace editdetail

// Applies one edit. Points that leave [0,1] are clamped back; the clamp flag
// is carried on the result.
inline LandmarkSet apply_edit(const LandmarkSet& lm, const EditOp& op, const EditConfig& cfg = {}) {
    using namespace editdetail;
    check_strength(op, cfg);
    if (is_identity(op)) return lm;

    LandmarkSet out = lm;
    auto& pts = out.points;
    const double s = op.strength;

    switch (op.kind) {
        case EditKind::chubby: {
            const SemanticGroup& jaw = group(GroupName::jaw);
            const P2 c = centroid(lm, jaw.first, jaw.last);
            for (int i = jaw.first; i <= jaw.last; ++i) {
                pts[i].x = c.x + (1.0 + s) * (pts[i].x - c.x);
                pts[i].y = c.y + (1.0 + s) * (pts[i].y - c.y);
            }
            break;
        }
        case EditKind::linear_transform: {
            const P2 c = centroid(lm, 0, lm.n - 1);
            // blend toward identity: M = I + s*(A - I), b' = s*b
            const double m00 = 1.0 + s * (op.matrix[0][0] - 1.0);
            const double m01 = s * op.matrix[0][1];
            const double m10 = s * op.matrix[1][0];
            const double m11 = 1.0 + s * (op.matrix[1][1] - 1.0);
            const double bx = s * op.offset[0], by = s * op.offset[1];
            for (auto& p : pts) {
                const double dx = p.x - c.x, dy = p.y - c.y;
                p.x = c.x + m00 * dx + m01 * dy + bx;
                p.y = c.y + m10 * dx + m11 * dy + by;
            }
            break;
        }
        case EditKind::open_eyes: {
            std::vector<GroupName> eyes;
            eye_indices(op.side, eyes);
            for (GroupName g : eyes) {
                const SemanticGroup& sg = group(g);
                const P2 c = centroid(lm, sg.first, sg.last);
                for (int i = sg.first; i <= sg.last; ++i) pts[i].y = c.y + (1.0 + s) * (pts[i].y - c.y);
            }
            break;
        }
        case EditKind::raised_eyebrow: {
            const double dio = interocular_distance(lm);
            std::vector<GroupName> brows;
            brow_indices(op.side, brows);
            for (GroupName g : brows) {
                const SemanticGroup& sg = group(g);
                for (int i = sg.first; i <= sg.last; ++i) pts[i].y -= s * dio;
            }
            break;
        }
        case EditKind::stretched_nostrils: {
            // horizontal stretch of the nose base row about its mean x
            const P2 c = centroid(lm, 31, 35);
            for (int i = 31; i <= 35; ++i) pts[i].x = c.x + (1.0 + s) * (pts[i].x - c.x);
            break;
        }
        case EditKind::component_shift: {
            const SemanticGroup& sg = group(component_group(op.component));
            for (int i = sg.first; i <= sg.last; ++i) {
                pts[i].x += op.delta[0];
                pts[i].y += op.delta[1];
            }
            break;
        }
    }

    for (auto& p : pts) {
        const double cx = std::min(1.0, std::max(0.0, p.x));
        const double cy = std::min(1.0, std::max(0.0, p.y));
        if (cx != p.x || cy != p.y) out.clamped = true;
        p.x = cx;
        p.y = cy;
    }
    return out;
}

// Draws two edits of distinct kinds, uniformly without replacement, with
// strengths and kind parameters uniform over their configured ranges.
inline EditPlan sample_edit_plan(std::uint64_t rng_seed, const EditConfig& cfg = {}) {
    std::vector<EditKind> enabled;
    for (int i = 0; i < kNumEditKinds; ++i)
        if (cfg.enabled[static_cast<std::size_t>(i)]) enabled.push_back(static_cast<EditKind>(i));
    require(enabled.size() >= 2, Err::TooFewKinds, "sample_edit_plan needs at least two enabled kinds");

    Rng rng(rng_seed);
    EditPlan plan;
    plan.seed = rng_seed;
    const std::size_t i0 = static_cast<std::size_t>(rng.below(enabled.size()));
    const EditKind k0 = enabled[i0];
    enabled.erase(enabled.begin() + static_cast<std::ptrdiff_t>(i0));
    const EditKind k1 = enabled[static_cast<std::size_t>(rng.below(enabled.size()))];

    const EditKind kinds[2] = {k0, k1};
    for (int j = 0; j < 2; ++j) {
        EditOp op;
        op.kind = kinds[j];
        const auto& r = cfg.strength[static_cast<std::size_t>(op.kind)];
        op.strength = rng.uniform(r.lo, r.hi);
        switch (op.kind) {
            case EditKind::linear_transform: {
                const double th = rng.uniform(-cfg.max_rotation_rad, cfg.max_rotation_rad);
                const double sx = rng.uniform(cfg.scale_range.lo, cfg.scale_range.hi);
                const double sy = rng.uniform(cfg.scale_range.lo, cfg.scale_range.hi);
                const double sh = rng.uniform(-cfg.max_shear, cfg.max_shear);
                // A = R(th) * diag(sx, sy) * shear(sh); det = sx*sy
                const double ct = std::cos(th), st = std::sin(th);
                op.matrix[0][0] = ct * sx;
                op.matrix[0][1] = ct * sx * sh - st * sy;
                op.matrix[1][0] = st * sx;
                op.matrix[1][1] = st * sx * sh + ct * sy;
                op.offset[0] = rng.uniform(-cfg.max_offset, cfg.max_offset);
                op.offset[1] = rng.uniform(-cfg.max_offset, cfg.max_offset);
                break;
            }
            case EditKind::open_eyes:
            case EditKind::raised_eyebrow:
                op.side = static_cast<EditSide>(rng.below(3));
                break;
            case EditKind::component_shift: {
                op.component = static_cast<EditComponent>(rng.below(4));
                const double ang = rng.uniform(0.0, 6.283185307179586476925286766559);
                op.delta = {op.strength * std::cos(ang), op.strength * std::sin(ang)};
                break;
            }
            default:
                break;
        }
        plan.ops[static_cast<std::size_t>(j)] = op;
    }
    return plan;
}

inline LandmarkSet apply_plan(const LandmarkSet& lm, const EditPlan& plan, const EditConfig& cfg = {}) {
    require(plan.ops[0].kind != plan.ops[1].kind, Err::BadConfig, "edit plan must hold two distinct kinds");
    LandmarkSet out = apply_edit(lm, plan.ops[0], cfg);
    return apply_edit(out, plan.ops[1], cfg);
}

// --- JSON (embedded into dataset manifests for provenance) ------------------

inline const char* side_name(EditSide s) {
    switch (s) {
        case EditSide::left: return "left";
        case EditSide::right: return "right";
        case EditSide::both: return "both";
    }
    return "?";
}

inline const char* component_name(EditComponent c) {
    switch (c) {
        case EditComponent::left_eye: return "left_eye";
        case EditComponent::right_eye: return "right_eye";
        case EditComponent::nose: return "nose";
        case EditComponent::mouth: return "mouth";
    }
    return "?";
}

inline nlohmann::json edit_op_to_json(const EditOp& op) {
    nlohmann::json params = nlohmann::json::object();
    switch (op.kind) {
        case EditKind::linear_transform:
            params["matrix"] = {{op.matrix[0][0], op.matrix[0][1]}, {op.matrix[1][0], op.matrix[1][1]}};
            params["offset"] = {op.offset[0], op.offset[1]};
            break;
        case EditKind::open_eyes:
        case EditKind::raised_eyebrow:
            params["side"] = side_name(op.side);
            break;
        case EditKind::component_shift:
            params["component"] = component_name(op.component);
            params["delta"] = {op.delta[0], op.delta[1]};
            break;
        default:
            break;
    }
    return {{"kind", edit_kind_name(op.kind)}, {"strength", op.strength}, {"params", std::move(params)}};
}

inline EditOp edit_op_from_json(const nlohmann::json& j) {
    EditOp op;
    op.kind = edit_kind_from_name(j.at("kind").get<std::string>());
    op.strength = j.at("strength").get<double>();
    const auto& params = j.at("params");
    switch (op.kind) {
        case EditKind::linear_transform: {
            const auto& m = params.at("matrix");
            op.matrix = {{{m[0][0].get<double>(), m[0][1].get<double>()},
                          {m[1][0].get<double>(), m[1][1].get<double>()}}};
            op.offset = {params.at("offset")[0].get<double>(), params.at("offset")[1].get<double>()};
            break;
        }
        case EditKind::open_eyes:
        case EditKind::raised_eyebrow: {
            const std::string s = params.at("side").get<std::string>();
            if (s == "left") op.side = EditSide::left;
            else if (s == "right") op.side = EditSide::right;
            else if (s == "both") op.side = EditSide::both;
            else fail(Err::BadFormat, "unknown side: " + s);
            break;
        }
        case EditKind::component_shift: {
            const std::string c = params.at("component").get<std::string>();
            if (c == "left_eye") op.component = EditComponent::left_eye;
            else if (c == "right_eye") op.component = EditComponent::right_eye;
            else if (c == "nose") op.component = EditComponent::nose;
            else if (c == "mouth") op.component = EditComponent::mouth;
            else fail(Err::BadFormat, "unknown component: " + c);
            op.delta = {params.at("delta")[0].get<double>(), params.at("delta")[1].get<double>()};
            break;
        }
        default:
            break;
    }
    return op;
}

inline nlohmann::json edit_plan_to_json(const EditPlan& plan) {
    return {{"seed", plan.seed}, {"ops", {edit_op_to_json(plan.ops[0]), edit_op_to_json(plan.ops[1])}}};
}

inline EditPlan edit_plan_from_json(const nlohmann::json& j) {
    EditPlan plan;
    plan.seed = j.at("seed").get<std::uint64_t>();
    const auto& ops = j.at("ops");
    require(ops.is_array() && ops.size() == 2, Err::BadFormat, "edit plan must hold exactly two ops");
    plan.ops[0] = edit_op_from_json(ops[0]);
    plan.ops[1] = edit_op_from_json(ops[1]);
    return plan;
}

}  // namespace ldlab

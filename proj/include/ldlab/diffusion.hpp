#pragma once

// Scalar diffusion machinery: beta schedules, the forward corruption process,
// and DDPM / DDIM reverse steps. Everything here operates on plain tensors and
// a noise-prediction callback, so the math can be tested without any network.
//
// Timesteps are 1-indexed: t runs over 1..T, and alpha_bar(0) == 1 by
// convention (the clean-data endpoint used by DDIM).

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ldlab/core/error.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/core/tensor.hpp"

namespace ldlab {

enum class ScheduleKind { linear, cosine };

inline const char* schedule_kind_name(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "cosine";
}

inline ScheduleKind schedule_kind_from_name(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    fail(Err::UnknownKind, "unknown schedule kind: " + s);
}

struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::linear;
    std::vector<double> betas;       // betas[t-1] for t in 1..T
    std::vector<double> alphas;      // 1 - beta
    std::vector<double> alpha_bars;  // running product of alphas

    double beta(int t) const {
        require(t >= 1 && t <= T, Err::TimestepOutOfRange, "t=" + std::to_string(t) + " outside 1.." + std::to_string(T));
        return betas[static_cast<std::size_t>(t - 1)];
    }
    double alpha(int t) const {
        require(t >= 1 && t <= T, Err::TimestepOutOfRange, "t=" + std::to_string(t) + " outside 1.." + std::to_string(T));
        return alphas[static_cast<std::size_t>(t - 1)];
    }
    // alpha_bar(0) == 1 is the clean endpoint used by DDIM.
    double alpha_bar(int t) const {
        require(t >= 0 && t <= T, Err::TimestepOutOfRange, "t=" + std::to_string(t) + " outside 0.." + std::to_string(T));
        return t == 0 ? 1.0 : alpha_bars[static_cast<std::size_t>(t - 1)];
    }
};

inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end,
                                    ScheduleKind kind = ScheduleKind::linear) {
    require(T >= 1, Err::BadRange, "schedule needs T >= 1");
    require(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0, Err::BadRange,
            "betas must satisfy 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.betas.resize(static_cast<std::size_t>(T));
    if (kind == ScheduleKind::linear) {
        if (T == 1) {
            s.betas[0] = beta_start;
        } else {
            for (int i = 0; i < T; ++i)
                s.betas[static_cast<std::size_t>(i)] =
                    beta_start + (beta_end - beta_start) * static_cast<double>(i) / static_cast<double>(T - 1);
        }
    } else {
        // squared-cosine alpha_bar profile; betas derived from consecutive
        // ratios and clipped away from 0 and 1
        const double off = 0.008;
        auto f = [&](double t) {
            const double u = (t / static_cast<double>(T) + off) / (1.0 + off) * 1.5707963267948966;
            const double c = std::cos(u);
            return c * c;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            const double ab = f(static_cast<double>(t)) / f0;
            double beta = 1.0 - ab / prev;
            beta = std::min(0.999, std::max(1e-8, beta));
            s.betas[static_cast<std::size_t>(t - 1)] = beta;
            prev *= 1.0 - beta;
        }
    }
    s.alphas.resize(static_cast<std::size_t>(T));
    s.alpha_bars.resize(static_cast<std::size_t>(T));
    double run = 1.0;
    for (int i = 0; i < T; ++i) {
        s.alphas[static_cast<std::size_t>(i)] = 1.0 - s.betas[static_cast<std::size_t>(i)];
        run *= s.alphas[static_cast<std::size_t>(i)];
        s.alpha_bars[static_cast<std::size_t>(i)] = run;
    }
    return s;
}

// Latent carried through the reverse chain; the tag is bookkeeping only.
template <typename S>
struct Latent {
    Tensor<S> values;
    int timestep_tag = 0;
};

// --- forward process ---------------------------------------------------------

// One Markov corruption step: z_t = sqrt(1-beta_t) z_{t-1} + sqrt(beta_t) eps.
template <typename S>
Tensor<S> forward_step(const Tensor<S>& z_prev, int t, const Tensor<S>& noise, const NoiseSchedule& sched) {
    check_same_shape(z_prev, noise, "forward_step");
    const double b = sched.beta(t);
    const S a = static_cast<S>(std::sqrt(1.0 - b));
    const S c = static_cast<S>(std::sqrt(b));
    Tensor<S> out = z_prev;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * z_prev.v[i] + c * noise.v[i];
    return out;
}

// Closed-form jump to timestep t: z_t = sqrt(ab_t) z_0 + sqrt(1-ab_t) eps.
template <typename S>
Tensor<S> forward_sample(const Tensor<S>& z0, int t, const Tensor<S>& eps, const NoiseSchedule& sched) {
    check_same_shape(z0, eps, "forward_sample");
    require(t >= 1 && t <= sched.T, Err::TimestepOutOfRange, "forward_sample t outside 1..T");
    const double ab = sched.alpha_bar(t);
    const S a = static_cast<S>(std::sqrt(ab));
    const S c = static_cast<S>(std::sqrt(1.0 - ab));
    Tensor<S> out = z0;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * z0.v[i] + c * eps.v[i];
    return out;
}

// Plain MSE between predicted and true noise, mean over all elements.
template <typename S>
double training_loss(const Tensor<S>& eps_pred, const Tensor<S>& eps_true) {
    return mse(eps_pred, eps_true);
}

// --- reverse process ---------------------------------------------------------

// Ancestral DDPM step. noise must be zeros at t == 1 conceptually; we simply
// skip it there (sigma_1 = 0) so the final step is deterministic.
template <typename S>
Tensor<S> ddpm_reverse_step(const Tensor<S>& z_t, const Tensor<S>& eps_pred, int t, const NoiseSchedule& sched,
                            const Tensor<S>& noise) {
    check_same_shape(z_t, eps_pred, "ddpm_reverse_step");
    check_same_shape(z_t, noise, "ddpm_reverse_step noise");
    const double b = sched.beta(t);
    const double ab = sched.alpha_bar(t);
    const double inv_sqrt_a = 1.0 / std::sqrt(sched.alpha(t));
    const double k = b / std::sqrt(1.0 - ab);
    const double sigma = t > 1 ? std::sqrt(b) : 0.0;
    Tensor<S> out = z_t;
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        const double mu = inv_sqrt_a * (static_cast<double>(z_t.v[i]) - k * static_cast<double>(eps_pred.v[i]));
        out.v[i] = static_cast<S>(mu + sigma * static_cast<double>(noise.v[i]));
    }
    return out;
}

// Deterministic DDIM step (eta = 0) from t down to t_prev (t_prev may be 0).
template <typename S>
Tensor<S> ddim_step(const Tensor<S>& z_t, const Tensor<S>& eps_pred, int t, int t_prev, const NoiseSchedule& sched) {
    check_same_shape(z_t, eps_pred, "ddim_step");
    require(t >= 1 && t <= sched.T && t_prev >= 0 && t_prev < t, Err::BadTimestepPair,
            "ddim_step needs 0 <= t_prev < t <= T");
    const double ab_t = sched.alpha_bar(t);
    const double ab_p = sched.alpha_bar(t_prev);
    const double sa_t = std::sqrt(ab_t), sc_t = std::sqrt(1.0 - ab_t);
    const double sa_p = std::sqrt(ab_p), sc_p = std::sqrt(1.0 - ab_p);
    Tensor<S> out = z_t;
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        const double e = static_cast<double>(eps_pred.v[i]);
        const double x0 = (static_cast<double>(z_t.v[i]) - sc_t * e) / sa_t;
        out.v[i] = static_cast<S>(sa_p * x0 + sc_p * e);
    }
    return out;
}

// Classifier-free guidance blend: eps_u + w (eps_c - eps_u). w == 1 returns
// the conditional branch exactly.
template <typename S>
Tensor<S> cfg_combine(const Tensor<S>& eps_cond, const Tensor<S>& eps_uncond, double w) {
    check_same_shape(eps_cond, eps_uncond, "cfg_combine");
    Tensor<S> out = eps_cond;
    const S ws = static_cast<S>(w);
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = eps_uncond.v[i] + ws * (eps_cond.v[i] - eps_uncond.v[i]);
    return out;
}

// Descending timestep ladder for DDIM: `steps` entries from T down, then the
// caller pairs each with its successor and finally 0.
inline std::vector<int> ddim_timesteps(int T, int steps) {
    require(steps >= 1 && steps <= T, Err::BadRange, "ddim steps must lie in 1..T");
    std::vector<int> ts;
    ts.reserve(static_cast<std::size_t>(steps));
    for (int i = steps; i >= 1; --i) {
        const int t = static_cast<int>(std::llround(static_cast<double>(i) * static_cast<double>(T) /
                                                    static_cast<double>(steps)));
        const int tc = std::max(1, std::min(T, t));
        if (ts.empty() || ts.back() != tc) ts.push_back(tc);
    }
    return ts;
}

// Full DDIM chain: eps_fn(z, t) supplies the noise estimate at each rung.
template <typename S>
Tensor<S> run_ddim_chain(const Tensor<S>& z_T, const NoiseSchedule& sched, const std::vector<int>& timesteps,
                         const std::function<Tensor<S>(const Tensor<S>&, int)>& eps_fn) {
    require(!timesteps.empty(), Err::EmptyList, "run_ddim_chain got no timesteps");
    Tensor<S> z = z_T;
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        const int t = timesteps[i];
        const int t_prev = i + 1 < timesteps.size() ? timesteps[i + 1] : 0;
        z = ddim_step(z, eps_fn(z, t), t, t_prev, sched);
    }
    return z;
}

// Full ancestral chain from t = T down to 1; rng draws the per-step noise.
template <typename S>
Tensor<S> run_ddpm_chain(const Tensor<S>& z_T, const NoiseSchedule& sched,
                         const std::function<Tensor<S>(const Tensor<S>&, int)>& eps_fn, Rng& rng) {
    Tensor<S> z = z_T;
    Tensor<S> zero(z.dims);
    for (int t = sched.T; t >= 1; --t) {
        const Tensor<S> noise = t > 1 ? randn<S>(z.dims, rng) : zero;
        z = ddpm_reverse_step(z, eps_fn(z, t), t, sched, noise);
    }
    return z;
}

}  // namespace ldlab

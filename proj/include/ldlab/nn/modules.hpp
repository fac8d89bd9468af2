#pragma once

// Named parameter registry, weight init, the Adam optimizer, and the
// sinusoidal timestep embedding shared by the denoiser and detector.

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ldlab/core/error.hpp"
#include "ldlab/core/rng.hpp"
#include "ldlab/nn/autograd.hpp"

namespace ldlab::nn {

// Parameters keyed by name, kept in registration order so checkpoints and
// optimizer state line up across runs.
template <typename S>
struct ParamStore {
    std::vector<std::pair<std::string, Var<S>>> items;
    std::unordered_map<std::string, std::size_t> index;

    Var<S> add(const std::string& name, Tensor<S> init) {
        require(index.find(name) == index.end(), Err::BadConfig, "duplicate parameter name: " + name);
        Var<S> v = leaf(std::move(init), true);
        index[name] = items.size();
        items.emplace_back(name, v);
        return v;
    }

    Var<S>& get(const std::string& name) {
        auto it = index.find(name);
        require(it != index.end(), Err::BadConfig, "unknown parameter: " + name);
        return items[it->second].second;
    }

    const Var<S>& get(const std::string& name) const {
        auto it = index.find(name);
        require(it != index.end(), Err::BadConfig, "unknown parameter: " + name);
        return items[it->second].second;
    }

    bool has(const std::string& name) const { return index.find(name) != index.end(); }

    void zero_grad() {
        for (auto& [name, v] : items) {
            (void)name;
            if (!v.node->grad.v.empty())
                std::fill(v.node->grad.v.begin(), v.node->grad.v.end(), S(0));
        }
    }

    std::size_t count_scalars() const {
        std::size_t n = 0;
        for (const auto& [name, v] : items) {
            (void)name;
            n += v.node->val.v.size();
        }
        return n;
    }
};

// --- init helpers ----------------------------------------------------------

template <typename S>
Tensor<S> he_normal(const std::vector<int>& dims, int fan_in, Rng& rng) {
    require(fan_in > 0, Err::BadConfig, "he_normal fan_in must be positive");
    return randn<S>(dims, rng, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

template <typename S>
Tensor<S> zeros_of(const std::vector<int>& dims) {
    return Tensor<S>(dims);
}

// conv weight (Cout,Cin,k,k); fan_in = Cin*k*k
template <typename S>
Tensor<S> conv_init(int cout, int cin, int k, Rng& rng) {
    return he_normal<S>({cout, cin, k, k}, cin * k * k, rng);
}

template <typename S>
Tensor<S> linear_init(int out, int in, Rng& rng) {
    return he_normal<S>({out, in}, in, rng);
}

// --- timestep embedding ------------------------------------------------------

// Classic sinusoidal embedding: [cos(t*f_i) | sin(t*f_i)] with geometric
// frequencies. Pure function of t, so it enters the graph as a constant.
template <typename S>
Tensor<S> timestep_embedding(const std::vector<int>& ts, int dim, double max_period = 10000.0) {
    require(dim >= 2 && dim % 2 == 0, Err::BadConfig, "timestep embedding dim must be even and >= 2");
    const int half = dim / 2;
    const int n = static_cast<int>(ts.size());
    Tensor<S> out({n, dim});
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(ts[static_cast<std::size_t>(i)]);
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(max_period) * static_cast<double>(j) / static_cast<double>(half));
            const double a = t * freq;
            out.v[static_cast<std::size_t>(i) * dim + j] = static_cast<S>(std::cos(a));
            out.v[static_cast<std::size_t>(i) * dim + half + j] = static_cast<S>(std::sin(a));
        }
    }
    return out;
}

// --- Adam ---------------------------------------------------------------------

template <typename S>
struct Adam {
    double lr = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long long t = 0;
    std::vector<Tensor<S>> m, v;

    void attach(const ParamStore<S>& params) {
        m.clear();
        v.clear();
        for (const auto& [name, p] : params.items) {
            (void)name;
            m.emplace_back(p.node->val.dims);
            v.emplace_back(p.node->val.dims);
        }
        t = 0;
    }

    void step(ParamStore<S>& params) {
        require(m.size() == params.items.size(), Err::BadConfig, "optimizer not attached to this parameter set");
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t pi = 0; pi < params.items.size(); ++pi) {
            auto& p = params.items[pi].second;
            auto& val = p.node->val;
            if (p.node->grad.v.empty()) continue;  // parameter untouched this step
            auto& g = p.node->grad;
            auto& mi = m[pi];
            auto& vi = v[pi];
            for (std::size_t i = 0; i < val.v.size(); ++i) {
                const double gd = static_cast<double>(g.v[i]);
                const double md = beta1 * static_cast<double>(mi.v[i]) + (1.0 - beta1) * gd;
                const double vd = beta2 * static_cast<double>(vi.v[i]) + (1.0 - beta2) * gd * gd;
                mi.v[i] = static_cast<S>(md);
                vi.v[i] = static_cast<S>(vd);
                const double mhat = md / bc1;
                const double vhat = vd / bc2;
                val.v[i] = static_cast<S>(static_cast<double>(val.v[i]) - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

}  // namespace ldlab::nn

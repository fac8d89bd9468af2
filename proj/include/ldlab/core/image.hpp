#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ldlab/core/error.hpp"
#include "ldlab/core/tensor.hpp"

namespace ldlab {

// Interleaved H x W x C float image, values in [0,1].
struct ImageF {
    int h = 0, w = 0, c = 0;
    std::vector<float> px;

    ImageF() = default;
    ImageF(int h_, int w_, int c_) : h(h_), w(w_), c(c_), px(static_cast<std::size_t>(h_) * w_ * c_, 0.0f) {}

    float& at(int y, int x, int ch) { return px[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return px[(static_cast<std::size_t>(y) * w + x) * c + ch]; }

    bool same_shape(const ImageF& o) const { return h == o.h && w == o.w && c == o.c; }
};

inline void fill(ImageF& img, const float* color) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < img.c; ++ch) img.at(y, x, ch) = color[ch];
}

// Planar (C,H,W) view used by the networks.
template <typename S>
Tensor<S> image_to_chw(const ImageF& img) {
    Tensor<S> t({img.c, img.h, img.w});
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                t[(static_cast<std::int64_t>(ch) * img.h + y) * img.w + x] = static_cast<S>(img.at(y, x, ch));
    return t;
}

template <typename S>
ImageF chw_to_image(const Tensor<S>& t) {
    require(t.rank() == 3, Err::ShapeMismatch, "chw_to_image expects rank-3 (C,H,W)");
    ImageF img(t.dim(1), t.dim(2), t.dim(0));
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                img.at(y, x, ch) = static_cast<float>(t[(static_cast<std::int64_t>(ch) * img.h + y) * img.w + x]);
    return img;
}

inline ImageF clamp01(ImageF img) {
    for (auto& v : img.px) v = std::min(1.0f, std::max(0.0f, v));
    return img;
}

// Quantize to 8-bit and back; round-half-up so PNG round trips are stable.
inline std::uint8_t to_u8(float v) {
    const float x = std::min(1.0f, std::max(0.0f, v));
    return static_cast<std::uint8_t>(std::lround(x * 255.0f));
}

// Bilinear resize (used to feed 64 px corpus images to the detector input).
inline ImageF resize_bilinear(const ImageF& src, int oh, int ow) {
    require(oh >= 1 && ow >= 1, Err::BadResolution, "resize target too small");
    ImageF dst(oh, ow, src.c);
    const float sy = static_cast<float>(src.h) / static_cast<float>(oh);
    const float sx = static_cast<float>(src.w) / static_cast<float>(ow);
    for (int y = 0; y < oh; ++y) {
        const float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
        const int y0 = std::max(0, std::min(src.h - 1, static_cast<int>(std::floor(fy))));
        const int y1 = std::min(src.h - 1, y0 + 1);
        const float wy = std::min(1.0f, std::max(0.0f, fy - static_cast<float>(y0)));
        for (int x = 0; x < ow; ++x) {
            const float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
            const int x0 = std::max(0, std::min(src.w - 1, static_cast<int>(std::floor(fx))));
            const int x1 = std::min(src.w - 1, x0 + 1);
            const float wx = std::min(1.0f, std::max(0.0f, fx - static_cast<float>(x0)));
            for (int ch = 0; ch < src.c; ++ch) {
                const float a = src.at(y0, x0, ch) * (1.0f - wx) + src.at(y0, x1, ch) * wx;
                const float b = src.at(y1, x0, ch) * (1.0f - wx) + src.at(y1, x1, ch) * wx;
                dst.at(y, x, ch) = a * (1.0f - wy) + b * wy;
            }
        }
    }
    return dst;
}

}  // namespace ldlab

#pragma once

#include <cmath>
#include <vector>

#include "motiondiff/diffusion.hpp"
#include "motiondiff/image.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Fixed pixel <-> latent codec: per-channel average pooling to a coarse grid
// mapped affinely onto [-1,1], decoded by bilinear upsampling. Linear by
// construction, so encode(a*x + b) = a*encode(x) + 2b.

template <typename Real>
LatentVideo<Real> encode_video(const std::vector<Image>& frames, int factor) {
    if (frames.empty()) throw InputError("encode: no frames");
    const int w = frames[0].width;
    const int h = frames[0].height;
    if (w % factor != 0 || h % factor != 0) {
        throw InputError("encode: extents " + std::to_string(w) + "x" + std::to_string(h) +
                         " not divisible by factor " + std::to_string(factor));
    }
    const int lw = w / factor;
    const int lh = h / factor;
    const int L = static_cast<int>(frames.size());
    Tensor<Real> z({L, 3, lh, lw});
    const double inv_area = 1.0 / (static_cast<double>(factor) * factor);
    for (int f = 0; f < L; ++f) {
        const Image& img = frames[static_cast<size_t>(f)];
        if (img.width != w || img.height != h) throw InputError("encode: frame size mismatch");
        for (int c = 0; c < 3; ++c) {
            Real* plane = z.data() + ((static_cast<int64_t>(f) * 3 + c) * lh) * lw;
            for (int y = 0; y < lh; ++y)
                for (int x = 0; x < lw; ++x) {
                    double acc = 0;
                    for (int dy = 0; dy < factor; ++dy)
                        for (int dx = 0; dx < factor; ++dx)
                            acc += img.at(x * factor + dx, y * factor + dy, c);
                    plane[y * lw + x] = static_cast<Real>(2.0 * acc * inv_area - 1.0);
                }
        }
    }
    return LatentVideo<Real>(std::move(z), 0);
}

template <typename Real>
std::vector<Image> decode_video(const LatentVideo<Real>& latent, int factor) {
    const Tensor<Real>& z = latent.values;
    if (z.dim(1) != 3) throw InputError("decode: latent must have 3 channels");
    const int L = z.dim(0);
    const int lh = z.dim(2);
    const int lw = z.dim(3);
    const int w = lw * factor;
    const int h = lh * factor;
    std::vector<Image> frames;
    frames.reserve(static_cast<size_t>(L));
    for (int f = 0; f < L; ++f) {
        Image img(w, h);
        for (int c = 0; c < 3; ++c) {
            const Real* plane = z.data() + ((static_cast<int64_t>(f) * 3 + c) * lh) * lw;
            for (int y = 0; y < h; ++y) {
                // half-pixel-center bilinear sampling
                const double sy = (y + 0.5) / factor - 0.5;
                const int y0 = static_cast<int>(std::floor(sy));
                const double fy = sy - y0;
                const int y0c = std::clamp(y0, 0, lh - 1);
                const int y1c = std::clamp(y0 + 1, 0, lh - 1);
                for (int x = 0; x < w; ++x) {
                    const double sx = (x + 0.5) / factor - 0.5;
                    const int x0 = static_cast<int>(std::floor(sx));
                    const double fx = sx - x0;
                    const int x0c = std::clamp(x0, 0, lw - 1);
                    const int x1c = std::clamp(x0 + 1, 0, lw - 1);
                    const double v00 = plane[y0c * lw + x0c];
                    const double v01 = plane[y0c * lw + x1c];
                    const double v10 = plane[y1c * lw + x0c];
                    const double v11 = plane[y1c * lw + x1c];
                    const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                     fy * ((1 - fx) * v10 + fx * v11);
                    img.at(x, y, c) =
                        static_cast<float>(std::clamp(0.5 * (v + 1.0), 0.0, 1.0));
                }
            }
        }
        frames.push_back(std::move(img));
    }
    return frames;
}

inline double psnr(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) {
        throw ContractError("psnr: image size mismatch");
    }
    double mse = 0;
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        const double d = static_cast<double>(a.rgb[i]) - b.rgb[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.rgb.size());
    if (mse == 0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace motiondiff

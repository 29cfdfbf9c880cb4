#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "motiondiff/errors.hpp"
#include "motiondiff/image.hpp"

namespace motiondiff {

struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<float> pix;  // [0,1], row-major

    GrayImage() = default;
    GrayImage(int w, int h) : width(w), height(h), pix(static_cast<size_t>(w) * h, 0.0f) {}
    float at(int x, int y) const { return pix[static_cast<size_t>(y) * width + x]; }
    float& at(int x, int y) { return pix[static_cast<size_t>(y) * width + x]; }
};

inline GrayImage to_gray(const Image& img) {
    GrayImage g(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            g.at(x, y) = 0.299f * img.at(x, y, 0) + 0.587f * img.at(x, y, 1) +
                         0.114f * img.at(x, y, 2);
    return g;
}

// Dense per-pixel displacement for one frame pair, in pixels per frame.
struct FlowField {
    int width = 0;
    int height = 0;
    std::vector<float> u, v;

    FlowField() = default;
    FlowField(int w, int h)
        : width(w), height(h), u(static_cast<size_t>(w) * h, 0.0f),
          v(static_cast<size_t>(w) * h, 0.0f) {}

    double mean_magnitude() const {
        double acc = 0;
        for (size_t i = 0; i < u.size(); ++i) acc += std::hypot(u[i], v[i]);
        return u.empty() ? 0.0 : acc / static_cast<double>(u.size());
    }
};

struct FarnebackParams {
    double pyr_scale = 0.5;
    int levels = 3;
    int winsize = 15;
    int iterations = 3;
    int poly_n = 5;
    double poly_sigma = 1.1;
};

namespace flowdetail {

// Quadratic expansion coefficients per pixel: f(p+d) ~ c + b.d + d^T A d.
struct PolyExpansion {
    int width = 0, height = 0;
    std::vector<double> b1, b2, a11, a22, a12;

    explicit PolyExpansion(int w, int h)
        : width(w), height(h), b1(static_cast<size_t>(w) * h), b2(b1.size()), a11(b1.size()),
          a22(b1.size()), a12(b1.size()) {}
};

// Gauss-Jordan inverse for the tiny basis Gram matrix.
inline std::array<std::array<double, 6>, 6> invert6(std::array<std::array<double, 6>, 6> m) {
    std::array<std::array<double, 6>, 6> inv{};
    for (int i = 0; i < 6; ++i) inv[i][i] = 1.0;
    for (int col = 0; col < 6; ++col) {
        int piv = col;
        for (int r = col + 1; r < 6; ++r)
            if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
        std::swap(m[col], m[piv]);
        std::swap(inv[col], inv[piv]);
        const double p = m[col][col];
        if (std::abs(p) < 1e-14) throw NumericError("poly expansion basis is singular");
        for (int j = 0; j < 6; ++j) {
            m[col][j] /= p;
            inv[col][j] /= p;
        }
        for (int r = 0; r < 6; ++r) {
            if (r == col) continue;
            const double f = m[r][col];
            for (int j = 0; j < 6; ++j) {
                m[r][j] -= f * m[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    return inv;
}

// Weighted least squares fit of [1, x, y, x^2, y^2, xy] in a (2n+1)^2 Gaussian
// window, realized as separable correlations plus a constant 6x6 solve.
inline PolyExpansion poly_expand(const GrayImage& img, int poly_n, double sigma) {
    const int n2 = poly_n / 2;
    const int W = img.width, H = img.height;

    std::vector<double> g(static_cast<size_t>(2 * n2 + 1));
    for (int t = -n2; t <= n2; ++t)
        g[static_cast<size_t>(t + n2)] = std::exp(-0.5 * t * t / (sigma * sigma));

    // Gram matrix of the basis under w(x,y) = g(x) g(y).
    std::array<std::array<double, 6>, 6> gram{};
    for (int y = -n2; y <= n2; ++y)
        for (int x = -n2; x <= n2; ++x) {
            const double w = g[static_cast<size_t>(x + n2)] * g[static_cast<size_t>(y + n2)];
            const double phi[6] = {1.0,
                                   static_cast<double>(x),
                                   static_cast<double>(y),
                                   static_cast<double>(x) * x,
                                   static_cast<double>(y) * y,
                                   static_cast<double>(x) * y};
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) gram[i][j] += w * phi[i] * phi[j];
        }
    const auto ginv = invert6(gram);

    // Vertical pass: t0 = g*f, t1 = (g.y)*f, t2 = (g.y^2)*f.
    std::vector<double> t0(static_cast<size_t>(W) * H), t1(t0.size()), t2(t0.size());
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double s0 = 0, s1 = 0, s2 = 0;
            for (int dy = -n2; dy <= n2; ++dy) {
                const int sy = std::clamp(y + dy, 0, H - 1);
                const double wv = g[static_cast<size_t>(dy + n2)];
                const double f = img.at(x, sy);
                s0 += wv * f;
                s1 += wv * dy * f;
                s2 += wv * dy * dy * f;
            }
            const size_t i = static_cast<size_t>(y) * W + x;
            t0[i] = s0;
            t1[i] = s1;
            t2[i] = s2;
        }

    PolyExpansion exp(W, H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            double m[6] = {0, 0, 0, 0, 0, 0};  // [Swf, Swxf, Swyf, Swxxf, Swyyf, Swxyf]
            for (int dx = -n2; dx <= n2; ++dx) {
                const int sx = std::clamp(x + dx, 0, W - 1);
                const double wv = g[static_cast<size_t>(dx + n2)];
                const size_t i = static_cast<size_t>(y) * W + sx;
                m[0] += wv * t0[i];
                m[1] += wv * dx * t0[i];
                m[2] += wv * t1[i];
                m[3] += wv * dx * dx * t0[i];
                m[4] += wv * t2[i];
                m[5] += wv * dx * t1[i];
            }
            double coef[6];
            for (int i = 0; i < 6; ++i) {
                double acc = 0;
                for (int j = 0; j < 6; ++j) acc += ginv[i][j] * m[j];
                coef[i] = acc;
            }
            const size_t i = static_cast<size_t>(y) * W + x;
            exp.b1[i] = coef[1];
            exp.b2[i] = coef[2];
            exp.a11[i] = coef[3];
            exp.a22[i] = coef[4];
            exp.a12[i] = coef[5] * 0.5;
        }
    return exp;
}

inline GrayImage gaussian_blur(const GrayImage& img, double sigma) {
    const int r = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * r + 1));
    double sum = 0;
    for (int t = -r; t <= r; ++t) {
        k[static_cast<size_t>(t + r)] = std::exp(-0.5 * t * t / (sigma * sigma));
        sum += k[static_cast<size_t>(t + r)];
    }
    for (auto& v : k) v /= sum;
    GrayImage tmp(img.width, img.height), out(img.width, img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0;
            for (int t = -r; t <= r; ++t)
                acc += k[static_cast<size_t>(t + r)] *
                       img.at(std::clamp(x + t, 0, img.width - 1), y);
            tmp.at(x, y) = static_cast<float>(acc);
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double acc = 0;
            for (int t = -r; t <= r; ++t)
                acc += k[static_cast<size_t>(t + r)] *
                       tmp.at(x, std::clamp(y + t, 0, img.height - 1));
            out.at(x, y) = static_cast<float>(acc);
        }
    return out;
}

inline GrayImage resize_bilinear(const GrayImage& img, int nw, int nh) {
    GrayImage out(nw, nh);
    for (int y = 0; y < nh; ++y) {
        const double sy = (y + 0.5) * img.height / nh - 0.5;
        const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, img.height - 1);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double fy = std::clamp(sy - y0, 0.0, 1.0);
        for (int x = 0; x < nw; ++x) {
            const double sx = (x + 0.5) * img.width / nw - 0.5;
            const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, img.width - 1);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double fx = std::clamp(sx - x0, 0.0, 1.0);
            out.at(x, y) = static_cast<float>(
                (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x1, y0)) +
                fy * ((1 - fx) * img.at(x0, y1) + fx * img.at(x1, y1)));
        }
    }
    return out;
}

// Sliding box filter over a multi-channel plane (normalization cancels in the
// 2x2 solve, so plain sums are kept).
inline void box_filter(std::vector<double>& data, int width, int height, int channels,
                       int win) {
    const int r = win / 2;
    std::vector<double> tmp(data.size());
    // horizontal
    for (int y = 0; y < height; ++y) {
        for (int c = 0; c < channels; ++c) {
            double acc = 0;
            auto at = [&](int x) -> double {
                return data[(static_cast<size_t>(y) * width + static_cast<size_t>(
                                 std::clamp(x, 0, width - 1))) * channels + c];
            };
            for (int x = -r; x <= r; ++x) acc += at(x);
            for (int x = 0; x < width; ++x) {
                tmp[(static_cast<size_t>(y) * width + x) * channels + c] = acc;
                acc += at(x + r + 1) - at(x - r);
            }
        }
    }
    // vertical
    for (int x = 0; x < width; ++x) {
        for (int c = 0; c < channels; ++c) {
            double acc = 0;
            auto at = [&](int y) -> double {
                return tmp[(static_cast<size_t>(std::clamp(y, 0, height - 1)) * width + x) *
                               channels + c];
            };
            for (int y = -r; y <= r; ++y) acc += at(y);
            for (int y = 0; y < height; ++y) {
                data[(static_cast<size_t>(y) * width + x) * channels + c] = acc;
                acc += at(y + r + 1) - at(y - r);
            }
        }
    }
}

// One flow refinement pass at a single scale.
inline void update_flow(const PolyExpansion& r1, const PolyExpansion& r2, FlowField& flow,
                        int win) {
    const int W = r1.width, H = r1.height;
    std::vector<double> eq(static_cast<size_t>(W) * H * 5);  // m11,m12,m22,rb1,rb2
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t i = static_cast<size_t>(y) * W + x;
            const double u0 = flow.u[i];
            const double v0 = flow.v[i];
            const int tx = std::clamp(static_cast<int>(std::lround(x + u0)), 0, W - 1);
            const int ty = std::clamp(static_cast<int>(std::lround(y + v0)), 0, H - 1);
            const size_t j = static_cast<size_t>(ty) * W + tx;
            // The linearization offset must be the displacement actually
            // applied when sampling r2 (rounded and clamped), not the prior.
            const double du = tx - x;
            const double dv = ty - y;
            const double a11 = 0.5 * (r1.a11[i] + r2.a11[j]);
            const double a22 = 0.5 * (r1.a22[i] + r2.a22[j]);
            const double a12 = 0.5 * (r1.a12[i] + r2.a12[j]);
            const double db1 = 0.5 * (r1.b1[i] - r2.b1[j]) + (a11 * du + a12 * dv);
            const double db2 = 0.5 * (r1.b2[i] - r2.b2[j]) + (a12 * du + a22 * dv);
            // Expansions near the frame edge are unreliable (replicate
            // padding flattens them); ramp their weight down so windows
            // straddling the border lean on interior evidence.
            const int border_dist = std::min(std::min(x, W - 1 - x), std::min(y, H - 1 - y));
            const double bw = std::min(1.0, (border_dist + 1) / 6.0);
            const double w = bw * bw;
            double* e = eq.data() + i * 5;
            e[0] = w * (a11 * a11 + a12 * a12);
            e[1] = w * (a12 * (a11 + a22));
            e[2] = w * (a12 * a12 + a22 * a22);
            e[3] = w * (a11 * db1 + a12 * db2);
            e[4] = w * (a12 * db1 + a22 * db2);
        }
    box_filter(eq, W, H, 5, win);
    for (size_t i = 0; i < static_cast<size_t>(W) * H; ++i) {
        const double* e = eq.data() + i * 5;
        const double det = e[0] * e[2] - e[1] * e[1];
        const double scale_ref = (e[0] + e[2]) * (e[0] + e[2]);
        if (det > 1e-9 * std::max(scale_ref, 1e-12)) {
            flow.u[i] = static_cast<float>((e[2] * e[3] - e[1] * e[4]) / det);
            flow.v[i] = static_cast<float>((e[0] * e[4] - e[1] * e[3]) / det);
        }
        // otherwise keep the prior estimate
    }
}

}  // namespace flowdetail

inline FlowField farneback_flow(const GrayImage& prev, const GrayImage& next,
                                const FarnebackParams& params = {}) {
    if (prev.width != next.width || prev.height != next.height) {
        throw InputError("flow: frame extents differ");
    }
    if (prev.width < params.poly_n || prev.height < params.poly_n) {
        throw InputError("flow: frames smaller than the polynomial neighborhood");
    }
    if (params.levels < 1 || params.pyr_scale <= 0 || params.pyr_scale >= 1) {
        throw ConfigError("flow: invalid pyramid parameters");
    }

    // Pyramids, finest first.
    std::vector<GrayImage> p1 = {prev}, p2 = {next};
    for (int lvl = 1; lvl < params.levels; ++lvl) {
        const double s = std::pow(params.pyr_scale, lvl);
        const int nw = std::max(4, static_cast<int>(std::lround(prev.width * s)));
        const int nh = std::max(4, static_cast<int>(std::lround(prev.height * s)));
        if (nw < params.poly_n + 2 || nh < params.poly_n + 2) break;
        const double blur_sigma = 0.5 / params.pyr_scale;
        p1.push_back(flowdetail::resize_bilinear(flowdetail::gaussian_blur(p1[0], blur_sigma * lvl), nw, nh));
        p2.push_back(flowdetail::resize_bilinear(flowdetail::gaussian_blur(p2[0], blur_sigma * lvl), nw, nh));
    }

    FlowField flow;
    for (int lvl = static_cast<int>(p1.size()) - 1; lvl >= 0; --lvl) {
        const GrayImage& i1 = p1[static_cast<size_t>(lvl)];
        const GrayImage& i2 = p2[static_cast<size_t>(lvl)];
        FlowField lvl_flow(i1.width, i1.height);
        if (flow.width > 0) {
            // upsample previous level's flow and rescale the displacements
            const double fx = static_cast<double>(i1.width) / flow.width;
            const double fy = static_cast<double>(i1.height) / flow.height;
            GrayImage gu(flow.width, flow.height), gv(flow.width, flow.height);
            std::copy(flow.u.begin(), flow.u.end(), gu.pix.begin());
            std::copy(flow.v.begin(), flow.v.end(), gv.pix.begin());
            const GrayImage ru = flowdetail::resize_bilinear(gu, i1.width, i1.height);
            const GrayImage rv = flowdetail::resize_bilinear(gv, i1.width, i1.height);
            for (size_t i = 0; i < lvl_flow.u.size(); ++i) {
                lvl_flow.u[i] = static_cast<float>(ru.pix[i] * fx);
                lvl_flow.v[i] = static_cast<float>(rv.pix[i] * fy);
            }
        }
        const auto r1 = flowdetail::poly_expand(i1, params.poly_n, params.poly_sigma);
        const auto r2 = flowdetail::poly_expand(i2, params.poly_n, params.poly_sigma);
        const int win = std::max(3, std::min(params.winsize, std::min(i1.width, i1.height)));
        for (int it = 0; it < params.iterations; ++it)
            flowdetail::update_flow(r1, r2, lvl_flow, win);
        flow = std::move(lvl_flow);
    }
    for (size_t i = 0; i < flow.u.size(); ++i) {
        if (!std::isfinite(flow.u[i]) || !std::isfinite(flow.v[i])) {
            throw NumericError("flow: non-finite displacement");
        }
    }
    return flow;
}

// ---------------------------------------------------------------------------
// Debug dump format: "MFLW", u32 width, u32 height (little-endian), then
// interleaved (u,v) float32 pairs, row-major.
// ---------------------------------------------------------------------------

inline void write_flow(const std::string& path, const FlowField& flow) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write flow dump: " + path);
    f.write("MFLW", 4);
    const uint32_t w = static_cast<uint32_t>(flow.width);
    const uint32_t h = static_cast<uint32_t>(flow.height);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    for (size_t i = 0; i < flow.u.size(); ++i) {
        f.write(reinterpret_cast<const char*>(&flow.u[i]), 4);
        f.write(reinterpret_cast<const char*>(&flow.v[i]), 4);
    }
    if (!f) throw IoError("flow dump write failed: " + path);
}

inline FlowField read_flow(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open flow dump: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "MFLW", 4) != 0) {
        throw FormatError("not a flow dump: " + path);
    }
    uint32_t w = 0, h = 0;
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    FlowField flow(static_cast<int>(w), static_cast<int>(h));
    for (size_t i = 0; i < flow.u.size(); ++i) {
        f.read(reinterpret_cast<char*>(&flow.u[i]), 4);
        f.read(reinterpret_cast<char*>(&flow.v[i]), 4);
    }
    if (!f) throw FormatError("truncated flow dump: " + path);
    return flow;
}

}  // namespace motiondiff

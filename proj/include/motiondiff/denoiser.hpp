#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "motiondiff/conditioning.hpp"
#include "motiondiff/ops.hpp"
#include "motiondiff/rng.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// Cross-attention layers eligible for attention recording / guidance.
enum class GuidanceLayer { Down = 0, Mid = 1, Up = 2 };

inline const char* guidance_layer_name(GuidanceLayer l) {
    switch (l) {
        case GuidanceLayer::Down: return "down";
        case GuidanceLayer::Mid: return "mid";
        case GuidanceLayer::Up: return "up";
    }
    return "?";
}

inline GuidanceLayer guidance_layer_from_string(const std::string& s) {
    if (s == "down") return GuidanceLayer::Down;
    if (s == "mid") return GuidanceLayer::Mid;
    if (s == "up") return GuidanceLayer::Up;
    throw ConfigError("unknown attention layer '" + s + "' (down | mid | up)");
}

struct GuidanceLayerSet {
    unsigned mask = 0;

    GuidanceLayerSet() = default;
    GuidanceLayerSet(std::initializer_list<GuidanceLayer> layers) {
        for (auto l : layers) add(l);
    }
    void add(GuidanceLayer l) { mask |= 1u << static_cast<unsigned>(l); }
    bool contains(GuidanceLayer l) const { return mask & (1u << static_cast<unsigned>(l)); }
    bool empty() const { return mask == 0; }

    std::vector<GuidanceLayer> layers() const {
        std::vector<GuidanceLayer> out;
        for (auto l : {GuidanceLayer::Down, GuidanceLayer::Mid, GuidanceLayer::Up})
            if (contains(l)) out.push_back(l);
        return out;
    }

    static GuidanceLayerSet from_strings(const std::vector<std::string>& names) {
        GuidanceLayerSet s;
        for (const auto& n : names) s.add(guidance_layer_from_string(n));
        return s;
    }
};

// Row-stochastic map from latent cells to conditioning tokens for one
// (layer, frame) pair. Traced when produced under tracing.
template <typename Real>
struct AttentionRecord {
    GuidanceLayer layer = GuidanceLayer::Mid;
    int frame = 0;
    Tensor<Real> map;  // [H'*W', N_fused]
};

struct ModelDims {
    int d = 32;             // feature channels
    int latent_channels = 3;
    int latent_h = 16;
    int latent_w = 16;
    int frames = 8;
    bool use_fps = false;
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename Real>
struct DenoiserParams {
    ModelDims dims;
    FusionMode fusion = FusionMode::TokenConcat;

    Tensor<Real> conv_in_w, conv_in_b;
    Tensor<Real> temb_w, temb_b;

    struct Stage {
        Tensor<Real> gn_gamma, gn_beta;
        Tensor<Real> conv_w, conv_b;
        Tensor<Real> wq, wk, wv;
    };
    Stage stage[3];  // down, mid, up

    Tensor<Real> t_wq, t_wk, t_wv, t_wo;
    Tensor<Real> t_bias;  // [2*frames - 1]

    Tensor<Real> gn_out_gamma, gn_out_beta;
    Tensor<Real> conv_out_w, conv_out_b;  // zero-initialized

    Tensor<Real> intensity_table;  // [10, d], learned

    int timestep_embed_in() const {
        int n = dims.d;
        if (dims.use_fps) n += 1;
        if (fusion == FusionMode::GlobalAdd) n += dims.d;
        return n;
    }

    std::vector<std::pair<std::string, Tensor<Real>*>> named_params() {
        std::vector<std::pair<std::string, Tensor<Real>*>> out = {
            {"conv_in.w", &conv_in_w},   {"conv_in.b", &conv_in_b},
            {"temb.w", &temb_w},         {"temb.b", &temb_b},
        };
        const char* names[3] = {"down", "mid", "up"};
        for (int s = 0; s < 3; ++s) {
            const std::string p = names[s];
            out.push_back({p + ".gn.gamma", &stage[s].gn_gamma});
            out.push_back({p + ".gn.beta", &stage[s].gn_beta});
            out.push_back({p + ".conv.w", &stage[s].conv_w});
            out.push_back({p + ".conv.b", &stage[s].conv_b});
            out.push_back({p + ".attn.wq", &stage[s].wq});
            out.push_back({p + ".attn.wk", &stage[s].wk});
            out.push_back({p + ".attn.wv", &stage[s].wv});
        }
        out.push_back({"temporal.wq", &t_wq});
        out.push_back({"temporal.wk", &t_wk});
        out.push_back({"temporal.wv", &t_wv});
        out.push_back({"temporal.wo", &t_wo});
        out.push_back({"temporal.bias", &t_bias});
        out.push_back({"gn_out.gamma", &gn_out_gamma});
        out.push_back({"gn_out.beta", &gn_out_beta});
        out.push_back({"conv_out.w", &conv_out_w});
        out.push_back({"conv_out.b", &conv_out_b});
        out.push_back({"intensity.table", &intensity_table});
        return out;
    }

    // Shallow copy whose tensors are differentiation leaves. Storage is
    // shared, so optimizer writes through to the original.
    DenoiserParams as_variables() const {
        DenoiserParams v = *this;
        for (auto& [name, t] : v.named_params()) t->set_variable();
        return v;
    }
};

namespace denoiserdetail {

template <typename Real>
Tensor<Real> kaiming_uniform(Shape shape, int fan_in, Rng& rng) {
    Tensor<Real> t(std::move(shape));
    const double bound = std::sqrt(3.0 / fan_in);
    for (int64_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<Real>(rng.uniform(-bound, bound));
    return t;
}

}  // namespace denoiserdetail

template <typename Real>
DenoiserParams<Real> init_denoiser(const ModelDims& dims, FusionMode fusion, uint64_t seed) {
    using denoiserdetail::kaiming_uniform;
    DenoiserParams<Real> p;
    p.dims = dims;
    p.fusion = fusion;
    Rng rng(seed);
    const int d = dims.d;
    const int c = dims.latent_channels;

    p.conv_in_w = kaiming_uniform<Real>({d, c, 3, 3}, c * 9, rng);
    p.conv_in_b = Tensor<Real>({d});
    p.temb_w = kaiming_uniform<Real>({p.timestep_embed_in(), d}, p.timestep_embed_in(), rng);
    p.temb_b = Tensor<Real>({d});
    for (int s = 0; s < 3; ++s) {
        p.stage[s].gn_gamma = Tensor<Real>::full({d}, Real(1));
        p.stage[s].gn_beta = Tensor<Real>({d});
        p.stage[s].conv_w = kaiming_uniform<Real>({d, d, 3, 3}, d * 9, rng);
        p.stage[s].conv_b = Tensor<Real>({d});
        p.stage[s].wq = kaiming_uniform<Real>({d, d}, d, rng);
        p.stage[s].wk = kaiming_uniform<Real>({d, d}, d, rng);
        p.stage[s].wv = kaiming_uniform<Real>({d, d}, d, rng);
    }
    p.t_wq = kaiming_uniform<Real>({d, d}, d, rng);
    p.t_wk = kaiming_uniform<Real>({d, d}, d, rng);
    p.t_wv = kaiming_uniform<Real>({d, d}, d, rng);
    p.t_wo = kaiming_uniform<Real>({d, d}, d, rng);
    p.t_bias = Tensor<Real>({2 * dims.frames - 1});
    p.gn_out_gamma = Tensor<Real>::full({d}, Real(1));
    p.gn_out_beta = Tensor<Real>({d});
    // Zero-initialized output head: the untrained model predicts zero noise.
    p.conv_out_w = Tensor<Real>({c, d, 3, 3});
    p.conv_out_b = Tensor<Real>({c});
    p.intensity_table = Tensor<Real>({10, d});
    for (int64_t i = 0; i < p.intensity_table.numel(); ++i)
        p.intensity_table.data()[i] = static_cast<Real>(rng.normal());
    return p;
}

// ---------------------------------------------------------------------------
// Attention operations
// ---------------------------------------------------------------------------

// Single-head cross-attention for one frame. Queries come from the flattened
// feature grid, keys/values from the conditioning tokens; the attended values
// are added residually. Returns the updated features and the attention map.
template <typename Real>
std::pair<Tensor<Real>, AttentionRecord<Real>> spatial_cross_attention(
    const Tensor<Real>& features,  // [d, H, W]
    const Tensor<Real>& tokens,    // [N, d]
    const Tensor<Real>& wq, const Tensor<Real>& wk, const Tensor<Real>& wv,
    GuidanceLayer layer, int frame) {
    if (features.rank() != 3) {
        throw ShapeError("cross_attention: frame features must be [d,H,W], got " +
                         shape_str(features.shape()));
    }
    const int d = features.dim(0);
    const int hw = features.dim(1) * features.dim(2);
    if (tokens.rank() != 2 || tokens.dim(1) != d) {
        throw ConfigError("cross_attention: token dim " + shape_str(tokens.shape()) +
                          " does not match feature channels " + std::to_string(d));
    }
    auto flat = transpose2(reshape(features, {d, hw}));  // [HW, d]
    auto q = matmul(flat, wq);
    auto k = matmul(tokens, wk);
    auto v = matmul(tokens, wv);
    auto scores = scale(matmul(q, k, false, true),
                        static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d))));
    auto attn = softmax_rows(scores);  // [HW, N]
    auto out = add(features, reshape(transpose2(matmul(attn, v)), features.shape()));
    return {std::move(out), AttentionRecord<Real>{layer, frame, std::move(attn)}};
}

// Single-head self-attention along the frame axis, applied independently per
// latent cell, with a learned relative-position bias and optional causal
// masking. Returns the mixed features (value/output projections only for a
// single frame); the caller adds them residually.
template <typename Real>
Tensor<Real> temporal_attention(const Tensor<Real>& x,  // [L, d, H, W]
                                const Tensor<Real>& wq, const Tensor<Real>& wk,
                                const Tensor<Real>& wv, const Tensor<Real>& wo,
                                const Tensor<Real>& bias_table, bool causal = false) {
    if (x.rank() != 4) {
        throw ShapeError("temporal_attention: [L,d,H,W] required, got " +
                         shape_str(x.shape()));
    }
    const int L = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int hw = h * w;
    auto cells = permute3(reshape(x, {L, d, hw}), {2, 0, 1});  // [HW, L, d]
    auto flat = reshape(cells, {hw * L, d});
    auto q = reshape(matmul(flat, wq), {hw, L, d});
    auto k = reshape(matmul(flat, wk), {hw, L, d});
    auto v = reshape(matmul(flat, wv), {hw, L, d});
    auto scores = scale(bmm(q, k, true),
                        static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d))));
    auto attn = softmax_rows(relpos_bias_add(scores, bias_table, causal));  // [HW, L, L]
    auto mixed = reshape(matmul(reshape(bmm(attn, v), {hw * L, d}), wo), {hw, L, d});
    return reshape(permute3(mixed, {1, 2, 0}), {L, d, h, w});
}

// ---------------------------------------------------------------------------
// Noise prediction
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> timestep_embedding(const DenoiserParams<Real>& params, int t,
                                const Conditioning<Real>& cond, double fps) {
    const int d = params.dims.d;
    std::vector<Real> base(static_cast<size_t>(d));
    const int half = d / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / half);
        base[static_cast<size_t>(2 * k)] = static_cast<Real>(std::sin(t * freq));
        base[static_cast<size_t>(2 * k + 1)] = static_cast<Real>(std::cos(t * freq));
    }
    Tensor<Real> vec({1, d}, std::move(base));
    std::vector<Tensor<Real>> parts = {vec};
    if (params.dims.use_fps) {
        parts.push_back(Tensor<Real>({1, 1}, {static_cast<Real>(fps)}));
    }
    if (params.fusion == FusionMode::GlobalAdd) {
        if (cond.global_vec.empty()) {
            throw ConfigError("global_add fusion requires conditioning with a global vector");
        }
        parts.push_back(reshape(cond.global_vec, {1, d}));
    }
    auto joined = parts.size() == 1 ? parts[0] : concat(parts, 1);
    return silu(linear(joined, params.temb_w, params.temb_b));  // [1, d]
}

template <typename Real>
struct DenoiserOutput {
    Tensor<Real> eps;
    std::vector<AttentionRecord<Real>> records;
};

// eps_theta(z_t, t, c). Attention maps are returned for the requested layers;
// when evaluated under tracing with z marked as a variable, both the noise
// output and every record are differentiable with respect to z.
template <typename Real>
DenoiserOutput<Real> predict_noise(const DenoiserParams<Real>& params, const Tensor<Real>& z,
                                   int t, const Conditioning<Real>& cond,
                                   const GuidanceLayerSet& record_layers = {},
                                   double fps = 8.0) {
    const ModelDims& dims = params.dims;
    if (z.rank() != 4 || z.dim(1) != dims.latent_channels) {
        throw ShapeError("predict_noise: latent " + shape_str(z.shape()) +
                         " does not match model dims");
    }
    if (cond.tokens.empty() || cond.tokens.dim(0) < 1) {
        throw ConfigError("predict_noise: conditioning needs at least one token");
    }
    if (cond.tokens.dim(1) != dims.d) {
        throw ConfigError("predict_noise: token embedding dim " +
                          std::to_string(cond.tokens.dim(1)) + " != model dim " +
                          std::to_string(dims.d));
    }
    const int L = z.dim(0);
    const int h = z.dim(2), w = z.dim(3);

    DenoiserOutput<Real> out;
    auto x = conv2d_same(z, params.conv_in_w, params.conv_in_b);  // [L,d,H,W]
    auto temb = timestep_embedding(params, t, cond, fps);
    x = add(x, reshape(temb, {dims.d, 1, 1}));

    const GuidanceLayer order[3] = {GuidanceLayer::Down, GuidanceLayer::Mid,
                                    GuidanceLayer::Up};
    for (int s = 0; s < 3; ++s) {
        const auto& st = params.stage[s];
        auto hdd = conv2d_same(silu(group_normalize(x, st.gn_gamma, st.gn_beta)), st.conv_w,
                               st.conv_b);
        x = add(x, hdd);

        std::vector<Tensor<Real>> frames_out;
        frames_out.reserve(static_cast<size_t>(L));
        for (int i = 0; i < L; ++i) {
            auto frame = reshape(slice(x, 0, i, i + 1), {dims.d, h, w});
            auto [attended, record] = spatial_cross_attention(
                frame, cond.tokens, st.wq, st.wk, st.wv, order[s], i);
            frames_out.push_back(reshape(attended, {1, dims.d, h, w}));
            if (record_layers.contains(order[s])) out.records.push_back(std::move(record));
        }
        x = concat(frames_out, 0);

        if (order[s] == GuidanceLayer::Mid && L >= 1) {
            x = add(x, temporal_attention(x, params.t_wq, params.t_wk, params.t_wv,
                                          params.t_wo, params.t_bias));
        }
    }

    out.eps = conv2d_same(silu(group_normalize(x, params.gn_out_gamma, params.gn_out_beta)),
                          params.conv_out_w, params.conv_out_b);
    return out;
}

}  // namespace motiondiff

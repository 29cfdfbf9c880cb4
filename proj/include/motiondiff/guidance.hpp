#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/diffusion.hpp"
#include "motiondiff/trajectory.hpp"

namespace motiondiff {

template <typename Real>
struct GuidanceConfig {
    Real eta = Real(200);            // guidance strength
    Real lambda = Real(0.5);         // temporal smoothness weight
    int final_timestep = 41;         // t_g: last guided timestep counting down
    int inner_iterations = 1;        // gradient updates per guided timestep
    GuidanceLayerSet layers = {GuidanceLayer::Mid, GuidanceLayer::Up};
    // The update objective sums the smoothness term inside the frame x layer
    // double sum (its literal form); this flag collapses the frame sum.
    bool smoothness_once_per_layer = false;
};

namespace guidancedetail {

template <typename Real>
Tensor<Real> mask_row(const std::vector<uint8_t>& mask) {
    Tensor<Real> t({1, static_cast<int>(mask.size())});
    for (size_t i = 0; i < mask.size(); ++i) t.data()[i] = mask[i] ? Real(1) : Real(0);
    return t;
}

template <typename Real>
Tensor<Real> token_selector(int n_tokens, const std::vector<int>& token_indices) {
    Tensor<Real> sel({n_tokens, 1});
    const Real w = static_cast<Real>(1.0 / static_cast<double>(token_indices.size()));
    for (int idx : token_indices) {
        if (idx < 0 || idx >= n_tokens) {
            throw ContractError("token index " + std::to_string(idx) +
                                " outside the fused token range [0," +
                                std::to_string(n_tokens) + ")");
        }
        sel.data()[idx] = w;
    }
    return sel;
}

}  // namespace guidancedetail

// Squared deficit of in-box attention mass for one (layer, frame) record:
// (1 - inbox / total)^2 over the phrase-averaged token column. Differentiable
// through the attention map.
template <typename Real>
Tensor<Real> energy(const AttentionRecord<Real>& record, const std::vector<uint8_t>& mask,
                    const std::vector<int>& token_indices) {
    if (token_indices.empty()) throw ContractError("energy: empty token index set");
    const int cells = record.map.dim(0);
    const int n_tokens = record.map.dim(1);
    if (static_cast<int>(mask.size()) != cells) {
        throw ContractError("energy: mask has " + std::to_string(mask.size()) +
                            " cells, map has " + std::to_string(cells));
    }
    auto sel = guidancedetail::token_selector<Real>(n_tokens, token_indices);
    auto col = matmul(record.map, sel);  // [U,1] phrase-averaged column
    auto inbox = matmul(guidancedetail::mask_row<Real>(mask), col);
    auto ones = Tensor<Real>::full({1, cells}, Real(1));
    auto total = matmul(ones, col);
    if (!(total.item() > Real(0))) {
        throw NumericError("energy: attention column for layer " +
                           std::string(guidance_layer_name(record.layer)) + " frame " +
                           std::to_string(record.frame) + " sums to zero");
    }
    auto deficit = add_scalar(scale(div(inbox, total), Real(-1)), Real(1));
    return reshape(mul(deficit, deficit), Shape{});
}

// Mean squared difference between consecutive-frame attention maps of one
// layer. Records must be ordered by frame.
template <typename Real>
Tensor<Real> temporal_smoothness(const std::vector<AttentionRecord<Real>>& records) {
    if (records.empty()) throw ContractError("temporal_smoothness: no records");
    if (records.size() == 1) return Tensor<Real>(Shape{});
    for (size_t i = 1; i < records.size(); ++i) {
        if (records[i].map.shape() != records[0].map.shape()) {
            throw ContractError("temporal_smoothness: map shapes differ across frames (" +
                                shape_str(records[i].map.shape()) + " vs " +
                                shape_str(records[0].map.shape()) + ")");
        }
    }
    Tensor<Real> total;
    for (size_t i = 1; i < records.size(); ++i) {
        auto term = sum_squares(sub(records[i].map, records[i - 1].map));
        total = total.empty() ? term : add(total, term);
    }
    return scale(total, static_cast<Real>(1.0 / static_cast<double>(records.size() - 1)));
}

// The guided-sampling objective: sum over frames and recorded layers of the
// box energy, plus the weighted smoothness term. In the literal double-sum
// form the per-layer smoothness is counted once per frame.
template <typename Real>
Tensor<Real> guidance_objective(const std::vector<AttentionRecord<Real>>& records,
                                const BoxTrack& track,
                                const std::vector<int>& token_indices, Real lambda,
                                bool smoothness_once_per_layer = false) {
    if (records.empty()) throw ContractError("guidance_objective: no records");
    std::map<GuidanceLayer, std::vector<AttentionRecord<Real>>> by_layer;
    for (const auto& rec : records) by_layer[rec.layer].push_back(rec);

    Tensor<Real> total;
    int frames = 0;
    for (auto& [layer, layer_records] : by_layer) {
        std::sort(layer_records.begin(), layer_records.end(),
                  [](const auto& a, const auto& b) { return a.frame < b.frame; });
        frames = static_cast<int>(layer_records.size());
        for (const auto& rec : layer_records) {
            if (rec.frame < 0 || rec.frame >= static_cast<int>(track.masks.size())) {
                throw ContractError("guidance_objective: record frame " +
                                    std::to_string(rec.frame) + " outside the box track");
            }
            auto e = energy(rec, track.masks[static_cast<size_t>(rec.frame)], token_indices);
            total = total.empty() ? e : add(total, e);
        }
        if (lambda != Real(0) && frames >= 2) {
            auto ts = temporal_smoothness(layer_records);
            const Real factor =
                smoothness_once_per_layer ? lambda : lambda * static_cast<Real>(frames);
            total = add(total, scale(ts, factor));
        }
    }
    return total;
}

// z' = z - sigma_t^2 * eta * grad, elementwise on values (no graph).
template <typename Real>
Tensor<Real> guidance_update(const Tensor<Real>& z, const Tensor<Real>& grad, Real eta,
                             Real sigma_t) {
    if (grad.shape() != z.shape()) {
        throw ShapeError("guidance_update: gradient " + shape_str(grad.shape()) +
                         " vs latent " + shape_str(z.shape()));
    }
    if (!grad.all_finite()) throw NumericError("guidance_update: non-finite gradient");
    Tensor<Real> out(z.shape());
    const Real step = sigma_t * sigma_t * eta;
    for (int64_t i = 0; i < z.numel(); ++i)
        out.data()[i] = z.data()[i] - step * grad.data()[i];
    return out;
}

// Mean in-box share of the phrase-averaged attention mass over all records;
// plain values, used by evaluations and tests.
template <typename Real>
double in_box_mass(const std::vector<AttentionRecord<Real>>& records, const BoxTrack& track,
                   const std::vector<int>& token_indices) {
    if (records.empty()) throw ContractError("in_box_mass: no records");
    double acc = 0;
    for (const auto& rec : records) {
        const auto& mask = track.masks.at(static_cast<size_t>(rec.frame));
        const int n = rec.map.dim(1);
        double inbox = 0, total = 0;
        for (int u = 0; u < rec.map.dim(0); ++u) {
            double col = 0;
            for (int idx : token_indices) col += rec.map.data()[u * n + idx];
            col /= static_cast<double>(token_indices.size());
            total += col;
            if (mask[static_cast<size_t>(u)]) inbox += col;
        }
        acc += inbox / std::max(total, 1e-30);
    }
    return acc / static_cast<double>(records.size());
}

// One per-timestep trace row of a guided run.
struct GuidanceTraceRow {
    int timestep = 0;
    int inner = 0;
    double objective = 0;
    double in_box = 0;
};

// Resolves the phrase's token indices within the fused token list.
template <typename Real>
std::vector<int> resolve_token_indices(const Trajectory& traj,
                                       const std::vector<std::string>& caption,
                                       const Conditioning<Real>& cond) {
    std::vector<int> idx =
        traj.token_indices.empty() ? find_phrase(caption, traj.object_phrase)
                                   : traj.token_indices;
    for (int i : idx) {
        if (i < 0 || i >= cond.tokens.dim(0)) {
            throw InputError("token index " + std::to_string(i) +
                             " outside the fused token range");
        }
    }
    return idx;
}

// Training-free directional control: from the noisiest timestep down to
// final_timestep, each step traces the denoiser, differentiates the objective
// with respect to the latent, applies the scaled update (inner_iterations
// times), and reuses the last noise prediction for the reverse step.
template <typename Real>
LatentVideo<Real> guided_sample(const DenoiserParams<Real>& params,
                                const Conditioning<Real>& cond, const BoxTrack& track,
                                const std::vector<int>& token_indices,
                                const GuidanceConfig<Real>& gcfg,
                                const NoiseSchedule<Real>& schedule, Shape latent_shape,
                                uint64_t seed,
                                std::vector<GuidanceTraceRow>* trace = nullptr,
                                const StepObserver<Real>& observer = {}, double fps = 8.0) {
    if (gcfg.final_timestep < 1 || gcfg.final_timestep > schedule.total_steps) {
        throw ConfigError("guidance final timestep " + std::to_string(gcfg.final_timestep) +
                          " outside [1," + std::to_string(schedule.total_steps) + "]");
    }
    if (gcfg.inner_iterations < 1) throw ConfigError("guidance inner iterations must be >= 1");
    if (gcfg.layers.empty()) throw ConfigError("guidance layer set is empty");
    if (static_cast<int>(track.masks.size()) != latent_shape[0]) {
        throw ContractError("box track covers " + std::to_string(track.masks.size()) +
                            " frames, latent has " + std::to_string(latent_shape[0]));
    }

    GuidanceHook<Real> hook;
    hook.final_timestep = gcfg.final_timestep;
    hook.step = [&](const Tensor<Real>& z, int t) {
        Tensor<Real> cur = z;
        Tensor<Real> eps;
        for (int it = 0; it < gcfg.inner_iterations; ++it) {
            Tensor<Real> var = cur.clone();
            var.set_variable();
            auto out = predict_noise(params, var, t, cond, gcfg.layers, fps);
            auto objective =
                guidance_objective(out.records, track, token_indices, gcfg.lambda,
                                   gcfg.smoothness_once_per_layer);
            auto grad = backward(objective, {var})[0];
            cur = guidance_update(cur, grad, gcfg.eta, schedule.sigma_at(t));
            eps = out.eps.clone();  // value copy, detached from the graph
            if (trace) {
                trace->push_back({t, it, static_cast<double>(objective.item()),
                                  in_box_mass(out.records, track, token_indices)});
            }
        }
        return std::make_pair(std::move(cur), std::move(eps));
    };

    std::function<Tensor<Real>(const Tensor<Real>&, int, const Conditioning<Real>&)>
        denoiser = [&](const Tensor<Real>& z, int t, const Conditioning<Real>& c) {
            return predict_noise(params, z, t, c, {}, fps).eps;
        };
    return sample<Real, Conditioning<Real>>(denoiser, cond, schedule, latent_shape, seed,
                                            hook, observer);
}

// Plain (unguided) sampling through the same code path.
template <typename Real>
LatentVideo<Real> unguided_sample(const DenoiserParams<Real>& params,
                                  const Conditioning<Real>& cond,
                                  const NoiseSchedule<Real>& schedule, Shape latent_shape,
                                  uint64_t seed, const StepObserver<Real>& observer = {},
                                  double fps = 8.0) {
    std::function<Tensor<Real>(const Tensor<Real>&, int, const Conditioning<Real>&)>
        denoiser = [&](const Tensor<Real>& z, int t, const Conditioning<Real>& c) {
            return predict_noise(params, z, t, c, {}, fps).eps;
        };
    return sample<Real, Conditioning<Real>>(denoiser, cond, schedule, latent_shape, seed, {},
                                            observer);
}

}  // namespace motiondiff

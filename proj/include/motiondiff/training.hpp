#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "motiondiff/denoiser.hpp"
#include "motiondiff/diffusion.hpp"
#include "motiondiff/intensity.hpp"

namespace motiondiff {

template <typename Real>
struct TrainItem {
    Tensor<Real> z0;  // clean latent [L,C,H,W]
    std::vector<std::string> caption;
    int level = 1;
    double fps = 8.0;
};

template <typename Real>
struct SgdState {
    double lr = 1e-3;
    double momentum = 0.9;
    std::vector<std::vector<Real>> velocity;
};

// One noise-prediction training step: per item draw a uniform timestep and
// unit-normal noise, diffuse, predict, and take the mean per-element squared
// error; parameters move by (momentum) gradient descent. All randomness comes
// from `seed`.
template <typename Real>
Real train_step(DenoiserParams<Real>& params, const std::vector<TrainItem<Real>>& batch,
                const TokenTable<Real>& table, const NoiseSchedule<Real>& schedule,
                SgdState<Real>& opt, uint64_t seed) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    Rng rng(seed);
    auto vars = params.as_variables();
    auto named = vars.named_params();
    std::vector<Tensor<Real>> wrt;
    wrt.reserve(named.size());
    for (auto& [name, tp] : named) wrt.push_back(*tp);

    Tensor<Real> loss;
    for (const auto& item : batch) {
        const int t = rng.uniform_int(1, schedule.total_steps);
        auto eps = normal_tensor<Real>(item.z0.shape(), rng);
        auto zt = forward_diffuse(LatentVideo<Real>(item.z0, 0), t, eps, schedule);
        auto cond = build_conditioning(item.caption, item.level, vars.fusion, table,
                                       vars.intensity_table);
        auto pred = predict_noise(vars, zt.values, t, cond, {}, item.fps);
        auto item_loss = scale(sum_squares(sub(pred.eps, eps)),
                               static_cast<Real>(1.0 / static_cast<double>(eps.numel())));
        loss = loss.empty() ? item_loss : add(loss, item_loss);
    }
    loss = scale(loss, static_cast<Real>(1.0 / static_cast<double>(batch.size())));

    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) {
        std::ostringstream diag;
        diag << "train_step: non-finite loss; parameter norms:";
        for (auto& [name, tp] : named) {
            double norm = 0;
            for (int64_t i = 0; i < tp->numel(); ++i)
                norm += static_cast<double>(tp->data()[i]) * tp->data()[i];
            diag << " " << name << "=" << std::sqrt(norm);
        }
        throw NumericError(diag.str());
    }

    auto grads = backward(loss, wrt);
    if (opt.velocity.empty()) {
        opt.velocity.resize(grads.size());
        for (size_t i = 0; i < grads.size(); ++i)
            opt.velocity[i].assign(static_cast<size_t>(grads[i].numel()), Real(0));
    }
    for (size_t i = 0; i < grads.size(); ++i) {
        Real* p = named[i].second->data();
        const Real* g = grads[i].data();
        auto& vel = opt.velocity[i];
        if (opt.momentum > 0) {
            const Real m = static_cast<Real>(opt.momentum);
            const Real lr = static_cast<Real>(opt.lr);
            for (size_t j = 0; j < vel.size(); ++j) {
                vel[j] = m * vel[j] - lr * g[j];
                p[j] += vel[j];
            }
        } else {
            const Real lr = static_cast<Real>(opt.lr);
            for (size_t j = 0; j < vel.size(); ++j) p[j] -= lr * g[j];
        }
    }
    return static_cast<Real>(loss_value);
}

// Batches from an on-disk dataset: encodes clip frames through the latent
// codec and attaches labels. Items cycle deterministically by step index.
template <typename Real>
class DatasetBatcher {
public:
    DatasetBatcher(const std::string& dataset_dir, int downsample_factor)
        : factor_(downsample_factor) {
        const auto ids = read_manifest_ids(dataset_dir);
        const auto labels = read_labels(dataset_dir);
        if (labels.size() != ids.size()) {
            throw InputError("dataset labels do not cover the manifest (" +
                             std::to_string(labels.size()) + " vs " +
                             std::to_string(ids.size()) + ")");
        }
        items_.reserve(ids.size());
        for (size_t i = 0; i < ids.size(); ++i) {
            const auto clip =
                load_clip(dataset_dir + "/clips/" + ids[i]);
            TrainItem<Real> item;
            item.z0 = encode_video<Real>(clip.frames, factor_).values;
            item.caption = clip.caption;
            item.level = labels[i].level;
            items_.push_back(std::move(item));
        }
    }

    size_t size() const { return items_.size(); }

    std::vector<TrainItem<Real>> batch(int step, int batch_size) const {
        std::vector<TrainItem<Real>> out;
        out.reserve(static_cast<size_t>(batch_size));
        for (int i = 0; i < batch_size; ++i)
            out.push_back(items_[(static_cast<size_t>(step) * batch_size + i) % items_.size()]);
        return out;
    }

private:
    int factor_;
    std::vector<TrainItem<Real>> items_;
};

}  // namespace motiondiff

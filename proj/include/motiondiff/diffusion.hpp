#pragma once

#include <functional>
#include <utility>

#include "motiondiff/ops.hpp"
#include "motiondiff/rng.hpp"
#include "motiondiff/schedule.hpp"
#include "motiondiff/tensor.hpp"

namespace motiondiff {

// The diffusing state: a stack of latent frames plus its timestep tag
// (0 = clean data, total_steps = pure noise end of the forward process).
template <typename Real>
struct LatentVideo {
    Tensor<Real> values;  // [frames, channels, H', W']
    int timestep = 0;

    LatentVideo() = default;
    LatentVideo(Tensor<Real> v, int t) : values(std::move(v)), timestep(t) {
        if (values.rank() != 4) {
            throw ShapeError("latent video must be [L,C,H,W], got " +
                             shape_str(values.shape()));
        }
    }
};

// z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps
template <typename Real>
LatentVideo<Real> forward_diffuse(const LatentVideo<Real>& z0, int t, const Tensor<Real>& eps,
                                  const NoiseSchedule<Real>& schedule) {
    if (eps.shape() != z0.values.shape()) {
        throw ShapeError("forward_diffuse: noise shape " + shape_str(eps.shape()) +
                         " vs latent " + shape_str(z0.values.shape()));
    }
    const Real ab = schedule.alpha_bar_at(t);
    const Real sa = static_cast<Real>(std::sqrt(static_cast<double>(ab)));
    const Real sn = static_cast<Real>(std::sqrt(1.0 - static_cast<double>(ab)));
    return LatentVideo<Real>(add(scale(z0.values, sa), scale(eps, sn)), t);
}

// One ancestral reverse step. The final step (t = 1) is deterministic:
// no fresh noise is added.
template <typename Real>
LatentVideo<Real> ddpm_step(const LatentVideo<Real>& zt, const Tensor<Real>& eps_hat, int t,
                            const NoiseSchedule<Real>& schedule,
                            const Tensor<Real>& fresh_noise = {}) {
    if (eps_hat.shape() != zt.values.shape()) {
        throw ShapeError("ddpm_step: eps shape " + shape_str(eps_hat.shape()) + " vs latent " +
                         shape_str(zt.values.shape()));
    }
    const Real beta = schedule.beta_at(t);
    const Real ab = schedule.alpha_bar_at(t);
    const Real inv_sqrt_alpha =
        static_cast<Real>(1.0 / std::sqrt(static_cast<double>(schedule.alpha_at(t))));
    const Real eps_coef =
        static_cast<Real>(static_cast<double>(beta) / std::sqrt(1.0 - static_cast<double>(ab)));

    Tensor<Real> mean =
        scale(sub(zt.values, scale(eps_hat, eps_coef)), inv_sqrt_alpha);
    if (t > 1) {
        if (fresh_noise.empty() || fresh_noise.shape() != zt.values.shape()) {
            throw ShapeError("ddpm_step: fresh noise shape " +
                             (fresh_noise.empty() ? std::string("[]")
                                                  : shape_str(fresh_noise.shape())) +
                             " vs latent " + shape_str(zt.values.shape()));
        }
        const Real sd = static_cast<Real>(std::sqrt(static_cast<double>(beta)));
        mean = add(mean, scale(fresh_noise, sd));
    }
    return LatentVideo<Real>(std::move(mean), t - 1);
}

// Guidance callback driven by sample(): invoked for timesteps total_steps down
// to final_timestep. Returns the updated latent together with the noise
// prediction made at the pre-update latent, which the sampler consumes for the
// subsequent reverse step.
template <typename Real>
struct GuidanceHook {
    int final_timestep = 1;
    std::function<std::pair<Tensor<Real>, Tensor<Real>>(const Tensor<Real>&, int)> step;

    bool active() const { return static_cast<bool>(step); }
};

template <typename Real>
Tensor<Real> normal_tensor(Shape shape, Rng& rng) {
    Tensor<Real> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<Real>(rng.normal());
    return t;
}

// Watches each reverse step right before the posterior update; never affects
// the sampled path.
template <typename Real>
using StepObserver = std::function<void(const Tensor<Real>& z, int t,
                                        const Tensor<Real>& eps_hat)>;

// Full reverse chain from seeded Gaussian noise. All randomness comes from the
// seed; two calls with identical arguments produce bit-identical latents.
template <typename Real, typename Cond>
LatentVideo<Real> sample(
    const std::function<Tensor<Real>(const Tensor<Real>&, int, const Cond&)>& denoiser,
    const Cond& conditioning, const NoiseSchedule<Real>& schedule, Shape latent_shape,
    uint64_t seed, const GuidanceHook<Real>& hook = {},
    const StepObserver<Real>& observer = {}) {
    if (hook.active() &&
        (hook.final_timestep < 1 || hook.final_timestep > schedule.total_steps)) {
        throw ConfigError("guidance final timestep " + std::to_string(hook.final_timestep) +
                          " outside [1," + std::to_string(schedule.total_steps) + "]");
    }
    Rng rng(seed);
    Tensor<Real> z = normal_tensor<Real>(latent_shape, rng);
    for (int t = schedule.total_steps; t >= 1; --t) {
        Tensor<Real> eps_hat;
        if (hook.active() && t >= hook.final_timestep) {
            auto [zu, eps] = hook.step(z, t);
            z = std::move(zu);
            eps_hat = std::move(eps);
        } else {
            NoTrace guard;
            eps_hat = denoiser(z, t, conditioning);
        }
        if (eps_hat.shape() != z.shape()) {
            throw ContractError("denoiser output shape " + shape_str(eps_hat.shape()) +
                                " vs latent " + shape_str(z.shape()));
        }
        if (observer) observer(z, t, eps_hat);
        Tensor<Real> fresh;
        if (t > 1) fresh = normal_tensor<Real>(z.shape(), rng);
        z = ddpm_step(LatentVideo<Real>(std::move(z), t), eps_hat, t, schedule, fresh).values;
    }
    if (!z.all_finite()) throw NumericError("sample: non-finite latent after reverse chain");
    return LatentVideo<Real>(std::move(z), 0);
}

}  // namespace motiondiff

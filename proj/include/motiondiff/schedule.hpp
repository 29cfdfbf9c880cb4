#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "motiondiff/errors.hpp"

namespace motiondiff {

// Which alpha enters the guidance noise scale sigma_t.
enum class SigmaMode {
    CumulativeAlpha,  // sigma_t^2 = (1 - abar_t) / abar_t   (default)
    StepAlpha,        // sigma_t^2 = (1 - alpha_t) / alpha_t (comparison reading)
};

inline SigmaMode sigma_mode_from_string(const std::string& s) {
    if (s == "alpha_bar") return SigmaMode::CumulativeAlpha;
    if (s == "alpha_step") return SigmaMode::StepAlpha;
    throw ConfigError("unknown sigma mode '" + s + "' (alpha_bar | alpha_step)");
}

// Linear-beta noise schedule. Timesteps are 1-based: index t-1 holds step t.
template <typename Real>
struct NoiseSchedule {
    int total_steps = 0;
    std::vector<Real> beta;            // beta_t in (0,1)
    std::vector<Real> alpha;           // 1 - beta_t
    std::vector<Real> alpha_bar;       // prod_{i<=t} alpha_i, strictly decreasing
    std::vector<Real> sigma_guidance;  // guidance noise scale per step

    Real beta_at(int t) const { return beta[check(t)]; }
    Real alpha_at(int t) const { return alpha[check(t)]; }
    Real alpha_bar_at(int t) const { return alpha_bar[check(t)]; }
    Real sigma_at(int t) const { return sigma_guidance[check(t)]; }

private:
    size_t check(int t) const {
        if (t < 1 || t > total_steps) {
            throw ContractError("timestep " + std::to_string(t) + " outside [1," +
                                std::to_string(total_steps) + "]");
        }
        return static_cast<size_t>(t - 1);
    }
};

template <typename Real>
NoiseSchedule<Real> build_schedule(int total_steps, Real beta_start, Real beta_end,
                                   SigmaMode mode = SigmaMode::CumulativeAlpha) {
    if (total_steps < 1) throw ConfigError("schedule: total_steps must be >= 1");
    if (!(beta_start > Real(0)) || !(beta_start <= beta_end) || !(beta_end < Real(1))) {
        throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1, got [" +
                          std::to_string(static_cast<double>(beta_start)) + "," +
                          std::to_string(static_cast<double>(beta_end)) + "]");
    }
    NoiseSchedule<Real> s;
    s.total_steps = total_steps;
    s.beta.resize(static_cast<size_t>(total_steps));
    s.alpha.resize(static_cast<size_t>(total_steps));
    s.alpha_bar.resize(static_cast<size_t>(total_steps));
    s.sigma_guidance.resize(static_cast<size_t>(total_steps));
    double abar = 1.0;
    for (int t = 0; t < total_steps; ++t) {
        const double frac = total_steps == 1 ? 0.0 : static_cast<double>(t) / (total_steps - 1);
        const double b = static_cast<double>(beta_start) +
                         frac * static_cast<double>(beta_end - beta_start);
        s.beta[static_cast<size_t>(t)] = static_cast<Real>(b);
        s.alpha[static_cast<size_t>(t)] = static_cast<Real>(1.0 - b);
        abar *= (1.0 - b);
        s.alpha_bar[static_cast<size_t>(t)] = static_cast<Real>(abar);
        const double a = (mode == SigmaMode::CumulativeAlpha) ? abar : 1.0 - b;
        s.sigma_guidance[static_cast<size_t>(t)] = static_cast<Real>(std::sqrt((1.0 - a) / a));
    }
    return s;
}

}  // namespace motiondiff

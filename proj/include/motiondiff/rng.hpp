#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace motiondiff {

namespace rngdetail {
inline uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace rngdetail

// Deterministic derivation of an independent stream seed.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    return rngdetail::splitmix(base ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
}

// Deterministic random source. All draw transforms are implemented here so
// results are bit-identical across standard libraries; only the raw mt19937_64
// stream (which is fully specified) comes from <random>.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_base_(rngdetail::splitmix(seed)), engine_(seed_base_) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range.
    int uniform_int(int lo, int hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u = 1.0 - uniform();  // avoid log(0)
        const double r = std::sqrt(-2.0 * std::log(u));
        const double theta = 2.0 * 3.14159265358979323846 * uniform();
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Derive an independent deterministic stream, e.g. one per sample or clip.
    Rng fork(uint64_t stream) const {
        return Rng(seed_base_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

private:
    uint64_t seed_base_ = 0;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace motiondiff

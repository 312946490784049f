// Deterministic random number generation. The engine is xoshiro256++ seeded
// through splitmix64, with an explicit Box-Muller transform for normals, so
// that identical seeds give bit-identical streams on every platform.
#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>

namespace ddlab {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a key path.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t k0,
                                 std::uint64_t k1 = 0, std::uint64_t k2 = 0,
                                 std::uint64_t k3 = 0) {
    std::uint64_t s = base;
    for (std::uint64_t k : {k0, k1, k2, k3}) {
        s ^= splitmix64_next(s) + 0x9E3779B97F4A7C15ULL * (k + 1);
        splitmix64_next(s);
    }
    return s;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64_next(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // 1 - u is in (0, 1], keeping the log finite.
        const double r = std::sqrt(-2.0 * std::log1p(-uniform()));
        const double phi = 2.0 * M_PI * uniform();
        spare_ = r * std::sin(phi);
        have_spare_ = true;
        return r * std::cos(phi);
    }

    // Index in [0, probs.size()) with the given probabilities.
    int discrete(const Eigen::VectorXd& probs) {
        const double u = uniform();
        double cum = 0.0;
        for (int j = 0; j + 1 < probs.size(); ++j) {
            cum += probs[j];
            if (u < cum) return j;
        }
        return static_cast<int>(probs.size()) - 1;
    }

    void fill_gaussian(Eigen::Ref<Eigen::MatrixXd> m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = gaussian();
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace ddlab

#pragma once

// Seeded random streams. Every stochastic operation in the library takes an
// explicit engine (or a plain integer seed) so that runs are reproducible and
// checkpoints can restore the exact generator state via stream serialization.

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace semivox {

using RngEngine = std::mt19937_64;

// splitmix64; used to derive well-separated stream seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline RngEngine make_engine(std::uint64_t seed) { return RngEngine(mix_seed(seed)); }

// Uniform double in [0, 1) with 53 random bits. We deliberately avoid
// std::uniform_real_distribution: its output sequence is implementation
// defined, while this mapping is pinned by the engine contract alone.
inline double rng_u01(RngEngine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n). Modulo bias is < n / 2^64 which is irrelevant at
// the magnitudes used here (class counts, voxel counts).
inline std::uint64_t rng_index(RngEngine& eng, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("rng_index: empty range");
    return eng() % n;
}

inline double rng_uniform(RngEngine& eng, double lo, double hi) {
    return lo + (hi - lo) * rng_u01(eng);
}

inline double rng_log_uniform(RngEngine& eng, double lo, double hi) {
    if (!(lo > 0.0) || !(hi >= lo))
        throw std::invalid_argument("rng_log_uniform: need 0 < lo <= hi");
    return std::exp(rng_uniform(eng, std::log(lo), std::log(hi)));
}

inline bool rng_coin(RngEngine& eng) { return (eng() & 1ULL) != 0; }

inline std::string serialize_engine(const RngEngine& eng) {
    std::ostringstream os;
    os << eng;
    return os.str();
}

inline RngEngine deserialize_engine(const std::string& s) {
    std::istringstream is(s);
    RngEngine eng;
    is >> eng;
    if (is.fail()) throw std::runtime_error("rng: corrupt engine state");
    return eng;
}

// All randomness in a training run flows from one seed fanned out into named
// streams, so reordering work in one subsystem cannot perturb another.
struct RngPool {
    RngEngine data;     // case selection
    RngEngine augment;  // weak/strong view seeds
    RngEngine mix;      // center-class and center-voxel sampling
    RngEngine init;     // parameter initialization
    RngEngine auxmask;  // auxiliary-head keep masks

    static RngPool from_seed(std::uint64_t seed) {
        RngPool p;
        p.data    = RngEngine(mix_seed(seed ^ 0x64617461ULL));
        p.augment = RngEngine(mix_seed(seed ^ 0x6175676dULL));
        p.mix     = RngEngine(mix_seed(seed ^ 0x6d697820ULL));
        p.init    = RngEngine(mix_seed(seed ^ 0x696e6974ULL));
        p.auxmask = RngEngine(mix_seed(seed ^ 0x61757861ULL));
        return p;
    }
};

}  // namespace semivox

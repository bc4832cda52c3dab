#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace cosa {

// Seeded stream with explicit state serialization. Distribution helpers are
// stateless (fresh draw each call) so a stream's state is exactly the engine
// state; checkpoints round-trip bitwise on the same platform.
class RngStream {
public:
    RngStream() : engine_(0) {}
    explicit RngStream(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    double uniform(double lo, double hi) {
        // 53-bit mantissa draw, avoids distribution-object state
        const double u = (engine_() >> 11) * (1.0 / 9007199254740992.0);
        return lo + u * (hi - lo);
    }

    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        // modulo bias is negligible for span << 2^64 and keeps draws single-call
        return lo + static_cast<int64_t>(engine_() % span);
    }

    bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

    double normal(double mean, double stddev) {
        // Box-Muller without cached spare; two draws per sample, stateless
        double u1 = uniform(0.0, 1.0);
        double u2 = uniform(0.0, 1.0);
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

// Derives independent substreams from one master seed. Stream ids are stable
// across runs; adding a new id never perturbs existing streams.
inline uint64_t substream_seed(uint64_t master, uint64_t stream_id) {
    // splitmix64 of (master ^ golden-ratio * id)
    uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace cosa

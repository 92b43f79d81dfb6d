#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace janus {

/// Deterministic RNG. mt19937_64 is fully specified by the standard, so the
/// stream is identical on every platform; the value mappings below avoid
/// std::uniform_*_distribution, whose outputs are implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed = 1) : gen_(seed) {}

    uint64_t bits() { return gen_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
    long below(long n) {
        if (n <= 0) throw std::runtime_error("rng: below(n) needs n > 0");
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return static_cast<long>(x % un);
    }

    /// Text snapshot of the generator state; round-trips exactly.
    std::string save_state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }
    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        if (is.fail()) throw std::runtime_error("rng: corrupt serialized state");
    }

    bool operator==(const Rng& o) const { return gen_ == o.gen_; }

private:
    std::mt19937_64 gen_;
};

}  // namespace janus

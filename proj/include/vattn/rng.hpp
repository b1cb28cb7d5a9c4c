#pragma once

#include <array>
#include <cstdint>

namespace vattn {

// splitmix64 step, also used to derive independent per-sample seeds
// (seed = mix64(run_seed, sample_id)).
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);

// Deterministic xoshiro256++ generator seeded through splitmix64.
// Normal deviates come from the Box-Muller transform; each transform yields
// two values and the second one is cached, so a stream of normal() calls
// consumes two uniforms per pair in a fixed, documented order. Identical
// seeds give identical sequences on every platform, up to libm rounding.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    std::uint64_t next_u64();

    // uniform on [0, 1)
    double uniform();

    // uniform integer on [0, n), n >= 1; unbiased via rejection
    std::uint64_t uniform_int(std::uint64_t n);

    // standard normal draw
    double normal();

    // child generator for parallel work; consumes one draw from this stream
    Rng spawn(std::uint64_t salt);

    struct State {
        std::array<std::uint64_t, 4> s;
        bool has_cached;
        double cached;
    };
    State state() const;
    void set_state(const State& st);

private:
    std::array<std::uint64_t, 4> s_{};
    bool has_cached_ = false;
    double cached_ = 0.0;
};

} // namespace vattn

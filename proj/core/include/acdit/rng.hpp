#pragma once

#include <cstdint>
#include <vector>

namespace acdit {

// xoshiro256++ with splitmix64 seeding. The standard library distributions
// are not bit-portable across implementations, so uniform/normal draws are
// spelled out here; every test that fixes a seed relies on this.
class Rng {
   public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed);

    uint64_t next_u64();

    // Uniform double in [0, 1).
    double uniform();

    // Uniform integer in [0, n).
    int64_t uniform_int(int64_t n);

    // Standard normal via Box-Muller (one spare value cached).
    double normal();

    std::vector<float> normal_vec(int64_t n);
    std::vector<float> uniform_vec(int64_t n, float lo, float hi);

    // Raw state access for checkpointing.
    struct State {
        uint64_t s[4];
        uint8_t has_spare;
        double spare;
    };
    State state() const;
    void set_state(const State& st);

   private:
    uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace acdit

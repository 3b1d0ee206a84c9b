#pragma once

#include <cstdint>
#include <vector>

namespace iris3d {

// Worker-thread budget: hardware concurrency capped by the CLRE_THREADS
// environment variable. Applied to OpenMP once, lazily.
int thread_count();
void apply_thread_cap();

// Deterministic sub-seed derivation (splitmix64 finalizer). Used to give
// parallel generators independent streams whose output does not depend on
// scheduling.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Deterministic RNG. Distributions are implemented by hand because the
// standard library ones are implementation-defined; the byte streams this
// produces must be reproducible everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();
    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    float uniform_f(float lo, float hi);
    int uniform_int(int lo, int hi);       // inclusive bounds
    double normal();                       // standard normal, Box-Muller

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            std::swap(v[static_cast<std::size_t>(i)],
                      v[static_cast<std::size_t>(uniform_int(0, i))]);
        }
    }

private:
    std::uint64_t state_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace iris3d

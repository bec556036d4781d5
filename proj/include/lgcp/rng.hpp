#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace lgcp {

// Deterministic random source. The standard normal and Poisson distributions
// in <random> are implementation-defined, so outputs would differ across
// standard libraries. This class fixes the algorithms (Box-Muller for normals,
// Knuth multiplication with chunking for Poisson) on top of mt19937_64 so a
// seed yields the same stream everywhere.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t raw() { return gen_(); }

    // uniform on (0,1), never returns 0 or 1
    double uniform() {
        // 53-bit mantissa, shifted into the open interval
        const double u = (static_cast<double>(gen_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
        return u;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Poisson draw by Knuth's product method. For large means the product of
    // uniforms underflows, so the mean is consumed in chunks of at most 500
    // and the partial counts summed; each chunk stays well inside double range.
    long poisson(double mean) {
        if (!(mean >= 0.0)) throw std::invalid_argument("poisson mean must be non-negative");
        long count = 0;
        double remaining = mean;
        while (remaining > 500.0) {
            count += poisson_knuth(500.0);
            remaining -= 500.0;
        }
        count += poisson_knuth(remaining);
        return count;
    }

private:
    long poisson_knuth(double mean) {
        if (mean <= 0.0) return 0;
        const double limit = std::exp(-mean);
        long k = 0;
        double prod = uniform();
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}

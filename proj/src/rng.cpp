#include "lprobe/rng.hpp"

#include <cmath>
#include <numbers>

namespace lprobe {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
    : seed_(seed),
      stream_id_(stream_id),
      key_(splitmix64(seed ^ splitmix64(stream_id ^ 0xD1B54A32D192ED03ULL))) {}

RngStream RngStream::derive(std::uint64_t key) const noexcept {
    return RngStream(seed_, splitmix64(stream_id_ * kGolden + splitmix64(key)));
}

std::uint64_t RngStream::next_u64() noexcept {
    // Two rounds so that neighbouring counters decorrelate fully.
    const std::uint64_t c = counter_++;
    return splitmix64(splitmix64(key_ + c * kGolden) ^ key_);
}

double RngStream::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) noexcept {
    // Rejection on the top of the range keeps the draw unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

double RngStream::normal() noexcept {
    if (spare_normal_) {
        const double z = *spare_normal_;
        spare_normal_.reset();
        return z;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_normal_ = r * std::sin(theta);
    return r * std::cos(theta);
}

} // namespace lprobe

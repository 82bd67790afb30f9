#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>

namespace lprobe {

/// Consumers of randomness. Each one draws from its own stream so that
/// reordering one consumer never perturbs another.
enum class StreamKind : std::uint64_t {
    init = 1,
    shuffle = 2,
    dropout = 3,
    bootstrap = 4,
    synth = 5,
};

/// Counter-based deterministic generator.
///
/// Output i of stream (seed, stream_id) is a pure function of the triple
/// (seed, stream_id, i), so streams can be re-created anywhere (e.g. on a
/// worker thread keyed by resample index) and still yield the same values.
/// Not thread-safe: each consumer owns its stream.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept;
    RngStream(std::uint64_t seed, StreamKind kind) noexcept
        : RngStream(seed, static_cast<std::uint64_t>(kind)) {}

    /// Independent child stream keyed by `key` (e.g. epoch or step index).
    RngStream derive(std::uint64_t key) const noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Uniform integer on [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) noexcept;
    /// Standard normal via Box-Muller.
    double normal() noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Fisher-Yates shuffle driven by this stream.
    template <class T>
    void shuffle(std::span<T> items) noexcept {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::optional<double> spare_normal_;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

} // namespace lprobe

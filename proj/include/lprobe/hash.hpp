#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace lprobe {

/// 64-bit FNV-1a. Stable across platforms and runs, used for run ids and
/// dataset fingerprints.
class Fnv1a64 {
public:
    void update(std::span<const std::byte> bytes) noexcept {
        for (auto b : bytes) {
            state_ ^= static_cast<std::uint64_t>(b);
            state_ *= 0x100000001B3ULL;
        }
    }
    void update(std::string_view s) noexcept { update(std::as_bytes(std::span(s.data(), s.size()))); }
    void update_u64(std::uint64_t v) noexcept {
        std::byte buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<std::byte>((v >> (8 * i)) & 0xFF);
        update(buf);
    }
    std::uint64_t digest() const noexcept { return state_; }

private:
    std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

std::string to_hex(std::uint64_t v);

} // namespace lprobe

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace lorafuse {

// Incremental 64-bit FNV-1a. Used for query, plan and library digests in
// reports; not a cryptographic hash.
class Digest {
 public:
  Digest& update(std::span<const std::byte> bytes) noexcept;
  Digest& update(std::string_view text) noexcept;
  Digest& update(double value) noexcept;
  Digest& update(std::span<const double> values) noexcept;
  Digest& update(std::span<const float> values) noexcept;
  Digest& update(std::uint64_t value) noexcept;

  std::uint64_t value() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string digest_hex(std::span<const double> values);

}  // namespace lorafuse

#include "lorafuse/digest.hpp"

#include <bit>
#include <cstdio>

namespace lorafuse {

namespace {
constexpr std::uint64_t kPrime = 0x100000001b3ULL;

template <typename T>
std::span<const std::byte> bytes_of(const T& v) noexcept {
  return std::as_bytes(std::span<const T, 1>(&v, 1));
}
}  // namespace

Digest& Digest::update(std::span<const std::byte> bytes) noexcept {
  for (std::byte b : bytes) {
    state_ ^= static_cast<std::uint64_t>(b);
    state_ *= kPrime;
  }
  return *this;
}

Digest& Digest::update(std::string_view text) noexcept {
  update(static_cast<std::uint64_t>(text.size()));
  return update(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

Digest& Digest::update(double value) noexcept {
  // -0.0 and 0.0 hash alike
  if (value == 0.0) value = 0.0;
  return update(std::bit_cast<std::uint64_t>(value));
}

Digest& Digest::update(std::span<const double> values) noexcept {
  for (double v : values) update(v);
  return *this;
}

Digest& Digest::update(std::span<const float> values) noexcept {
  for (float v : values) update(static_cast<std::uint64_t>(std::bit_cast<std::uint32_t>(v)));
  return *this;
}

Digest& Digest::update(std::uint64_t value) noexcept {
  // fixed little-endian byte order
  for (int i = 0; i < 8; ++i) {
    state_ ^= (value >> (8 * i)) & 0xffu;
    state_ *= kPrime;
  }
  return *this;
}

std::string Digest::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

std::string digest_hex(std::span<const double> values) {
  return Digest{}.update(values).hex();
}

}  // namespace lorafuse

#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace forge {

/// 256-bit SHA-256 digest.
struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  std::string hex() const;
  auto operator<=>(const Digest&) const = default;
};

Digest sha256(std::string_view data);

/// Digest of a file's bytes. Throws Error(IoError) if unreadable.
Digest sha256_file(const std::filesystem::path& path);

}  // namespace forge

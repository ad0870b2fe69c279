#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mtf {

/// 64-bit FNV-1a. Used for provenance hashes and checkpoint checksums.
class Fnv1a {
 public:
  Fnv1a& update(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(const void* data, std::size_t size) {
    return update(std::string_view(static_cast<const char*>(data), size));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view bytes) { return Fnv1a().update(bytes).digest(); }

/// Fixed-width lowercase hex, e.g. "00af3c...".
std::string hex64(std::uint64_t value);

/// FNV-1a of a file's contents; throws IoError when unreadable.
std::uint64_t hash_file(const std::string& path);

}  // namespace mtf

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace udair {

// Incremental SHA-256, used for parameter digests and checkpoint integrity.
class Sha256 {
public:
  Sha256();
  void update(const void* data, size_t len);
  // Finalizes and returns the 64-char lowercase hex digest. The object must
  // not be updated afterwards.
  std::string hex_digest();

  static std::string of(const void* data, size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.hex_digest();
  }
  static std::string of(const std::string& s) { return of(s.data(), s.size()); }

private:
  void process_block(const uint8_t* block);

  uint32_t state_[8];
  uint64_t bit_len_ = 0;
  uint8_t buffer_[64];
  size_t buffer_len_ = 0;
};

}  // namespace udair

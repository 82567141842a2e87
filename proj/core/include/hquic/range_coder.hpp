#pragma once

#include <cstdint>
#include <vector>

#include "hquic/errors.hpp"

namespace hquic {

// Byte-oriented range coder with 16-bit probability precision and carry
// propagation through a cached byte (LZMA style). Frequencies come from
// frozen integer CDF tables whose totals are exactly 1<<16.
class RangeEncoder {
 public:
  static constexpr std::uint32_t kProbBits = 16;

  void encode(std::uint32_t cum, std::uint32_t freq) {
    std::uint32_t r = range_ >> kProbBits;
    low_ += static_cast<std::uint64_t>(r) * cum;
    range_ = r * freq;
    while (range_ < (1u << 24)) {
      shift_low();
      range_ <<= 8;
    }
  }

  std::vector<std::uint8_t> finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
  }

 private:
  void shift_low() {
    if (low_ < 0xFF000000ull || low_ >= (1ull << 32)) {
      std::uint8_t carry = static_cast<std::uint8_t>(low_ >> 32);
      if (!first_) out_.push_back(static_cast<std::uint8_t>(cache_ + carry));
      for (; pending_ > 0; --pending_)
        out_.push_back(static_cast<std::uint8_t>(0xFF + carry));
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
      first_ = false;
    } else {
      ++pending_;
    }
    low_ = (low_ << 8) & 0xFFFFFFFFull;
  }

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 0;
  bool first_ = true;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  // cumulative frequency of the current symbol position in [0, 1<<16)
  std::uint32_t decode_cum() {
    r_ = range_ >> RangeEncoder::kProbBits;
    std::uint32_t c = static_cast<std::uint32_t>(code_ / r_);
    return c >= (1u << 16) ? (1u << 16) - 1 : c;
  }

  void decode_update(std::uint32_t cum, std::uint32_t freq) {
    code_ -= static_cast<std::uint64_t>(r_) * cum;
    range_ = r_ * freq;
    while (range_ < (1u << 24)) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
  }

 private:
  std::uint8_t next_byte() {
    if (pos_ >= bytes_.size()) {
      // the encoder flush guarantees at least 4 trailing bytes; running out
      // before that means a truncated payload
      if (++overrun_ > 4) throw DecodeError("range decoder: truncated payload");
      return 0;
    }
    return bytes_[pos_++];
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
  int overrun_ = 0;
  std::uint64_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t r_ = 0;
};

}  // namespace hquic

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace desdis {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BadMagicError : public IoError {
 public:
  using IoError::IoError;
};

class VersionMismatchError : public IoError {
 public:
  using IoError::IoError;
};

class TruncatedPayloadError : public IoError {
 public:
  using IoError::IoError;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

namespace serial {

// Little-endian byte writer/reader over an in-memory buffer. Files are built
// fully in memory, then written in one shot, so a failed save never leaves a
// half-written payload behind a successful return.
class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<std::uint8_t>& data() const { return buf_; }

  void write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()),
              static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}

  static Reader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> data(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(data.data()), size);
    if (!in) throw IoError("short read from '" + path.string() + "'");
    return Reader(std::move(data));
  }

  std::uint8_t u8() {
    need(1);
    return buf_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }

  void expect_exhausted(const char* what) const {
    if (remaining() != 0) {
      throw FormatError(std::string(what) + ": " + std::to_string(remaining()) +
                        " unexpected trailing bytes");
    }
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) {
      throw TruncatedPayloadError("truncated payload: need " + std::to_string(n) +
                                  " bytes, have " + std::to_string(buf_.size() - pos_));
    }
  }

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace serial
}  // namespace desdis

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace lcl {

/// A file did not parse; `section()` names the part that failed.
class CorruptFileError : public std::runtime_error {
 public:
  CorruptFileError(std::string section, const std::string& detail)
      : std::runtime_error("corrupt file in section '" + section + "': " + detail), section_(std::move(section)) {}
  const std::string& section() const noexcept { return section_; }

 private:
  std::string section_;
};

/// Little-endian, fixed-width serializer into a byte buffer.
class ByteWriter {
 public:
  template <typename U>
    requires std::is_arithmetic_v<U>
  void put(U value) {
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                                    std::conditional_t<sizeof(U) == 2, std::uint16_t,
                                                       std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
    const Bits bits = std::bit_cast<Bits>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }

  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }

  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }

  /// Length-prefixed (u64) text block.
  void put_text(const std::string& s) {
    put(static_cast<std::uint64_t>(s.size()));
    put_bytes(s.data(), s.size());
  }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

  void write_file(const std::string& path) const;

 private:
  std::vector<std::uint8_t> bytes_;
};

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline void ByteWriter::write_file(const std::string& path) const { write_bytes(path, bytes_); }

/// Bounds-checked little-endian reader. Every read names the section it
/// belongs to so truncation errors are specific.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {}

  static ByteReader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data));
  }

  void section(std::string name) { section_ = std::move(name); }
  const std::string& section() const noexcept { return section_; }

  template <typename U>
    requires std::is_arithmetic_v<U>
  U get() {
    need(sizeof(U));
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                                    std::conditional_t<sizeof(U) == 2, std::uint16_t,
                                                       std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(static_cast<Bits>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }

  void get_bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::string get_string(std::size_t max_len = 1u << 20) {
    const auto n = get<std::uint32_t>();
    if (n > max_len) fail("string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }

  std::string get_text() {
    const auto n = get<std::uint64_t>();
    if (n > remaining()) fail("text block of " + std::to_string(n) + " bytes runs past end of file");
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }

  void expect_magic(const char (&magic)[9]) {
    char buf[8];
    get_bytes(buf, 8);
    if (std::memcmp(buf, magic, 8) != 0) fail("bad magic, expected " + std::string(magic, 8));
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t position() const noexcept { return pos_; }

  [[noreturn]] void fail(const std::string& detail) const { throw CorruptFileError(section_, detail); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) {
      fail("unexpected end of data at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) + ")");
    }
  }

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::string section_ = "header";
};

}  // namespace lcl

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "peel/error.hpp"
#include "peel/matrix.hpp"

namespace peel {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

// Append-only little-endian byte sink.
class ByteWriter {
 public:
  void Magic(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }
  void U16(std::uint16_t v) { Raw(&v, sizeof v); }
  void U32(std::uint32_t v) { Raw(&v, sizeof v); }
  void U64(std::uint64_t v) { Raw(&v, sizeof v); }
  void F32(float v) { Raw(&v, sizeof v); }
  void F64(double v) { Raw(&v, sizeof v); }
  void F32s(std::span<const float> v) { Raw(v.data(), v.size_bytes()); }
  void Str(const std::string& s) {
    U32(static_cast<std::uint32_t>(s.size()));
    Raw(s.data(), s.size());
  }
  void Mat(const Matrix& m) {
    U32(static_cast<std::uint32_t>(m.rows()));
    U32(static_cast<std::uint32_t>(m.cols()));
    F32s(m.flat());
  }

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> Take() { return std::move(bytes_); }

 private:
  void Raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked reader over a byte buffer; truncation is a format error.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void ExpectMagic(std::string_view magic) {
    Need(magic.size());
    Require(std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) == 0,
            ErrorKind::kFormat, "bad magic, expected '" + std::string(magic) + "'");
    pos_ += magic.size();
  }
  std::uint16_t U16() { return Pod<std::uint16_t>(); }
  std::uint32_t U32() { return Pod<std::uint32_t>(); }
  std::uint64_t U64() { return Pod<std::uint64_t>(); }
  float F32() { return Pod<float>(); }
  double F64() { return Pod<double>(); }
  void F32s(std::span<float> out) {
    Need(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
  }
  std::string Str() {
    const std::uint32_t n = U32();
    Need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Matrix Mat() {
    const std::uint32_t rows = U32();
    const std::uint32_t cols = U32();
    Need(static_cast<std::size_t>(rows) * cols * sizeof(float));
    Matrix m(rows, cols);
    F32s(m.flat());
    return m;
  }

  bool AtEnd() const noexcept { return pos_ == bytes_.size(); }
  std::size_t position() const noexcept { return pos_; }

 private:
  template <class T>
  T Pod() {
    Need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void Need(std::size_t n) const {
    Require(bytes_.size() - pos_ >= n, ErrorKind::kFormat, "truncated binary file");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> ReadFileBytes(const std::string& path);
void WriteFileBytes(const std::string& path, std::span<const std::uint8_t> bytes);
std::string ReadFileText(const std::string& path);
void WriteFileText(const std::string& path, const std::string& text);

}  // namespace peel

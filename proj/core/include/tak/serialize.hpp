#pragma once

// Little-endian binary blobs and the container file shared by every on-disk
// artifact: 8-byte magic "TAKFILE1", u64 manifest length, UTF-8 JSON manifest,
// then the blobs the manifest describes, in order.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tak/linalg.hpp"

namespace tak {

inline constexpr std::string_view kMatrixMagic = "TAKMAT01";
inline constexpr std::string_view kContainerMagic = "TAKFILE1";

class BlobWriter {
 public:
  explicit BlobWriter(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(std::span<const std::uint8_t> b);
  void raw(std::string_view s);
  void matrix(const Matrix& m);

 private:
  std::ostream& out_;
};

/// Sequential reader that reports the absolute byte offset of any failure.
class BlobReader {
 public:
  BlobReader(std::span<const std::uint8_t> data, std::size_t base_offset = 0)
      : data_(data), base_(base_offset) {}

  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<std::uint8_t> bytes(std::size_t n);
  std::string raw(std::size_t n);
  Matrix matrix();

  std::size_t offset() const noexcept { return base_ + pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* what) const;

  std::span<const std::uint8_t> data_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

/// A parsed container: manifest text plus a reader positioned at the first blob.
struct Container {
  std::string manifest;
  std::vector<std::uint8_t> payload;
  std::size_t payload_offset = 0;

  BlobReader reader() const { return BlobReader(payload, payload_offset); }
};

/// Writes magic, manifest, and the pre-encoded payload.
void write_container(const std::string& path, const std::string& manifest,
                     const std::string& payload);
Container read_container(const std::string& path);
Container parse_container(std::span<const std::uint8_t> file);

Matrix read_matrix(std::istream& in);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// FNV-1a 64-bit, used for content addressing and anchor identity.
std::uint64_t fnv1a64(std::span<const std::uint8_t> data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_doubles(std::span<const double> values);
std::string hex64(std::uint64_t v);

}  // namespace tak

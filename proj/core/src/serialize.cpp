#include "tak/serialize.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tak/errors.hpp"

namespace tak {

void BlobWriter::u32(std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out_.write(b, 4);
}

void BlobWriter::u64(std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out_.write(b, 8);
}

void BlobWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void BlobWriter::bytes(std::span<const std::uint8_t> b) {
  out_.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

void BlobWriter::raw(std::string_view s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

void BlobWriter::matrix(const Matrix& m) {
  raw(kMatrixMagic);
  u32(static_cast<std::uint32_t>(m.rows()));
  u32(static_cast<std::uint32_t>(m.cols()));
  for (double v : m.data()) f64(v);
}

void BlobReader::need(std::size_t n, const char* what) const {
  if (data_.size() - pos_ < n) {
    throw FormatError(std::string("truncated data reading ") + what, base_ + pos_);
  }
}

std::uint32_t BlobReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t BlobReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double BlobReader::f64() { return std::bit_cast<double>(u64()); }

std::vector<std::uint8_t> BlobReader::bytes(std::size_t n) {
  need(n, "bytes");
  std::vector<std::uint8_t> out(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return out;
}

std::string BlobReader::raw(std::size_t n) {
  need(n, "string");
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

Matrix BlobReader::matrix() {
  const std::size_t start = offset();
  if (raw(kMatrixMagic.size()) != kMatrixMagic) throw FormatError("bad matrix magic", start);
  const std::size_t rows = u32();
  const std::size_t cols = u32();
  if (rows != 0 && cols > (data_.size() - pos_) / 8 / rows) {
    throw FormatError("matrix payload shorter than header claims", offset());
  }
  std::vector<double> v(rows * cols);
  for (double& x : v) x = f64();
  if (!all_finite(v)) throw FormatError("non-finite matrix entry", start);
  return Matrix(rows, cols, std::move(v));
}

void write_container(const std::string& path, const std::string& manifest, const std::string& payload) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  BlobWriter w(out);
  w.raw(kContainerMagic);
  w.u64(manifest.size());
  w.raw(manifest);
  w.raw(payload);
  if (!out) throw Error("write failed for '" + path + "'");
}

Container parse_container(std::span<const std::uint8_t> file) {
  BlobReader r(file);
  if (file.size() < kContainerMagic.size() || r.raw(kContainerMagic.size()) != kContainerMagic) {
    throw FormatError("bad container magic", 0);
  }
  const std::uint64_t len = r.u64();
  if (len > file.size()) throw FormatError("manifest length exceeds file size", 8);
  Container c;
  c.manifest = r.raw(static_cast<std::size_t>(len));
  c.payload_offset = r.offset();
  c.payload.assign(file.begin() + static_cast<std::ptrdiff_t>(c.payload_offset), file.end());
  return c;
}

Container read_container(const std::string& path) { return parse_container(read_file_bytes(path)); }

Matrix read_matrix(std::istream& in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  BlobReader r(bytes);
  return r.matrix();
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_doubles(std::span<const double> values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xFF;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace tak

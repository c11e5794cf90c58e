#pragma once

#include "precomp/core.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace precomp::io {

static_assert(std::endian::native == std::endian::little,
              "binary file formats are little-endian");

// FNV-1a, used for config/artifact hashes.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Shortest round-trip formatting; CSV artifacts must parse back bit-exactly.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Temp file + rename so partially written artifacts are never observed.
inline void atomic_write(const std::filesystem::path& path, std::string_view contents) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

class BinaryWriter {
 public:
  void magic(const char tag[4]) { buf_.append(tag, 4); }
  void u8(std::uint8_t v) { raw(&v, 1); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void f64s(const double* p, std::size_t n) { raw(p, 8 * n); }
  const std::string& str() const { return buf_; }

 private:
  void raw(const void* p, std::size_t n) {
    buf_.append(static_cast<const char*>(p), n);
  }
  std::string buf_;
};

class BinaryReader {
 public:
  explicit BinaryReader(std::string data) : data_(std::move(data)) {}

  void expect_magic(const char tag[4]) {
    if (data_.size() < pos_ + 4 || std::memcmp(data_.data() + pos_, tag, 4) != 0)
      throw IoError(std::string("bad magic, expected ") + std::string(tag, 4));
    pos_ += 4;
  }
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  void f64s(double* p, std::size_t n) { raw(p, 8 * n); }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  template <class T>
  T get() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }
  void raw(void* p, std::size_t n) {
    if (data_.size() < pos_ + n) throw IoError("truncated binary file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace precomp::io

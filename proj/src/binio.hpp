#pragma once

// Internal little-endian binary IO helpers shared by the file formats.
// Readers validate eagerly and throw FormatError on any structural problem
// so callers never see partially populated objects.

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>

#include "pauc/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialized formats assume a little-endian host");

namespace pauc::binio {

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open for writing: " + path);
  }

  void magic(const char tag[4]) { raw(tag, 4); }
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }

  void close() {
    out_.close();
    if (!out_) throw IoError("short write: " + path_);
  }

 private:
  void raw(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_);
  }

  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open for reading: " + path);
  }

  void expect_magic(const char tag[4]) {
    char buf[4];
    raw(buf, 4);
    if (std::string(buf, 4) != std::string(tag, 4)) {
      throw FormatError(path_ + ": bad magic, expected " + std::string(tag, 4));
    }
  }

  uint8_t u8() {
    uint8_t v;
    raw(&v, 1);
    return v;
  }
  uint32_t u32() {
    uint32_t v;
    raw(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    raw(&v, 8);
    return v;
  }
  float f32() {
    float v;
    raw(&v, 4);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }

  // Guards rows*cols style products before a bulk read.
  uint64_t checked_count(uint64_t a, uint64_t b) {
    if (a != 0 && b > (1ull << 32) / a) {
      throw FormatError(path_ + ": dimension overflow");
    }
    return a * b;
  }

  void expect_eof() {
    char c;
    in_.read(&c, 1);
    if (!in_.eof()) throw FormatError(path_ + ": trailing bytes");
  }

  const std::string& path() const { return path_; }

 private:
  void raw(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n) {
      throw FormatError(path_ + ": truncated file");
    }
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace pauc::binio

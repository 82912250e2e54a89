#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "proxops/types.hpp"

namespace proxops {

/// 64-bit FNV-1a hash, used as the integrity trailer of the weight and dataset files.
std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size);

/// Little-endian serializer into a growable byte buffer.
class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(v); }
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f64(double v);
  void put_bytes(const void* data, std::size_t n);

  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

/// Little-endian reader; every read past the end throws Error(code) with the given context.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, ErrorCode code, std::string context)
      : data_(data), size_(size), code_(code), context_(std::move(context)) {}

  std::uint8_t get_u8();
  std::uint32_t get_u32();
  std::uint64_t get_u64();
  double get_f64();
  void get_bytes(void* out, std::size_t n);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  void need(std::size_t n) const;

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  ErrorCode code_;
  std::string context_;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace proxops

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icvid/tensor.hpp"

namespace icvid {

// Flat binary tensor container used by datasets and checkpoints.
// Layout: magic "VAPT" | version u32 | rank u32 | dims u32[rank] | dtype u8 |
// payload. All integers and payload scalars are little-endian. dtype codes:
// 0 = float32, 1 = float64.
inline constexpr uint32_t kVaptVersion = 1;
inline constexpr uint8_t kVaptF32 = 0;
inline constexpr uint8_t kVaptF64 = 1;

std::vector<uint8_t> serialize_vapt(const Tensor<float>& t);
std::vector<uint8_t> serialize_vapt(const Tensor<double>& t);

// Parses a container; converts the stored payload to the requested scalar
// type (float32 <-> float64). Throws DataError on malformed bytes.
template <class T>
Tensor<T> parse_vapt(const std::vector<uint8_t>& bytes);

void write_vapt(const std::string& path, const Tensor<float>& t);
void write_vapt(const std::string& path, const Tensor<double>& t);

template <class T>
Tensor<T> read_vapt(const std::string& path);

uint8_t vapt_dtype(const std::vector<uint8_t>& bytes);

// FNV-1a 64-bit, used for manifest content hashes.
uint64_t fnv1a64(const uint8_t* data, size_t n);
uint64_t fnv1a64(const std::string& s);
uint64_t fnv1a64_file(const std::string& path);
std::string hex64(uint64_t v);

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace icvid

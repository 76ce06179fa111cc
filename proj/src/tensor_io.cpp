#include "icvid/tensor_io.hpp"

#include <cstring>
#include <fstream>

#include "icvid/errors.hpp"

namespace icvid {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

uint32_t get_u32(const std::vector<uint8_t>& b, size_t& pos) {
  if (pos + 4 > b.size()) throw DataError("tensor container truncated in header");
  uint32_t v = static_cast<uint32_t>(b[pos]) |
               (static_cast<uint32_t>(b[pos + 1]) << 8) |
               (static_cast<uint32_t>(b[pos + 2]) << 16) |
               (static_cast<uint32_t>(b[pos + 3]) << 24);
  pos += 4;
  return v;
}

void put_scalar(std::vector<uint8_t>& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_scalar(std::vector<uint8_t>& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u32(out, static_cast<uint32_t>(bits & 0xFFFFFFFFull));
  put_u32(out, static_cast<uint32_t>(bits >> 32));
}

float get_f32(const std::vector<uint8_t>& b, size_t& pos) {
  uint32_t bits = get_u32(b, pos);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double get_f64(const std::vector<uint8_t>& b, size_t& pos) {
  uint64_t lo = get_u32(b, pos);
  uint64_t hi = get_u32(b, pos);
  uint64_t bits = lo | (hi << 32);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

template <class T>
std::vector<uint8_t> serialize_impl(const Tensor<T>& t, uint8_t dtype) {
  std::vector<uint8_t> out;
  out.reserve(13 + t.shape().size() * 4 + static_cast<size_t>(t.numel()) * sizeof(T));
  out.push_back('V');
  out.push_back('A');
  out.push_back('P');
  out.push_back('T');
  put_u32(out, kVaptVersion);
  put_u32(out, static_cast<uint32_t>(t.shape().size()));
  for (int64_t d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
  out.push_back(dtype);
  for (int64_t i = 0; i < t.numel(); ++i) put_scalar(out, t.data()[i]);
  return out;
}

struct VaptHeader {
  std::vector<int64_t> shape;
  uint8_t dtype;
  size_t payload_pos;
  int64_t numel;
};

VaptHeader parse_header(const std::vector<uint8_t>& b) {
  if (b.size() < 13 || b[0] != 'V' || b[1] != 'A' || b[2] != 'P' || b[3] != 'T')
    throw DataError("tensor container: bad magic");
  size_t pos = 4;
  uint32_t version = get_u32(b, pos);
  if (version != kVaptVersion)
    throw DataError("tensor container: unsupported version " + std::to_string(version));
  uint32_t rank = get_u32(b, pos);
  if (rank > 8) throw DataError("tensor container: implausible rank");
  VaptHeader h;
  h.numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    uint32_t d = get_u32(b, pos);
    if (d == 0) throw DataError("tensor container: zero dimension");
    h.shape.push_back(static_cast<int64_t>(d));
    h.numel *= d;
  }
  if (pos >= b.size()) throw DataError("tensor container truncated before dtype");
  h.dtype = b[pos++];
  if (h.dtype != kVaptF32 && h.dtype != kVaptF64)
    throw DataError("tensor container: unknown dtype code " + std::to_string(h.dtype));
  h.payload_pos = pos;
  size_t want = static_cast<size_t>(h.numel) * (h.dtype == kVaptF32 ? 4 : 8);
  if (b.size() - pos != want)
    throw DataError("tensor container: payload size mismatch");
  return h;
}

}  // namespace

std::vector<uint8_t> serialize_vapt(const Tensor<float>& t) {
  return serialize_impl(t, kVaptF32);
}

std::vector<uint8_t> serialize_vapt(const Tensor<double>& t) {
  return serialize_impl(t, kVaptF64);
}

template <class T>
Tensor<T> parse_vapt(const std::vector<uint8_t>& bytes) {
  VaptHeader h = parse_header(bytes);
  Tensor<T> out(h.shape.empty() ? std::vector<int64_t>{1} : h.shape);
  if (h.shape.empty()) out = Tensor<T>({1});
  size_t pos = h.payload_pos;
  if (h.dtype == kVaptF32) {
    for (int64_t i = 0; i < h.numel; ++i)
      out.data()[i] = static_cast<T>(get_f32(bytes, pos));
  } else {
    for (int64_t i = 0; i < h.numel; ++i)
      out.data()[i] = static_cast<T>(get_f64(bytes, pos));
  }
  return out;
}

template Tensor<float> parse_vapt<float>(const std::vector<uint8_t>&);
template Tensor<double> parse_vapt<double>(const std::vector<uint8_t>&);

uint8_t vapt_dtype(const std::vector<uint8_t>& bytes) {
  return parse_header(bytes).dtype;
}

void write_vapt(const std::string& path, const Tensor<float>& t) {
  write_file_bytes(path, serialize_vapt(t));
}

void write_vapt(const std::string& path, const Tensor<double>& t) {
  write_file_bytes(path, serialize_vapt(t));
}

template <class T>
Tensor<T> read_vapt(const std::string& path) {
  return parse_vapt<T>(read_file_bytes(path));
}

template Tensor<float> read_vapt<float>(const std::string&);
template Tensor<double> read_vapt<double>(const std::string&);

uint64_t fnv1a64(const uint8_t* data, size_t n) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(reinterpret_cast<const uint8_t*>(s.data()), s.size());
}

uint64_t fnv1a64_file(const std::string& path) {
  std::vector<uint8_t> b = read_file_bytes(path);
  return fnv1a64(b.data(), b.size());
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  std::streamoff n = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<uint8_t> out(static_cast<size_t>(n));
  if (n > 0) f.read(reinterpret_cast<char*>(out.data()), n);
  if (!f) throw DataError("failed reading file: " + path);
  return out;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open file for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing file: " + path);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open file for writing: " + path);
  f << text;
  if (!f) throw DataError("failed writing file: " + path);
}

std::string read_text_file(const std::string& path) {
  std::vector<uint8_t> b = read_file_bytes(path);
  return std::string(b.begin(), b.end());
}

}  // namespace icvid

#include "fwdecg/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fwdecg/error.hpp"

namespace fwdecg {

namespace {

template <typename U>
void put_le(std::vector<unsigned char>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<unsigned char>((value >> (8 * i)) & 0xFFU));
  }
}

template <typename U>
U get_le(std::span<const unsigned char> bytes, std::size_t offset) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[offset + i]) << (8 * i);
  }
  return value;
}

std::size_t element_width(DType dtype) { return dtype == DType::Float32 ? 4 : 8; }

}  // namespace

Tensor Tensor::from_float(std::vector<std::uint64_t> dims, std::vector<float> values) {
  Tensor t;
  t.dtype = DType::Float32;
  t.dims = std::move(dims);
  t.f32 = std::move(values);
  if (t.element_count() != t.f32.size()) throw ShapeError("tensor dims do not match value count");
  return t;
}

Tensor Tensor::from_double(std::vector<std::uint64_t> dims, std::vector<double> values) {
  Tensor t;
  t.dtype = DType::Float64;
  t.dims = std::move(dims);
  t.f64 = std::move(values);
  if (t.element_count() != t.f64.size()) throw ShapeError("tensor dims do not match value count");
  return t;
}

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<double> Tensor::to_double() const {
  if (dtype == DType::Float64) return f64;
  return {f32.begin(), f32.end()};
}

std::vector<unsigned char> encode_tensor(const Tensor& tensor) {
  if (tensor.element_count() != tensor.size()) throw ShapeError("tensor dims do not match value count");
  std::vector<unsigned char> out;
  const std::size_t width = element_width(tensor.dtype);
  out.reserve(16 + 8 * tensor.dims.size() + width * tensor.size());
  out.insert(out.end(), kTensorMagic, kTensorMagic + 4);
  put_le<std::uint32_t>(out, kTensorFormatVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dtype));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put_le<std::uint64_t>(out, d);
  if (tensor.dtype == DType::Float32) {
    for (float v : tensor.f32) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  } else {
    for (double v : tensor.f64) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Tensor decode_tensor(std::span<const unsigned char> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw BadMagicError("bad magic: not an ECGF tensor file");
  }
  if (bytes.size() < 16) throw TruncatedPayloadError("truncated header");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kTensorFormatVersion) {
    throw UnknownVersionError("unknown format version " + std::to_string(version));
  }
  const auto dtype_code = get_le<std::uint32_t>(bytes, 8);
  if (dtype_code != 1 && dtype_code != 2) {
    throw FormatError("unknown dtype code " + std::to_string(dtype_code));
  }
  const auto dtype = static_cast<DType>(dtype_code);
  const auto ndim = get_le<std::uint32_t>(bytes, 12);
  std::size_t offset = 16;
  if (bytes.size() < offset + 8ULL * ndim) throw TruncatedPayloadError("truncated dims");
  std::vector<std::uint64_t> dims(ndim);
  unsigned __int128 count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    dims[i] = get_le<std::uint64_t>(bytes, offset);
    offset += 8;
    count *= dims[i];
  }
  const std::size_t width = element_width(dtype);
  const unsigned __int128 expected = count * width;
  const std::size_t available = bytes.size() - offset;
  if (expected != available) {
    throw TruncatedPayloadError("truncated payload: expected " +
                                std::to_string(static_cast<unsigned long long>(expected)) +
                                " bytes, found " + std::to_string(available));
  }
  const auto n = static_cast<std::size_t>(count);
  if (dtype == DType::Float32) {
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset + 4 * i));
    }
    return Tensor::from_float(std::move(dims), std::move(values));
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset + 8 * i));
  }
  return Tensor::from_double(std::move(dims), std::move(values));
}

void write_bytes_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  const auto bytes = encode_tensor(tensor);
  write_bytes_atomic(path, bytes);
}

Tensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    // Re-throw the same type with the file name attached.
    const std::string msg = path.string() + ": " + e.what();
    if (dynamic_cast<const BadMagicError*>(&e)) throw BadMagicError(msg);
    if (dynamic_cast<const UnknownVersionError*>(&e)) throw UnknownVersionError(msg);
    if (dynamic_cast<const TruncatedPayloadError*>(&e)) throw TruncatedPayloadError(msg);
    throw FormatError(msg);
  }
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_bytes_atomic(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fwdecg

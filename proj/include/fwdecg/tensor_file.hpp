#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fwdecg {

/// Element type codes stored in the header.
enum class DType : std::uint32_t {
  Float32 = 1,
  Float64 = 2,
};

/// Dense row-major tensor. Float32 tensors keep their values in `f32`,
/// Float64 tensors in `f64`; exactly one of the two is populated.
struct Tensor {
  DType dtype = DType::Float32;
  std::vector<std::uint64_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;

  static Tensor from_float(std::vector<std::uint64_t> dims, std::vector<float> values);
  static Tensor from_double(std::vector<std::uint64_t> dims, std::vector<double> values);

  std::uint64_t element_count() const;
  std::size_t size() const { return dtype == DType::Float32 ? f32.size() : f64.size(); }
  /// Element as double regardless of storage type.
  double at(std::size_t i) const { return dtype == DType::Float32 ? f32[i] : f64[i]; }
  std::vector<double> to_double() const;

  bool operator==(const Tensor&) const = default;
};

/// On-disk layout (all integers little-endian):
///   "ECGF" | u32 version (=1) | u32 dtype | u32 ndim | ndim x u64 dims | payload
/// Payload is row-major little-endian IEEE-754, 4 bytes per element for
/// Float32 and 8 for Float64.
inline constexpr char kTensorMagic[4] = {'E', 'C', 'G', 'F'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;

std::vector<unsigned char> encode_tensor(const Tensor& tensor);

/// Throws BadMagicError, UnknownVersionError or TruncatedPayloadError (all
/// FormatError) on malformed input. Nothing is returned on failure.
Tensor decode_tensor(std::span<const unsigned char> bytes);

/// Writes through a temporary file and renames it into place.
void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

/// Shared helpers for atomic output and whole-file reads.
void write_bytes_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<unsigned char> read_bytes(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

}  // namespace fwdecg

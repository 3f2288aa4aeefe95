#pragma once

// Flat binary tensor container ("PBTENSR1").
//
// Layout: 8-byte magic, u32 rank, rank x u32 dims (row-major), u8 dtype tag,
// then the raw little-endian payload.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace patchdebias {

enum class DType : std::uint8_t {
    F32 = 0,
    U8 = 1,
    F64 = 2,  // used for float64 parameter checkpoints
};

std::size_t dtype_size(DType dtype);

struct TensorBlob {
    std::vector<std::uint32_t> dims;
    DType dtype = DType::F32;
    std::vector<std::byte> payload;

    std::size_t element_count() const;

    static TensorBlob from_f32(std::vector<std::uint32_t> dims, std::span<const float> values);
    static TensorBlob from_f64(std::vector<std::uint32_t> dims, std::span<const double> values);
    static TensorBlob from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values);

    std::vector<float> as_f32() const;
    std::vector<double> as_f64() const;
    std::vector<std::uint8_t> as_u8() const;
};

std::vector<std::byte> encode_tensor(const TensorBlob& blob);
TensorBlob decode_tensor(std::span<const std::byte> bytes);

void write_tensor(const std::filesystem::path& path, const TensorBlob& blob);
TensorBlob read_tensor(const std::filesystem::path& path);

}  // namespace patchdebias

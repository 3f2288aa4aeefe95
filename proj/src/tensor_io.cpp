#include "patchdebias/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "patchdebias/error.hpp"

namespace patchdebias {

static_assert(std::endian::native == std::endian::little,
              "PBTENSR1 payloads are memcpy'd and assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'B', 'T', 'E', 'N', 'S', 'R', '1'};

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFFu));
    }
}

std::uint32_t get_u32(std::span<const std::byte> bytes, std::size_t& pos) {
    if (pos + 4 > bytes.size()) {
        throw IoError("PBTENSR1: truncated header");
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    }
    pos += 4;
    return v;
}

template <typename T>
TensorBlob pack(std::vector<std::uint32_t> dims, DType dtype, std::span<const T> values) {
    TensorBlob blob;
    blob.dims = std::move(dims);
    blob.dtype = dtype;
    if (blob.element_count() != values.size()) {
        throw ValidationError("tensor dims do not match value count");
    }
    blob.payload.resize(values.size_bytes());
    if (!values.empty()) {
        std::memcpy(blob.payload.data(), values.data(), values.size_bytes());
    }
    return blob;
}

template <typename T>
std::vector<T> unpack(const TensorBlob& blob, DType expected) {
    if (blob.dtype != expected) {
        throw IoError("PBTENSR1: unexpected dtype tag " +
                      std::to_string(static_cast<int>(blob.dtype)));
    }
    std::vector<T> out(blob.element_count());
    if (!out.empty()) {
        std::memcpy(out.data(), blob.payload.data(), blob.payload.size());
    }
    return out;
}

}  // namespace

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::F32: return 4;
        case DType::U8: return 1;
        case DType::F64: return 8;
    }
    throw IoError("PBTENSR1: unknown dtype tag " + std::to_string(static_cast<int>(dtype)));
}

std::size_t TensorBlob::element_count() const {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, std::uint32_t d) { return a * d; });
}

TensorBlob TensorBlob::from_f32(std::vector<std::uint32_t> dims, std::span<const float> values) {
    return pack(std::move(dims), DType::F32, values);
}

TensorBlob TensorBlob::from_f64(std::vector<std::uint32_t> dims, std::span<const double> values) {
    return pack(std::move(dims), DType::F64, values);
}

TensorBlob TensorBlob::from_u8(std::vector<std::uint32_t> dims,
                               std::span<const std::uint8_t> values) {
    return pack(std::move(dims), DType::U8, values);
}

std::vector<float> TensorBlob::as_f32() const { return unpack<float>(*this, DType::F32); }
std::vector<double> TensorBlob::as_f64() const { return unpack<double>(*this, DType::F64); }
std::vector<std::uint8_t> TensorBlob::as_u8() const {
    return unpack<std::uint8_t>(*this, DType::U8);
}

std::vector<std::byte> encode_tensor(const TensorBlob& blob) {
    if (blob.payload.size() != blob.element_count() * dtype_size(blob.dtype)) {
        throw ValidationError("tensor payload size does not match dims and dtype");
    }
    std::vector<std::byte> out;
    out.reserve(8 + 4 + 4 * blob.dims.size() + 1 + blob.payload.size());
    for (char c : kMagic) {
        out.push_back(static_cast<std::byte>(c));
    }
    put_u32(out, static_cast<std::uint32_t>(blob.dims.size()));
    for (std::uint32_t d : blob.dims) {
        put_u32(out, d);
    }
    out.push_back(static_cast<std::byte>(blob.dtype));
    out.insert(out.end(), blob.payload.begin(), blob.payload.end());
    return out;
}

TensorBlob decode_tensor(std::span<const std::byte> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw IoError("PBTENSR1: bad magic");
    }
    std::size_t pos = 8;
    TensorBlob blob;
    const std::uint32_t rank = get_u32(bytes, pos);
    blob.dims.reserve(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
        blob.dims.push_back(get_u32(bytes, pos));
    }
    if (pos >= bytes.size()) {
        throw IoError("PBTENSR1: missing dtype tag");
    }
    blob.dtype = static_cast<DType>(bytes[pos++]);
    const std::size_t expected = blob.element_count() * dtype_size(blob.dtype);
    if (bytes.size() - pos != expected) {
        throw IoError("PBTENSR1: payload is " + std::to_string(bytes.size() - pos) +
                      " bytes, expected " + std::to_string(expected));
    }
    blob.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return blob;
}

void write_tensor(const std::filesystem::path& path, const TensorBlob& blob) {
    const auto bytes = encode_tensor(blob);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing");
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

TensorBlob read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<std::byte> bytes(raw.size());
    std::memcpy(bytes.data(), raw.data(), raw.size());
    return decode_tensor(bytes);
}

}  // namespace patchdebias

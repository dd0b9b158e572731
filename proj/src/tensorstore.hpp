#pragma once

#include "error.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

// Model container format and tensor data model shared by every other module.
//
// On-disk layout (all integers little-endian):
//   magic "ESTM0001" (8 bytes)
//   header length (u64)
//   header (UTF-8 JSON: version, metadata, payload CRC32, tensor table)
//   payload blob
//
// Quantized payload, per block: scale (f32) | offset (f32) | codes.
// q4 packs two codes per byte, low nibble first; q8 one code per byte.
// Blocks are laid out consecutively over the flattened row-major tensor;
// a trailing partial block packs only its own codes.

namespace estm {

inline constexpr char     k_container_magic[8] = {'E', 'S', 'T', 'M', '0', '0', '0', '1'};
inline constexpr uint32_t k_container_version  = 1;

struct TensorF32 {
    std::string          name;
    std::vector<int64_t> shape;
    std::vector<float>   data; // row-major

    int64_t numel() const;
    bool    operator==(const TensorF32 &) const = default;
};

struct QuantizedTensor {
    std::string          name;
    std::vector<int64_t> shape;
    int                  bits       = 4;  // 4 or 8
    int                  block_size = 32;
    std::vector<uint8_t> packed;

    int64_t numel() const;
    int64_t block_count() const;
    int64_t block_len(int64_t blk) const; // == block_size except possibly the last

    bool operator==(const QuantizedTensor &) const = default;
};

using Tensor = std::variant<TensorF32, QuantizedTensor>;

const std::string &          tensor_name(const Tensor & t);
const std::vector<int64_t> & tensor_shape(const Tensor & t);
int64_t                      tensor_numel(const Tensor & t);

// Exact payload byte count: f32 tensors take 4*numel, quantized tensors take
// 8 + ceil(len*bits/8) per block.
int64_t quant_block_bytes(int64_t block_len, int bits);
int64_t quant_payload_bytes(int64_t numel, int bits, int block_size);
int64_t tensor_payload_bytes(const Tensor & t);

struct ModelContainer {
    uint32_t                           version = k_container_version;
    std::vector<Tensor>                tensors;
    std::map<std::string, std::string> metadata;

    const Tensor * find(std::string_view name) const;
    bool           operator==(const ModelContainer &) const = default;
};

void           write_container(const ModelContainer & c, const std::string & path);
ModelContainer read_container(const std::string & path);

// Total payload size (excludes magic + header).
int64_t container_size_bytes(const ModelContainer & c);

// Block packing helpers shared by quantcore and the kernels.
void pack_block(std::span<const uint8_t> codes, float scale, float offset, int bits,
                std::vector<uint8_t> & out);
// codes must have room for block_len(blk) entries.
void unpack_block(const QuantizedTensor & t, int64_t blk, float & scale, float & offset,
                  uint8_t * codes);
int64_t block_byte_offset(const QuantizedTensor & t, int64_t blk);

} // namespace estm

#include "tensorstore.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <cstring>
#include <fstream>
#include <set>

namespace estm {

using json = nlohmann::json;

static int64_t shape_numel(const std::vector<int64_t> & shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) {
            fail(errc::shape, "non-positive dimension in tensor shape");
        }
        n *= d;
    }
    return n;
}

int64_t TensorF32::numel() const {
    return shape_numel(shape);
}

int64_t QuantizedTensor::numel() const {
    return shape_numel(shape);
}

int64_t QuantizedTensor::block_count() const {
    return (numel() + block_size - 1) / block_size;
}

int64_t QuantizedTensor::block_len(int64_t blk) const {
    const int64_t n    = numel();
    const int64_t from = blk * block_size;
    return std::min<int64_t>(block_size, n - from);
}

const std::string & tensor_name(const Tensor & t) {
    return std::visit([](const auto & x) -> const std::string & { return x.name; }, t);
}

const std::vector<int64_t> & tensor_shape(const Tensor & t) {
    return std::visit([](const auto & x) -> const std::vector<int64_t> & { return x.shape; }, t);
}

int64_t tensor_numel(const Tensor & t) {
    return std::visit([](const auto & x) { return x.numel(); }, t);
}

int64_t quant_block_bytes(int64_t block_len, int bits) {
    return 8 + (block_len * bits + 7) / 8;
}

int64_t quant_payload_bytes(int64_t numel, int bits, int block_size) {
    const int64_t full = numel / block_size;
    const int64_t rem  = numel % block_size;
    int64_t bytes = full * quant_block_bytes(block_size, bits);
    if (rem > 0) {
        bytes += quant_block_bytes(rem, bits);
    }
    return bytes;
}

int64_t tensor_payload_bytes(const Tensor & t) {
    if (const auto * f = std::get_if<TensorF32>(&t)) {
        return 4 * f->numel();
    }
    const auto & q = std::get<QuantizedTensor>(t);
    return quant_payload_bytes(q.numel(), q.bits, q.block_size);
}

const Tensor * ModelContainer::find(std::string_view name) const {
    for (const auto & t : tensors) {
        if (tensor_name(t) == name) {
            return &t;
        }
    }
    return nullptr;
}

int64_t container_size_bytes(const ModelContainer & c) {
    int64_t total = 0;
    for (const auto & t : c.tensors) {
        total += tensor_payload_bytes(t);
    }
    return total;
}

void pack_block(std::span<const uint8_t> codes, float scale, float offset, int bits,
                std::vector<uint8_t> & out) {
    uint8_t raw[8];
    std::memcpy(raw + 0, &scale, 4);
    std::memcpy(raw + 4, &offset, 4);
    out.insert(out.end(), raw, raw + 8);
    if (bits == 8) {
        out.insert(out.end(), codes.begin(), codes.end());
    } else if (bits == 4) {
        for (size_t i = 0; i < codes.size(); i += 2) {
            uint8_t lo = codes[i] & 0x0f;
            uint8_t hi = (i + 1 < codes.size()) ? (codes[i + 1] & 0x0f) : 0;
            out.push_back(static_cast<uint8_t>(lo | (hi << 4)));
        }
    } else {
        fail(errc::invalid_arg, "unsupported bit width " + std::to_string(bits));
    }
}

int64_t block_byte_offset(const QuantizedTensor & t, int64_t blk) {
    // Only the final block can be short, so offsets are a flat stride.
    return blk * quant_block_bytes(t.block_size, t.bits);
}

void unpack_block(const QuantizedTensor & t, int64_t blk, float & scale, float & offset,
                  uint8_t * codes) {
    const int64_t off = block_byte_offset(t, blk);
    const int64_t len = t.block_len(blk);
    const int64_t need = off + quant_block_bytes(len, t.bits);
    if (need > static_cast<int64_t>(t.packed.size())) {
        fail(errc::format, "quantized tensor '" + t.name + "': packed payload truncated");
    }
    std::memcpy(&scale, t.packed.data() + off, 4);
    std::memcpy(&offset, t.packed.data() + off + 4, 4);
    const uint8_t * p = t.packed.data() + off + 8;
    if (t.bits == 8) {
        std::memcpy(codes, p, len);
    } else {
        for (int64_t i = 0; i < len; ++i) {
            codes[i] = (i % 2 == 0) ? (p[i / 2] & 0x0f) : (p[i / 2] >> 4);
        }
    }
}

// ── serialization ───────────────────────────────────────────────────────────

static void validate_for_write(const ModelContainer & c) {
    std::set<std::string> names;
    for (const auto & t : c.tensors) {
        const std::string & name = tensor_name(t);
        if (!names.insert(name).second) {
            fail(errc::invalid_arg, "duplicate tensor name '" + name + "'");
        }
        if (const auto * f = std::get_if<TensorF32>(&t)) {
            if (static_cast<int64_t>(f->data.size()) != f->numel()) {
                fail(errc::shape, "tensor '" + name + "': data length does not match shape");
            }
        } else {
            const auto & q = std::get<QuantizedTensor>(t);
            if (q.bits != 4 && q.bits != 8) {
                fail(errc::invalid_arg, "tensor '" + name + "': bits must be 4 or 8");
            }
            const int64_t want = quant_payload_bytes(q.numel(), q.bits, q.block_size);
            if (static_cast<int64_t>(q.packed.size()) != want) {
                fail(errc::shape, "tensor '" + name + "': packed size mismatch");
            }
        }
    }
}

static const char * dtype_str(const Tensor & t) {
    if (std::holds_alternative<TensorF32>(t)) {
        return "f32";
    }
    return std::get<QuantizedTensor>(t).bits == 4 ? "q4" : "q8";
}

void write_container(const ModelContainer & c, const std::string & path) {
    validate_for_write(c);

    std::vector<uint8_t> payload;
    payload.reserve(container_size_bytes(c));
    json tensors = json::array();
    for (const auto & t : c.tensors) {
        json entry;
        entry["name"]   = tensor_name(t);
        entry["dtype"]  = dtype_str(t);
        entry["shape"]  = tensor_shape(t);
        entry["offset"] = payload.size();
        if (const auto * f = std::get_if<TensorF32>(&t)) {
            const size_t nbytes = f->data.size() * 4;
            entry["nbytes"] = nbytes;
            const size_t at = payload.size();
            payload.resize(at + nbytes);
            std::memcpy(payload.data() + at, f->data.data(), nbytes);
        } else {
            const auto & q = std::get<QuantizedTensor>(t);
            entry["block_size"] = q.block_size;
            entry["nbytes"]     = q.packed.size();
            payload.insert(payload.end(), q.packed.begin(), q.packed.end());
        }
        tensors.push_back(std::move(entry));
    }

    json header;
    header["version"]       = c.version;
    header["metadata"]      = c.metadata;
    header["tensors"]       = tensors;
    header["payload_crc32"] = static_cast<uint32_t>(
        crc32(0L, payload.empty() ? Z_NULL : payload.data(), static_cast<uInt>(payload.size())));

    const std::string header_text = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        fail(errc::io, "cannot open '" + path + "' for writing");
    }
    f.write(k_container_magic, 8);
    uint64_t hlen = header_text.size();
    uint8_t  lenb[8];
    for (int i = 0; i < 8; ++i) {
        lenb[i] = static_cast<uint8_t>(hlen >> (8 * i));
    }
    f.write(reinterpret_cast<const char *>(lenb), 8);
    f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    if (!payload.empty()) {
        f.write(reinterpret_cast<const char *>(payload.data()),
                static_cast<std::streamsize>(payload.size()));
    }
    if (!f) {
        fail(errc::io, "write failed for '" + path + "'");
    }
}

ModelContainer read_container(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io, "cannot open '" + path + "'");
    }
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16 || std::memcmp(bytes.data(), k_container_magic, 8) != 0) {
        fail(errc::format, "'" + path + "' is not a model container (bad magic)");
    }
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) {
        hlen |= static_cast<uint64_t>(bytes[8 + i]) << (8 * i);
    }
    if (16 + hlen > bytes.size()) {
        fail(errc::format, "'" + path + "': header truncated");
    }

    json header;
    try {
        header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<int64_t>(hlen));
    } catch (const json::exception & e) {
        fail(errc::format, "'" + path + "': malformed header: " + e.what());
    }

    ModelContainer c;
    c.version = header.value("version", 0u);
    if (c.version != k_container_version) {
        fail(errc::format, "'" + path + "': unsupported container version " +
                               std::to_string(c.version));
    }
    if (header.contains("metadata")) {
        for (auto & [k, v] : header["metadata"].items()) {
            c.metadata[k] = v.get<std::string>();
        }
    }

    const uint8_t * payload       = bytes.data() + 16 + hlen;
    const int64_t   payload_bytes = static_cast<int64_t>(bytes.size()) - 16 - static_cast<int64_t>(hlen);

    const uint32_t want_crc = header.value("payload_crc32", 0u);
    const uint32_t got_crc  = static_cast<uint32_t>(
        crc32(0L, payload_bytes == 0 ? Z_NULL : payload, static_cast<uInt>(payload_bytes)));
    if (want_crc != got_crc) {
        fail(errc::format, "'" + path + "': payload checksum mismatch");
    }

    for (const auto & entry : header["tensors"]) {
        const std::string name   = entry.at("name").get<std::string>();
        const std::string dtype  = entry.at("dtype").get<std::string>();
        const int64_t     offset = entry.at("offset").get<int64_t>();
        const int64_t     nbytes = entry.at("nbytes").get<int64_t>();
        if (offset < 0 || nbytes < 0 || offset + nbytes > payload_bytes) {
            fail(errc::format, "'" + path + "': tensor '" + name + "' payload out of range");
        }
        std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
        if (dtype == "f32") {
            TensorF32 t;
            t.name  = name;
            t.shape = std::move(shape);
            if (nbytes != 4 * t.numel()) {
                fail(errc::format, "'" + path + "': tensor '" + name + "' size mismatch");
            }
            t.data.resize(static_cast<size_t>(nbytes / 4));
            std::memcpy(t.data.data(), payload + offset, static_cast<size_t>(nbytes));
            c.tensors.emplace_back(std::move(t));
        } else if (dtype == "q4" || dtype == "q8") {
            QuantizedTensor q;
            q.name       = name;
            q.shape      = std::move(shape);
            q.bits       = dtype == "q4" ? 4 : 8;
            q.block_size = entry.at("block_size").get<int>();
            if (q.block_size < 2) {
                fail(errc::format, "'" + path + "': tensor '" + name + "' bad block size");
            }
            if (nbytes != quant_payload_bytes(q.numel(), q.bits, q.block_size)) {
                fail(errc::format, "'" + path + "': tensor '" + name + "' size mismatch");
            }
            q.packed.assign(payload + offset, payload + offset + nbytes);
            c.tensors.emplace_back(std::move(q));
        } else {
            fail(errc::format, "'" + path + "': tensor '" + name + "' has unknown dtype '" + dtype + "'");
        }
    }
    return c;
}

} // namespace estm

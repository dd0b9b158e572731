#include "wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace estm::wav {

static uint32_t rd_u32(const uint8_t * p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

static uint16_t rd_u16(const uint8_t * p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

WavAudio read_wav(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io, "cannot open '" + path + "'");
    }
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        fail(errc::format, "'" + path + "' is not a RIFF/WAVE file");
    }

    WavAudio out;
    size_t pos = 12;
    bool   have_fmt = false;
    while (pos + 8 <= bytes.size()) {
        const char *   id   = reinterpret_cast<const char *>(bytes.data() + pos);
        const uint32_t size = rd_u32(bytes.data() + pos + 4);
        const size_t   body = pos + 8;
        if (body + size > bytes.size()) {
            fail(errc::format, "'" + path + "': truncated chunk");
        }
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) {
                fail(errc::format, "'" + path + "': short fmt chunk");
            }
            const uint16_t format   = rd_u16(bytes.data() + body);
            const uint16_t channels = rd_u16(bytes.data() + body + 2);
            const uint16_t bits     = rd_u16(bytes.data() + body + 14);
            out.sample_rate         = static_cast<int>(rd_u32(bytes.data() + body + 4));
            if (format != 1 || channels != 1 || bits != 16) {
                fail(errc::format, "'" + path + "': expected 16-bit PCM mono");
            }
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            if (!have_fmt) {
                fail(errc::format, "'" + path + "': data chunk before fmt");
            }
            const size_t n = size / 2;
            out.samples.resize(n);
            for (size_t i = 0; i < n; ++i) {
                int16_t v;
                std::memcpy(&v, bytes.data() + body + 2 * i, 2);
                out.samples[i] = static_cast<float>(v) / 32768.0f;
            }
            return out;
        }
        pos = body + size + (size & 1);
    }
    fail(errc::format, "'" + path + "': no data chunk");
}

static void wr_u32(std::ofstream & f, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    f.write(reinterpret_cast<const char *>(b), 4);
}

static void wr_u16(std::ofstream & f, uint16_t v) {
    uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
    f.write(reinterpret_cast<const char *>(b), 2);
}

void write_wav(const std::string & path, std::span<const float> samples, int sample_rate) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        fail(errc::io, "cannot open '" + path + "' for writing");
    }
    const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * 2);
    f.write("RIFF", 4);
    wr_u32(f, 36 + data_bytes);
    f.write("WAVE", 4);
    f.write("fmt ", 4);
    wr_u32(f, 16);
    wr_u16(f, 1); // PCM
    wr_u16(f, 1); // mono
    wr_u32(f, static_cast<uint32_t>(sample_rate));
    wr_u32(f, static_cast<uint32_t>(sample_rate) * 2);
    wr_u16(f, 2);
    wr_u16(f, 16);
    f.write("data", 4);
    wr_u32(f, data_bytes);
    for (float s : samples) {
        const int v = static_cast<int>(std::lround(std::clamp(s, -1.0f, 1.0f) * 32767.0f));
        wr_u16(f, static_cast<uint16_t>(static_cast<int16_t>(v)));
    }
    if (!f) {
        fail(errc::io, "write failed for '" + path + "'");
    }
}

std::vector<float> read_raw_f32(const std::string & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        fail(errc::io, "cannot open '" + path + "'");
    }
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) {
        fail(errc::format, "'" + path + "': raw f32 file length not a multiple of 4");
    }
    std::vector<float> out(bytes.size() / 4);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

} // namespace estm::wav

#include "dope/png_io.hpp"

#include <array>
#include <cstdio>
#include <cstring>

#include "dope/errors.hpp"

namespace dope::io {

namespace {

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t n = 0; n < 256; ++n) {
            std::uint32_t c = n;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[n] = c;
        }
        return t;
    }();
    crc ^= 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

std::uint32_t adler32(const std::uint8_t* data, std::size_t len) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void put_u32be(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32be(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
           (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
    put_u32be(out, static_cast<std::uint32_t>(payload.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    put_u32be(out, crc32(out.data() + start, out.size() - start));
}

std::vector<std::uint8_t> zlib_store(const std::vector<std::uint8_t>& raw) {
    std::vector<std::uint8_t> z;
    z.push_back(0x78); // 32K window, deflate
    z.push_back(0x01);
    std::size_t off = 0;
    do {
        const std::size_t block = std::min<std::size_t>(raw.size() - off, 65535);
        const bool final = off + block == raw.size();
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<std::uint8_t>(block & 0xff));
        z.push_back(static_cast<std::uint8_t>(block >> 8));
        z.push_back(static_cast<std::uint8_t>(~block & 0xff));
        z.push_back(static_cast<std::uint8_t>((~block >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + off, raw.begin() + off + block);
        off += block;
    } while (off < raw.size());
    put_u32be(z, adler32(raw.data(), raw.size()));
    return z;
}

std::vector<std::uint8_t> zlib_unstore(const std::uint8_t* z, std::size_t len) {
    if (len < 6) throw IoError("png: truncated zlib stream");
    if ((z[0] & 0x0f) != 8) throw IoError("png: unsupported compression method");
    std::vector<std::uint8_t> raw;
    std::size_t off = 2;
    for (;;) {
        if (off + 5 > len) throw IoError("png: truncated deflate block");
        const std::uint8_t header = z[off];
        if ((header >> 1) != 0)
            throw IoError("png: only stored deflate blocks are supported");
        const std::size_t block = z[off + 1] | (std::size_t(z[off + 2]) << 8);
        off += 5;
        if (off + block > len) throw IoError("png: deflate block overruns stream");
        raw.insert(raw.end(), z + off, z + off + block);
        off += block;
        if (header & 1) break;
    }
    return raw;
}

} // namespace

void write_png(const std::string& path, const PngImage& img) {
    if (img.width <= 0 || img.height <= 0 || (img.channels != 1 && img.channels != 3))
        throw IoError("write_png: bad image dimensions");
    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    if (img.pixels.size() != stride * img.height)
        throw IoError("write_png: pixel buffer size mismatch");

    std::vector<std::uint8_t> raw;
    raw.reserve((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0); // filter: none
        raw.insert(raw.end(), img.pixels.begin() + y * stride,
                   img.pixels.begin() + (y + 1) * stride);
    }

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<std::uint8_t> ihdr;
    put_u32be(ihdr, static_cast<std::uint32_t>(img.width));
    put_u32be(ihdr, static_cast<std::uint32_t>(img.height));
    ihdr.push_back(8);                               // bit depth
    ihdr.push_back(img.channels == 1 ? 0 : 2);       // color type
    ihdr.push_back(0);                               // compression
    ihdr.push_back(0);                               // filter
    ihdr.push_back(0);                               // interlace
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", zlib_store(raw));
    append_chunk(out, "IEND", {});

    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("write_png: cannot open " + path);
    const std::size_t written = std::fwrite(out.data(), 1, out.size(), f);
    std::fclose(f);
    if (written != out.size()) throw IoError("write_png: short write to " + path);
}

PngImage read_png(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("read_png: cannot open " + path);
    std::vector<std::uint8_t> buf;
    std::uint8_t tmp[65536];
    std::size_t got;
    while ((got = std::fread(tmp, 1, sizeof(tmp), f)) > 0) buf.insert(buf.end(), tmp, tmp + got);
    std::fclose(f);

    static const std::uint8_t magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (buf.size() < 8 || std::memcmp(buf.data(), magic, 8) != 0)
        throw IoError("read_png: not a PNG file: " + path);

    PngImage img;
    std::vector<std::uint8_t> idat;
    std::size_t off = 8;
    while (off + 8 <= buf.size()) {
        const std::uint32_t len = get_u32be(buf.data() + off);
        if (off + 12 + len > buf.size()) throw IoError("read_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(buf.data() + off + 4);
        const std::uint8_t* payload = buf.data() + off + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("read_png: bad IHDR");
            img.width = static_cast<int>(get_u32be(payload));
            img.height = static_cast<int>(get_u32be(payload + 4));
            const int depth = payload[8], color = payload[9], interlace = payload[12];
            if (depth != 8 || (color != 0 && color != 2) || interlace != 0)
                throw IoError("read_png: unsupported PNG variant");
            img.channels = color == 0 ? 1 : 3;
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        off += 12 + len;
    }
    if (img.width <= 0 || img.height <= 0) throw IoError("read_png: missing IHDR");

    const std::vector<std::uint8_t> raw = zlib_unstore(idat.data(), idat.size());
    const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
    if (raw.size() != (stride + 1) * img.height)
        throw IoError("read_png: decompressed size mismatch");
    img.pixels.resize(stride * img.height);
    for (int y = 0; y < img.height; ++y) {
        if (raw[y * (stride + 1)] != 0)
            throw IoError("read_png: only filter type 0 is supported");
        std::memcpy(img.pixels.data() + y * stride, raw.data() + y * (stride + 1) + 1, stride);
    }
    return img;
}

} // namespace dope::io

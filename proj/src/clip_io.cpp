#include "stdiff/clip_io.hpp"

#include <cstring>
#include <fstream>

namespace stdiff {

namespace {

void put_u32le(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_stdf(const std::filesystem::path& path, const ClipData& clip) {
    const std::size_t n = static_cast<std::size_t>(clip.T) * clip.C * clip.H * clip.W;
    if (clip.values.size() != n)
        throw std::invalid_argument("write_stdf: value count " + std::to_string(clip.values.size()) +
                                    " does not match header dims for " + path.string());
    std::string buf;
    buf.reserve(24 + 4 * n);
    buf.append("STDF", 4);
    put_u32le(buf, kStdfVersion);
    put_u32le(buf, clip.T);
    put_u32le(buf, clip.C);
    put_u32le(buf, clip.H);
    put_u32le(buf, clip.W);
    for (float v : clip.values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32le(buf, bits);
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_stdf: cannot open " + path.string());
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw std::runtime_error("write_stdf: write failed for " + path.string());
}

ClipData read_stdf(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_stdf: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 24 || buf.compare(0, 4, "STDF") != 0)
        throw std::runtime_error("read_stdf: not an STDF file: " + path.string());
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    const std::uint32_t version = get_u32le(p + 4);
    if (version != kStdfVersion)
        throw std::runtime_error("read_stdf: unsupported version " + std::to_string(version) +
                                 " in " + path.string());
    ClipData c;
    c.T = get_u32le(p + 8);
    c.C = get_u32le(p + 12);
    c.H = get_u32le(p + 16);
    c.W = get_u32le(p + 20);
    const std::size_t n = static_cast<std::size_t>(c.T) * c.C * c.H * c.W;
    if (c.T == 0 || c.C == 0 || c.H == 0 || c.W == 0 || buf.size() != 24 + 4 * n)
        throw std::runtime_error("read_stdf: corrupt header or truncated payload in " +
                                 path.string());
    c.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t bits = get_u32le(p + 24 + 4 * i);
        float v;
        std::memcpy(&v, &bits, 4);
        if (!(v >= 0.0f && v <= 1.0f))
            throw std::runtime_error("read_stdf: value outside [0,1] at index " + std::to_string(i) +
                                     " in " + path.string());
        c.values[i] = v;
    }
    return c;
}

namespace {

std::uint32_t crc32(const unsigned char* data, std::size_t len, std::uint32_t crc = 0) {
    static std::uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    crc ^= 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

std::uint32_t adler32(const unsigned char* data, std::size_t len) {
    std::uint32_t a = 1, b = 0;
    for (std::size_t i = 0; i < len; ++i) {
        a = (a + data[i]) % 65521;
        b = (b + a) % 65521;
    }
    return (b << 16) | a;
}

void put_u32be(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>(v & 0xff));
}

void put_chunk(std::string& out, const char type[4], const std::string& payload) {
    put_u32be(out, static_cast<std::uint32_t>(payload.size()));
    std::string body(type, 4);
    body += payload;
    out += body;
    put_u32be(out, crc32(reinterpret_cast<const unsigned char*>(body.data()), body.size()));
}

}  // namespace

void write_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels,
               std::uint32_t width, std::uint32_t height, int channels) {
    if (channels != 1 && channels != 3)
        throw std::invalid_argument("write_png: channels must be 1 or 3");
    if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
        throw std::invalid_argument("write_png: pixel buffer size mismatch");

    // raw scanlines, filter byte 0 per row
    std::string raw;
    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    raw.reserve(height * (stride + 1));
    for (std::uint32_t y = 0; y < height; ++y) {
        raw.push_back('\0');
        raw.append(reinterpret_cast<const char*>(pixels.data() + y * stride), stride);
    }

    // zlib stream with stored deflate blocks
    std::string z;
    z.push_back('\x78');
    z.push_back('\x01');
    std::size_t pos = 0;
    while (pos < raw.size()) {
        const std::size_t blk = std::min<std::size_t>(65535, raw.size() - pos);
        const bool last = pos + blk == raw.size();
        z.push_back(last ? '\x01' : '\x00');
        z.push_back(static_cast<char>(blk & 0xff));
        z.push_back(static_cast<char>((blk >> 8) & 0xff));
        z.push_back(static_cast<char>(~blk & 0xff));
        z.push_back(static_cast<char>((~blk >> 8) & 0xff));
        z.append(raw, pos, blk);
        pos += blk;
    }
    put_u32be(z, adler32(reinterpret_cast<const unsigned char*>(raw.data()), raw.size()));

    std::string ihdr;
    put_u32be(ihdr, width);
    put_u32be(ihdr, height);
    ihdr.push_back('\x08');                        // bit depth
    ihdr.push_back(channels == 1 ? '\x00' : '\x02');  // color type
    ihdr.push_back('\x00');
    ihdr.push_back('\x00');
    ihdr.push_back('\x00');

    std::string out("\x89PNG\r\n\x1a\n", 8);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", "");

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("write_png: cannot open " + path.string());
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw std::runtime_error("write_png: write failed for " + path.string());
}

void write_png_frame_grid(const std::filesystem::path& path, const std::vector<ClipData>& rows) {
    if (rows.empty()) throw std::invalid_argument("write_png_frame_grid: no clips");
    const std::uint32_t C = rows[0].C, H = rows[0].H, W = rows[0].W;
    std::uint32_t max_t = 0;
    for (const auto& r : rows) {
        if (r.C != C || r.H != H || r.W != W)
            throw std::invalid_argument("write_png_frame_grid: clip shape mismatch");
        max_t = std::max(max_t, r.T);
    }
    const std::uint32_t pad = 2;
    const std::uint32_t gw = max_t * W + (max_t + 1) * pad;
    const std::uint32_t gh = static_cast<std::uint32_t>(rows.size()) * H +
                             (static_cast<std::uint32_t>(rows.size()) + 1) * pad;
    std::vector<std::uint8_t> img(static_cast<std::size_t>(gw) * gh * C, 32);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::uint32_t y0 = pad + static_cast<std::uint32_t>(r) * (H + pad);
        for (std::uint32_t t = 0; t < rows[r].T; ++t) {
            const std::uint32_t x0 = pad + t * (W + pad);
            const float* frame = rows[r].values.data() + static_cast<std::size_t>(t) * C * H * W;
            for (std::uint32_t y = 0; y < H; ++y)
                for (std::uint32_t x = 0; x < W; ++x)
                    for (std::uint32_t c = 0; c < C; ++c) {
                        float v = frame[(c * H + y) * W + x];
                        v = std::min(1.0f, std::max(0.0f, v));
                        img[((static_cast<std::size_t>(y0 + y) * gw) + (x0 + x)) * C + c] =
                            static_cast<std::uint8_t>(v * 255.0f + 0.5f);
                    }
        }
    }
    write_png(path, img, gw, gh, static_cast<int>(C));
}

}  // namespace stdiff

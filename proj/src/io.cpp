#include "lvd/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lvd {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
void put_u16(std::ostream& os, uint16_t v) {
    os.write(reinterpret_cast<const char*>(&v), 2);
}

uint32_t get_u32(const uint8_t* p) {
    uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}
uint16_t get_u16(const uint8_t* p) {
    uint16_t v;
    std::memcpy(&v, p, 2);
    return v;
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    uint32_t n = static_cast<uint32_t>(w.samples.size());
    uint32_t data_size = n * 2;
    os.write("RIFF", 4);
    put_u32(os, 36 + data_size);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    put_u32(os, 16);
    put_u16(os, 1);  // PCM
    put_u16(os, 1);  // mono
    put_u32(os, static_cast<uint32_t>(w.sample_rate));
    put_u32(os, static_cast<uint32_t>(w.sample_rate * 2));
    put_u16(os, 2);
    put_u16(os, 16);
    os.write("data", 4);
    put_u32(os, data_size);
    for (float s : w.samples) {
        float c = std::clamp(s, -1.0f, 1.0f);
        int16_t v = static_cast<int16_t>(std::lrintf(c * 32767.0f));
        os.write(reinterpret_cast<const char*>(&v), 2);
    }
    if (!os) throw DataError("short write: " + path);
}

Waveform read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
    if (buf.size() < 44 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
        std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
        throw DataError("not a RIFF/WAVE file: " + path);
    size_t pos = 12;
    int fmt = 0, channels = 0, rate = 0, bits = 0;
    const uint8_t* data = nullptr;
    size_t data_len = 0;
    while (pos + 8 <= buf.size()) {
        uint32_t chunk_len = get_u32(buf.data() + pos + 4);
        if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0 && chunk_len >= 16) {
            fmt = get_u16(buf.data() + pos + 8);
            channels = get_u16(buf.data() + pos + 10);
            rate = static_cast<int>(get_u32(buf.data() + pos + 12));
            bits = get_u16(buf.data() + pos + 22);
        } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
            data = buf.data() + pos + 8;
            data_len = std::min<size_t>(chunk_len, buf.size() - pos - 8);
        }
        pos += 8 + chunk_len + (chunk_len & 1);
    }
    if (!data || channels == 0) throw DataError("malformed WAV: " + path);
    if (channels != 1) throw DataError("expected mono WAV, got multi-channel: " + path);
    Waveform w;
    w.sample_rate = rate;
    if (fmt == 1 && bits == 16) {
        size_t n = data_len / 2;
        w.samples.resize(n);
        for (size_t i = 0; i < n; i++) {
            int16_t v;
            std::memcpy(&v, data + 2 * i, 2);
            w.samples[i] = static_cast<float>(v) / 32767.0f;
        }
    } else if (fmt == 3 && bits == 32) {
        size_t n = data_len / 4;
        w.samples.resize(n);
        std::memcpy(w.samples.data(), data, n * 4);
    } else {
        throw DataError("unsupported WAV encoding (want PCM16 or float32): " + path);
    }
    return w;
}

void write_pgm(const std::string& path, const std::vector<float>& gray,
               int64_t h, int64_t w) {
    if (static_cast<int64_t>(gray.size()) != h * w)
        throw DataError("write_pgm: size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    for (float v : gray) {
        int q = static_cast<int>(std::lrintf(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        os.put(static_cast<char>(q));
    }
    if (!os) throw DataError("short write: " + path);
}

void write_ppm(const std::string& path, const std::vector<float>& rgb_chw,
               int64_t h, int64_t w) {
    if (static_cast<int64_t>(rgb_chw.size()) != 3 * h * w)
        throw DataError("write_ppm: size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    for (int64_t i = 0; i < h * w; i++)
        for (int c = 0; c < 3; c++) {
            float v = rgb_chw[static_cast<size_t>(c * h * w + i)];
            int q = static_cast<int>(std::lrintf(std::clamp(v, 0.0f, 1.0f) * 255.0f));
            os.put(static_cast<char>(q));
        }
    if (!os) throw DataError("short write: " + path);
}

std::vector<float> read_ppm(const std::string& path, int64_t& h, int64_t& w) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw DataError("not a binary PPM: " + path);
    int64_t maxval = 0;
    is >> w >> h >> maxval;
    if (w < 1 || h < 1 || maxval != 255) throw DataError("unsupported PPM header: " + path);
    is.get();  // single whitespace after the header
    std::vector<unsigned char> raw(static_cast<size_t>(3 * h * w));
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw DataError("truncated PPM: " + path);
    std::vector<float> out(static_cast<size_t>(3 * h * w));
    for (int64_t i = 0; i < h * w; i++)
        for (int64_t c = 0; c < 3; c++)
            out[static_cast<size_t>(c * h * w + i)] =
                static_cast<float>(raw[static_cast<size_t>(3 * i + c)]) / 255.0f;
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << content;
    if (!os) throw DataError("short write: " + path);
}

}  // namespace lvd

#include "dress/binio.h"

#include "dress/errors.h"

#include <openssl/evp.h>
#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

namespace dress {

uint32_t crc32_of(std::span<const uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths
    size_t off = 0;
    while (off < bytes.size()) {
        const size_t chunk = std::min<size_t>(bytes.size() - off, 1u << 30);
        crc = crc32(crc, bytes.data() + off, uInt(chunk));
        off += chunk;
    }
    return uint32_t(crc);
}

sha256_digest sha256_of(std::span<const uint8_t> bytes) {
    sha256_digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
        throw std::runtime_error("sha256 failed");
    }
    return out;
}

std::string to_hex(std::span<const uint8_t> bytes) {
    static const char * digits = "0123456789abcdef";
    std::string s;
    s.reserve(bytes.size() * 2);
    for (uint8_t b : bytes) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 15]);
    }
    return s;
}

std::string sha256_hex(std::span<const uint8_t> bytes) {
    const auto d = sha256_of(bytes);
    return to_hex(d);
}

std::string sha256_hex(std::string_view text) {
    return sha256_hex(std::span<const uint8_t>(reinterpret_cast<const uint8_t *>(text.data()), text.size()));
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw data_error("cannot open " + path.string());
    }
    return std::vector<uint8_t>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

std::string read_file_text(const std::filesystem::path & path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw data_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file_bytes(const std::filesystem::path & path, std::span<const uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw data_error("cannot write " + path.string());
    }
    f.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) {
        throw data_error("short write to " + path.string());
    }
}

void write_file_text(const std::filesystem::path & path, std::string_view text) {
    write_file_bytes(path, std::span<const uint8_t>(reinterpret_cast<const uint8_t *>(text.data()), text.size()));
}

std::string file_sha256_hex(const std::filesystem::path & path) {
    return sha256_hex(read_file_bytes(path));
}

void byte_writer::put_bytes(std::span<const uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

void byte_writer::put_magic(std::string_view magic) {
    put_bytes(std::span<const uint8_t>(reinterpret_cast<const uint8_t *>(magic.data()), magic.size()));
}

void byte_writer::put_u8(uint8_t v) { buf_.push_back(v); }

void byte_writer::put_u32(uint32_t v) {
    uint8_t b[4];
    std::memcpy(b, &v, 4);
    put_bytes(b);
}

void byte_writer::put_i32(int32_t v) { put_u32(uint32_t(v)); }

void byte_writer::put_u64(uint64_t v) {
    uint8_t b[8];
    std::memcpy(b, &v, 8);
    put_bytes(b);
}

void byte_writer::put_f32(float v) { put_u32(std::bit_cast<uint32_t>(v)); }

void byte_writer::put_f64(double v) { put_u64(std::bit_cast<uint64_t>(v)); }

void byte_writer::put_string(std::string_view s) {
    put_u32(uint32_t(s.size()));
    put_magic(s);
}

void byte_writer::finish_with_crc() {
    put_u32(crc32_of(buf_));
}

void byte_reader::finish_crc(std::string_view what) {
    const size_t payload = pos_;
    const uint32_t stored = get_u32();
    if (crc32_of(data_.first(payload)) != stored) {
        throw data_error(std::string(what) + ": CRC32 mismatch");
    }
    if (!at_end()) {
        throw data_error(std::string(what) + ": trailing bytes after CRC32");
    }
}

void byte_reader::expect_magic(std::string_view magic, std::string_view what) {
    const uint8_t * p = take(magic.size());
    if (std::memcmp(p, magic.data(), magic.size()) != 0) {
        throw data_error(std::string(what) + ": bad magic");
    }
}

const uint8_t * byte_reader::take(size_t n) {
    if (data_.size() - pos_ < n) {
        throw data_error("unexpected EOF");
    }
    const uint8_t * p = data_.data() + pos_;
    pos_ += n;
    return p;
}

uint8_t byte_reader::get_u8() { return *take(1); }

uint32_t byte_reader::get_u32() {
    uint32_t v;
    std::memcpy(&v, take(4), 4);
    return v;
}

int32_t byte_reader::get_i32() { return int32_t(get_u32()); }

uint64_t byte_reader::get_u64() {
    uint64_t v;
    std::memcpy(&v, take(8), 8);
    return v;
}

float byte_reader::get_f32() { return std::bit_cast<float>(get_u32()); }

double byte_reader::get_f64() { return std::bit_cast<double>(get_u64()); }

std::string byte_reader::get_string() {
    const uint32_t n = get_u32();
    const uint8_t * p = take(n);
    return std::string(reinterpret_cast<const char *>(p), n);
}

void byte_reader::get_bytes(std::span<uint8_t> out) {
    std::memcpy(out.data(), take(out.size()), out.size());
}

}  // namespace dress

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dress {

using sha256_digest = std::array<uint8_t, 32>;

uint32_t crc32_of(std::span<const uint8_t> bytes);
sha256_digest sha256_of(std::span<const uint8_t> bytes);
std::string to_hex(std::span<const uint8_t> bytes);
std::string sha256_hex(std::span<const uint8_t> bytes);
std::string sha256_hex(std::string_view text);

std::vector<uint8_t> read_file_bytes(const std::filesystem::path & path);
std::string read_file_text(const std::filesystem::path & path);
void write_file_bytes(const std::filesystem::path & path, std::span<const uint8_t> bytes);
void write_file_text(const std::filesystem::path & path, std::string_view text);
std::string file_sha256_hex(const std::filesystem::path & path);

// Little-endian serializer for the DRSW / DRSA / DRSS containers.
class byte_writer {
public:
    void put_bytes(std::span<const uint8_t> bytes);
    void put_magic(std::string_view magic);
    void put_u8(uint8_t v);
    void put_u32(uint32_t v);
    void put_i32(int32_t v);
    void put_u64(uint64_t v);
    void put_f32(float v);
    void put_f64(double v);
    void put_string(std::string_view s);

    // appends CRC32 of everything written so far
    void finish_with_crc();

    const std::vector<uint8_t> & bytes() const { return buf_; }
    std::vector<uint8_t> take() { return std::move(buf_); }

private:
    std::vector<uint8_t> buf_;
};

// Bounds-checked reader; every short read throws data_error("unexpected EOF").
class byte_reader {
public:
    explicit byte_reader(std::span<const uint8_t> bytes) : data_(bytes) {}

    // reads the CRC32 that must follow the payload parsed so far and checks it
    void finish_crc(std::string_view what);
    void expect_magic(std::string_view magic, std::string_view what);

    uint8_t get_u8();
    uint32_t get_u32();
    int32_t get_i32();
    uint64_t get_u64();
    float get_f32();
    double get_f64();
    std::string get_string();
    void get_bytes(std::span<uint8_t> out);

    size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    const uint8_t * take(size_t n);

    std::span<const uint8_t> data_;
    size_t pos_ = 0;
};

}  // namespace dress

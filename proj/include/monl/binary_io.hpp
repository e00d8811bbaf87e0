#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace monl {

/// Raised for malformed, truncated, mismatched or corrupted files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Container shared by all binary artifacts:
///   8-byte magic | u32 version | u64 header length | JSON header | payload
/// Integers are little-endian.
struct BlobFile {
    nlohmann::json header;
    std::vector<unsigned char> payload;
};

void write_blob(const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
                const BlobFile& blob);
BlobFile read_blob(const std::filesystem::path& path, std::string_view magic, std::uint32_t version);

std::uint32_t crc32_of(std::span<const unsigned char> bytes);

void append_f32(std::vector<unsigned char>& out, double value);
void append_f64(std::vector<unsigned char>& out, double value);
double read_f32(const unsigned char* p);
double read_f64(const unsigned char* p);

} // namespace monl

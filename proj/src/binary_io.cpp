#include "monl/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace monl {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

template <typename T>
void put(std::ostream& out, T value)
{
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path)
{
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
        throw FormatError(path.string() + ": truncated header");
    }
    return value;
}

} // namespace

void write_blob(const std::filesystem::path& path, std::string_view magic, std::uint32_t version,
                const BlobFile& blob)
{
    if (magic.size() != 8) {
        throw std::invalid_argument("blob magic must be 8 bytes");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    const std::string header = blob.header.dump();
    out.write(magic.data(), 8);
    put<std::uint32_t>(out, version);
    put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(blob.payload.data()), static_cast<std::streamsize>(blob.payload.size()));
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

BlobFile read_blob(const std::filesystem::path& path, std::string_view magic, std::uint32_t version)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    char tag[8];
    if (!in.read(tag, 8) || std::string_view(tag, 8) != magic) {
        throw FormatError(path.string() + ": bad magic (expected " + std::string(magic) + ")");
    }
    const auto file_version = get<std::uint32_t>(in, path);
    if (file_version != version) {
        throw FormatError(path.string() + ": version " + std::to_string(file_version) + ", expected " +
                          std::to_string(version));
    }
    const auto header_len = get<std::uint64_t>(in, path);
    std::string header(header_len, '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
        throw FormatError(path.string() + ": truncated header");
    }
    BlobFile blob;
    try {
        blob.header = nlohmann::json::parse(header);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": header is not valid JSON: " + e.what());
    }
    blob.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return blob;
}

std::uint32_t crc32_of(std::span<const unsigned char> bytes)
{
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
        crc = crc32(crc, bytes.data() + done, chunk);
        done += chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

void append_f32(std::vector<unsigned char>& out, double value)
{
    const auto f = static_cast<float>(value);
    unsigned char buf[4];
    std::memcpy(buf, &f, 4);
    out.insert(out.end(), buf, buf + 4);
}

void append_f64(std::vector<unsigned char>& out, double value)
{
    unsigned char buf[8];
    std::memcpy(buf, &value, 8);
    out.insert(out.end(), buf, buf + 8);
}

double read_f32(const unsigned char* p)
{
    float f;
    std::memcpy(&f, p, 4);
    return f;
}

double read_f64(const unsigned char* p)
{
    double v;
    std::memcpy(&v, p, 8);
    return v;
}

} // namespace monl

#include "mbsync/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace mbsync {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ofstream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void write_container(const std::string& path, const char* magic, const Container& c) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os.write(magic, 8);
    put<std::uint32_t>(os, kContainerVersion);
    put<std::uint64_t>(os, c.header.size());
    os.write(c.header.data(), static_cast<std::streamsize>(c.header.size()));
    os.write(reinterpret_cast<const char*>(c.payload.data()),
             static_cast<std::streamsize>(c.payload.size() * sizeof(double)));
    if (!os) throw std::runtime_error("write failed: " + path);
}

Container read_container(const std::string& path, const char* magic) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    constexpr std::size_t fixed = 8 + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < fixed) throw FormatError("truncated container: " + path);
    if (std::memcmp(bytes.data(), magic, 8) != 0) {
        throw FormatError("version mismatch: unexpected magic in " + path);
    }
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    std::memcpy(&version, bytes.data() + 8, sizeof version);
    std::memcpy(&hlen, bytes.data() + 12, sizeof hlen);
    if (version != kContainerVersion) {
        throw FormatError("version mismatch: file has " + std::to_string(version) + ", expected " +
                          std::to_string(kContainerVersion));
    }
    if (hlen > bytes.size() - fixed) throw FormatError("truncated container header: " + path);
    const std::size_t rest = bytes.size() - fixed - hlen;
    if (rest % sizeof(double) != 0) throw FormatError("truncated container payload: " + path);
    Container c;
    c.header.assign(bytes.data() + fixed, hlen);
    c.payload.resize(rest / sizeof(double));
    std::memcpy(c.payload.data(), bytes.data() + fixed + hlen, rest);
    return c;
}

}  // namespace mbsync

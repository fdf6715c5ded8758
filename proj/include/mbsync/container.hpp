#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mbsync {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// On-disk layout:
///   8 bytes   magic (e.g. "MBSYNCDS")
///   u32 LE    format version
///   u64 LE    header length in bytes
///   header    UTF-8 JSON
///   payload   little-endian float64 values until end of file
inline constexpr std::uint32_t kContainerVersion = 1;

inline constexpr char kMagicDataset[9] = "MBSYNCDS";
inline constexpr char kMagicCheckpoint[9] = "MBSYNCCK";
inline constexpr char kMagicTrajectories[9] = "MBSYNCTR";
inline constexpr char kMagicFit[9] = "MBSYNCFT";

struct Container {
    std::string header;
    std::vector<double> payload;
};

/// Throws std::runtime_error when the file cannot be written.
void write_container(const std::string& path, const char* magic, const Container& c);
/// Throws FormatError on a magic or version mismatch, or a truncated file.
Container read_container(const std::string& path, const char* magic);

}  // namespace mbsync

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "damgt/error.hpp"

namespace damgt {

// Little-endian binary primitives shared by the cache/checkpoint formats.

inline void write_u64le(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw CorruptCacheError("unexpected end of file while reading u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64le(std::ostream& os, double d) {
    write_u64le(os, std::bit_cast<std::uint64_t>(d));
}

inline double read_f64le(std::istream& is) {
    return std::bit_cast<double>(read_u64le(is));
}

inline void write_f64_block(std::ostream& os, std::span<const double> vals) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(vals.data()),
                 static_cast<std::streamsize>(vals.size() * sizeof(double)));
    } else {
        for (double d : vals) write_f64le(os, d);
    }
}

inline void read_f64_block(std::istream& is, std::span<double> vals) {
    if constexpr (std::endian::native == std::endian::little) {
        is.read(reinterpret_cast<char*>(vals.data()),
                static_cast<std::streamsize>(vals.size() * sizeof(double)));
        if (!is) throw CorruptCacheError("unexpected end of file while reading f64 block");
    } else {
        for (double& d : vals) d = read_f64le(is);
    }
}

inline void expect_magic(std::istream& is, const char magic[4], const std::string& what) {
    char buf[4];
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0) {
        throw CorruptCacheError(what + ": bad or missing magic bytes");
    }
}

// Write-to-temp-then-rename so concurrent readers never see a partial file.
class AtomicFileWriter {
  public:
    explicit AtomicFileWriter(const std::filesystem::path& target)
        : target_(target), tmp_(target.string() + ".tmp") {
        os_.open(tmp_, std::ios::binary | std::ios::trunc);
        if (!os_) throw DataError("cannot open for writing: " + tmp_.string());
    }

    std::ofstream& stream() { return os_; }

    void commit() {
        os_.flush();
        if (!os_) throw DataError("write failed: " + tmp_.string());
        os_.close();
        std::filesystem::rename(tmp_, target_);
        committed_ = true;
    }

    ~AtomicFileWriter() {
        if (!committed_) {
            os_.close();
            std::error_code ec;
            std::filesystem::remove(tmp_, ec);
        }
    }

  private:
    std::filesystem::path target_;
    std::filesystem::path tmp_;
    std::ofstream os_;
    bool committed_ = false;
};

}  // namespace damgt

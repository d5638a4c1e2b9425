#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace eegattn::binio {

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

static_assert(std::endian::native == std::endian::little,
              "little-endian host assumed for container I/O");

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError(std::string("truncated file while reading ") + what);
    return v;
}

inline void write_magic(std::ostream& os, const char magic[4]) {
    os.write(magic, 4);
}

inline void expect_magic(std::istream& is, const char magic[4]) {
    char buf[4] = {};
    is.read(buf, 4);
    if (!is) throw FormatError("truncated file: missing magic");
    if (std::memcmp(buf, magic, 4) != 0)
        throw FormatError("bad magic \"" + std::string(buf, 4) + "\", expected \"" +
                          std::string(magic, 4) + "\"");
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_le<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    const auto n = read_le<std::uint16_t>(is, "string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw FormatError("truncated file while reading string");
    return s;
}

}  // namespace eegattn::binio

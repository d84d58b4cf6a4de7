#include "geostyle/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "geostyle/errors.hpp"

namespace geostyle {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");
static_assert(sizeof(float) == 4, "serialization assumes 32-bit IEEE-754 floats");

void write_u8(std::ostream& os, std::uint8_t v) {
    os.put(static_cast<char>(v));
}

void write_u32(std::ostream& os, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    os.write(buf, 4);
}

void write_f32(std::ostream& os, float v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    os.write(buf, 4);
}

void write_f64(std::ostream& os, double v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    os.write(buf, 8);
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

static void read_exact(std::istream& is, char* buf, std::size_t n, const std::string& what) {
    is.read(buf, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw FormatError("truncated file while reading " + what);
    }
}

std::uint8_t read_u8(std::istream& is, const std::string& what) {
    char c;
    read_exact(is, &c, 1, what);
    return static_cast<std::uint8_t>(c);
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
    char buf[4];
    read_exact(is, buf, 4, what);
    std::uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
}

float read_f32(std::istream& is, const std::string& what) {
    char buf[4];
    read_exact(is, buf, 4, what);
    float v;
    std::memcpy(&v, buf, 4);
    return v;
}

double read_f64(std::istream& is, const std::string& what) {
    char buf[8];
    read_exact(is, buf, 8, what);
    double v;
    std::memcpy(&v, buf, 8);
    return v;
}

std::string read_string(std::istream& is, const std::string& what) {
    std::uint32_t n = read_u32(is, what + " length");
    std::string s(n, '\0');
    if (n > 0) read_exact(is, s.data(), n, what);
    return s;
}

void write_magic(std::ostream& os, const char (&magic)[4]) {
    os.write(magic, 4);
}

void expect_magic(std::istream& is, const char (&magic)[4], const std::string& what) {
    char buf[4];
    read_exact(is, buf, 4, what + " magic");
    if (std::memcmp(buf, magic, 4) != 0) {
        throw FormatError("bad magic for " + what + ", expected \"" +
                          std::string(magic, 4) + "\"");
    }
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_magic(os, kTensorMagic);
    write_u8(os, kTensorVersion);
    write_u8(os, static_cast<std::uint8_t>(t.rank()));
    for (int d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * 4));
}

Tensor read_tensor(std::istream& is, const std::string& context) {
    const std::string what = context.empty() ? "tensor" : context;
    expect_magic(is, kTensorMagic, what);
    const std::uint8_t version = read_u8(is, what + " version");
    if (version != kTensorVersion) {
        throw FormatError("unsupported tensor version " + std::to_string(version) +
                          " in " + what);
    }
    const std::uint8_t rank = read_u8(is, what + " rank");
    if (rank == 0) throw FormatError("zero-rank tensor in " + what);
    std::vector<int> shape(rank);
    std::int64_t n = 1;
    for (int i = 0; i < rank; ++i) {
        std::uint32_t d = read_u32(is, what + " dims");
        if (d == 0 || d > 0x7fffffffu) {
            throw FormatError("invalid dimension " + std::to_string(d) + " in " + what);
        }
        shape[i] = static_cast<int>(d);
        n *= shape[i];
    }
    std::vector<float> data(static_cast<std::size_t>(n));
    read_exact(is, reinterpret_cast<char*>(data.data()),
               static_cast<std::size_t>(n) * 4, what + " payload");
    return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path + " for writing");
    write_tensor(os, t);
    if (!os) throw FormatError("write failed for " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open tensor file " + path);
    return read_tensor(is, path);
}

}  // namespace geostyle

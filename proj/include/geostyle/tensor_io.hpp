#pragma once

#include <iosfwd>
#include <string>

#include "geostyle/tensor.hpp"

namespace geostyle {

// GSTN tensor file: magic "GSTN", u8 version, u8 rank, little-endian u32
// dims, then the row-major payload as little-endian 32-bit floats.
inline constexpr char kTensorMagic[4] = {'G', 'S', 'T', 'N'};
inline constexpr std::uint8_t kTensorVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is, const std::string& context = "");

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Little-endian scalar helpers shared by every GS* container format.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);  // u32 length + bytes

std::uint8_t read_u8(std::istream& is, const std::string& what);
std::uint32_t read_u32(std::istream& is, const std::string& what);
float read_f32(std::istream& is, const std::string& what);
double read_f64(std::istream& is, const std::string& what);
std::string read_string(std::istream& is, const std::string& what);

void expect_magic(std::istream& is, const char (&magic)[4], const std::string& what);
void write_magic(std::ostream& os, const char (&magic)[4]);

}  // namespace geostyle

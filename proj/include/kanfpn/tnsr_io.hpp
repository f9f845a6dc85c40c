#pragma once

#include <filesystem>
#include <iosfwd>

#include "kanfpn/tensor.hpp"

namespace kanfpn {

// Binary tensor blob: "TNSR", u16 version (1), u8 dtype (0=f32, 1=f64),
// u8 ndim, ndim x u64 extents, raw data. All integers and values little-endian.

void write_tnsr(std::ostream& os, const Tensor& t);
Tensor read_tnsr(std::istream& is);

void save_tnsr(const std::filesystem::path& path, const Tensor& t);
Tensor load_tnsr(const std::filesystem::path& path);

} // namespace kanfpn

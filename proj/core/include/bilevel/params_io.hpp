#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "bilevel/param_vector.hpp"

namespace bilevel {

// Binary parameter file, all integers little-endian:
//   "BLVL" | u16 version | u32 segment count |
//   per segment: u16 name length, name bytes, u64 offset, u64 length |
//   IEEE-754 binary64 values, little-endian.
inline constexpr std::uint16_t kParamsFormatVersion = 1;

std::string encode_params(const ParamVector& params);
ParamVector decode_params(const std::string& bytes);

void write_params(const std::filesystem::path& path, const ParamVector& params);
ParamVector read_params(const std::filesystem::path& path);

}  // namespace bilevel

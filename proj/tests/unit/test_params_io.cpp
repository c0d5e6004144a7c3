#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "bilevel/error.hpp"
#include "bilevel/params_io.hpp"
#include "test_util.hpp"

namespace bilevel {
namespace {

using testing::TempDir;

ParamVector sample_params() {
  ParamVector p(Layout({{"init", 3}, {"rates", 2}, {"w", 0}}));
  p[0] = 1.5;
  p[1] = -0.0;
  p[2] = std::numeric_limits<double>::denorm_min();
  p[3] = 1e300;
  p[4] = -3.25;
  return p;
}

ErrorCode decode_error(const std::string& bytes) {
  try {
    decode_params(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "decode accepted malformed bytes";
  return ErrorCode::kInvalidArgument;
}

TEST(ParamsIo, RoundTripIsBitExact) {
  const ParamVector p = sample_params();
  const ParamVector back = decode_params(encode_params(p));
  EXPECT_EQ(back.layout(), p.layout());
  ASSERT_EQ(back.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i]), std::bit_cast<std::uint64_t>(p[i]));
  }
}

TEST(ParamsIo, HeaderLayout) {
  const std::string bytes = encode_params(ParamVector(Layout({{"ab", 1}}), 1.0));
  // magic, version, count, name length, name, offset, length, one double
  ASSERT_EQ(bytes.size(), 4u + 2 + 4 + 2 + 2 + 8 + 8 + 8);
  EXPECT_EQ(bytes.substr(0, 4), "BLVL");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), kParamsFormatVersion);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 1);
  // 1.0 = 0x3ff0000000000000 little-endian
  EXPECT_EQ(static_cast<unsigned char>(bytes.back()), 0x3f);
  EXPECT_EQ(static_cast<unsigned char>(bytes[bytes.size() - 2]), 0xf0);
}

TEST(ParamsIo, EmptyVector) {
  const ParamVector back = decode_params(encode_params(ParamVector(Layout{})));
  EXPECT_EQ(back.size(), 0u);
  EXPECT_TRUE(back.layout().segments().empty());
}

TEST(ParamsIo, RejectsMalformedInput) {
  const std::string good = encode_params(sample_params());
  EXPECT_EQ(decode_error(""), ErrorCode::kParseError);
  EXPECT_EQ(decode_error("XLVL" + good.substr(4)), ErrorCode::kParseError);
  std::string bumped = good;
  bumped[4] = 2;
  EXPECT_EQ(decode_error(bumped), ErrorCode::kParseError);
  for (std::size_t cut : {5u, 12u, 20u}) EXPECT_EQ(decode_error(good.substr(0, cut)), ErrorCode::kParseError);
  EXPECT_EQ(decode_error(good.substr(0, good.size() - 1)), ErrorCode::kParseError);
  EXPECT_EQ(decode_error(good + "x"), ErrorCode::kParseError);
}

TEST(ParamsIo, RejectsCorruptSegmentTable) {
  std::string bytes = encode_params(ParamVector(Layout({{"a", 1}}), 2.0));
  // length field of the only segment: after magic, version, count, name length, name, offset
  const std::size_t length_at = 4 + 2 + 4 + 2 + 1 + 8;
  bytes[length_at + 7] = static_cast<char>(0x7f);
  EXPECT_EQ(decode_error(bytes), ErrorCode::kParseError);

  std::string gap = encode_params(ParamVector(Layout({{"a", 1}}), 2.0));
  gap[4 + 2 + 4 + 2 + 1] = 3;  // offset 3 leaves a hole
  EXPECT_EQ(decode_error(gap), ErrorCode::kParseError);
}

TEST(ParamsIo, FileRoundTripAndMissingFile) {
  TempDir dir;
  const auto path = dir.path() / "p.bin";
  write_params(path, sample_params());
  EXPECT_EQ(read_params(path).raw(), sample_params().raw());
  try {
    read_params(dir.path() / "absent.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoError);
  }
}

}  // namespace
}  // namespace bilevel

#include "bilevel/params_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "bilevel/error.hpp"

namespace bilevel {

namespace {

constexpr char kMagic[4] = {'B', 'L', 'V', 'L'};

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(static_cast<std::uint64_t>(value) >> (8 * i) & 0xff));
  }
}

class Cursor {
 public:
  explicit Cursor(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::kParseError, "parameter file is truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_params(const ParamVector& params) {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint16_t>(out, kParamsFormatVersion);
  const auto& segments = params.layout().segments();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(segments.size()));
  for (const Segment& s : segments) {
    if (s.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw Error(ErrorCode::kInvalidArgument, "segment name too long to serialize");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.name.size()));
    out += s.name;
    put_le<std::uint64_t>(out, s.offset);
    put_le<std::uint64_t>(out, s.length);
  }
  for (double v : params.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ParamVector decode_params(const std::string& bytes) {
  Cursor in(bytes);
  if (in.get_bytes(4) != std::string(kMagic, sizeof(kMagic))) {
    throw Error(ErrorCode::kParseError, "bad magic, not a parameter file");
  }
  const auto version = in.get_le<std::uint16_t>();
  if (version != kParamsFormatVersion) {
    throw Error(ErrorCode::kParseError, "unsupported parameter file version " + std::to_string(version));
  }
  const auto count = in.get_le<std::uint32_t>();
  std::vector<Segment> segments;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get_le<std::uint16_t>();
    Segment s;
    s.name = in.get_bytes(name_len);
    s.offset = in.get_le<std::uint64_t>();
    s.length = in.get_le<std::uint64_t>();
    segments.push_back(std::move(s));
  }
  std::shared_ptr<const Layout> layout;
  try {
    layout = std::make_shared<const Layout>(Layout::from_segments(std::move(segments)));
  } catch (const Error& e) {
    throw Error(ErrorCode::kParseError, std::string("bad segment table: ") + e.what());
  }
  if (in.remaining() / sizeof(double) < layout->size()) {
    throw Error(ErrorCode::kParseError, "parameter file is truncated");
  }
  std::vector<double> values(layout->size());
  for (double& v : values) v = std::bit_cast<double>(in.get_le<std::uint64_t>());
  if (!in.at_end()) throw Error(ErrorCode::kParseError, "trailing bytes after parameter values");
  return ParamVector(std::move(layout), std::move(values));
}

void write_params(const std::filesystem::path& path, const ParamVector& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path.string() + "'");
  const std::string bytes = encode_params(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "failed writing '" + path.string() + "'");
}

ParamVector read_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_params(bytes);
}

}  // namespace bilevel

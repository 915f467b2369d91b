#include "dmwa/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dmwa {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swapping");

namespace {

constexpr char kMagic[4] = {'D', 'M', 'W', 'A'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  void require(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(std::string("truncated tensor file while reading ") + what,
                        static_cast<long long>(pos_));
    }
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }
  const std::uint8_t* data() const { return bytes_.data() + pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t Tensor::element_count() const {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.element_count() != t.values.size()) {
    throw DimensionError("tensor has " + std::to_string(t.values.size()) +
                         " values but its shape holds " + std::to_string(t.element_count()));
  }
  std::vector<std::uint8_t> out;
  out.reserve(12 + 4 * t.shape.size() + 4 * t.values.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kTensorFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto e : t.shape) put_u32(out, e);
  for (float v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  in.require(4, "magic");
  if (std::memcmp(in.data(), kMagic, 4) != 0) throw FormatError("bad magic, expected \"DMWA\"", 0);
  in.advance(4);
  const std::size_t version_at = in.pos();
  const std::uint32_t version = in.u32("version");
  if (version != kTensorFormatVersion) {
    throw UnsupportedVersionError(version, static_cast<long long>(version_at));
  }
  const std::uint32_t rank = in.u32("rank");
  Tensor t;
  t.shape.reserve(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::size_t at = in.pos();
    const std::uint32_t extent = in.u32("extent");
    if (extent == 0) throw FormatError("zero extent", static_cast<long long>(at));
    t.shape.push_back(extent);
  }
  const std::size_t count = t.element_count();
  if (in.remaining() / 4 < count) {
    throw FormatError("truncated tensor data: need " + std::to_string(count) + " values",
                      static_cast<long long>(in.pos()));
  }
  t.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) t.values[i] = std::bit_cast<float>(in.u32("value"));
  if (in.remaining() != 0) {
    throw FormatError("trailing bytes after tensor data", static_cast<long long>(in.pos()));
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

}  // namespace dmwa

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "stencilseer/datagen.hpp"
#include "stencilseer/errors.hpp"

namespace stencilseer {
namespace {

constexpr char kMagic[4] = {'P', 'D', 'E', 'K'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 4 * 4;
constexpr std::size_t kMetaBytes = 3 * 8 + 8;

class ByteWriter {
 public:
  template <typename T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    const auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xFFu));
    }
  }
  void raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& buf, std::size_t end)
      : buf_(buf), end_(end) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<U>(buf_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw FormatError("dataset file is truncated");
  }
  std::size_t pos() const { return pos_; }
  const unsigned char* at() const { return buf_.data() + pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed large buffers in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::size_t dataset_file_size(std::size_t W, std::size_t H, std::size_t C,
                              std::size_t N) {
  const std::size_t record = W * H * C * 8 + 2 * H * C * 8 + kMetaBytes;
  return kHeaderBytes + N * record + 4;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const std::size_t W = ds.W(), H = ds.H(), C = ds.channels();
  ByteWriter w;
  w.raw(kMagic, 4);
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(ds.family));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(W));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(H));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(C));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.samples.size()));
  for (const auto& s : ds.samples) {
    if (s.image.rows() != W || s.image.cols() != H || s.image.channels() != C ||
        s.boundary.rows() != 2 || s.boundary.cols() != H ||
        s.boundary.channels() != C) {
      throw ShapeError("write_dataset: samples have inconsistent shapes");
    }
    for (double v : s.image.data()) w.put(v);
    for (double v : s.boundary.data()) w.put(v);
    w.put(s.meta.a);
    w.put(s.meta.b);
    w.put(s.meta.cfl);
    w.put(s.meta.seed);
  }
  auto& bytes = w.bytes();
  const std::uint32_t crc = crc_of(bytes.data(), bytes.size());
  w.put(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderBytes + 4) throw FormatError("dataset file is truncated");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    throw FormatError("bad dataset magic");
  }
  const std::size_t body = buf.size() - 4;
  ByteReader r(buf, buf.size());
  r.skip(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version));
  }
  const auto fam = r.get<std::uint8_t>();
  if (fam > 3) throw FormatError("bad family tag in dataset");
  const std::size_t W = r.get<std::uint32_t>();
  const std::size_t H = r.get<std::uint32_t>();
  const std::size_t C = r.get<std::uint32_t>();
  const std::size_t N = r.get<std::uint32_t>();
  if (buf.size() != dataset_file_size(W, H, C, N)) {
    throw FormatError("dataset size does not match its header");
  }
  ByteReader tail(buf, buf.size());
  tail.skip(body);
  if (tail.get<std::uint32_t>() != crc_of(buf.data(), body)) {
    throw FormatError("dataset checksum mismatch");
  }

  Dataset ds;
  ds.family = static_cast<Family>(fam);
  ds.samples.reserve(N);
  for (std::size_t k = 0; k < N; ++k) {
    Sample s;
    s.image = Tensor3(W, H, C);
    s.boundary = Tensor3(2, H, C);
    for (double& v : s.image.data()) v = r.get<double>();
    for (double& v : s.boundary.data()) v = r.get<double>();
    s.meta.family = ds.family;
    s.meta.a = r.get<double>();
    s.meta.b = r.get<double>();
    s.meta.cfl = r.get<double>();
    s.meta.seed = r.get<std::uint64_t>();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::vector<std::filesystem::path> export_csv(const Dataset& ds,
                                              const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> files;
  auto dump = [&](const Tensor3& t, std::size_t ch,
                  const std::filesystem::path& p) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot open " + p.string());
    out << std::setprecision(17);
    for (std::size_t r = 0; r < t.rows(); ++r) {
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (c) out << ',';
        out << t(r, c, ch);
      }
      out << '\n';
    }
    files.push_back(p);
  };
  for (std::size_t k = 0; k < ds.samples.size(); ++k) {
    const auto& s = ds.samples[k];
    for (std::size_t ch = 0; ch < s.image.channels(); ++ch) {
      std::ostringstream name;
      name << "sample_" << std::setw(4) << std::setfill('0') << k << "_ch" << ch;
      dump(s.image, ch, dir / (name.str() + ".csv"));
      dump(s.boundary, ch, dir / (name.str() + "_boundary.csv"));
    }
  }
  return files;
}

}  // namespace stencilseer

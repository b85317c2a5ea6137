#include "cardiac/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "cardiac/error.hpp"

namespace cardiac::nifti {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kDefaultVoxOffset = 352;
constexpr std::size_t kMaxVoxels = std::size_t{1} << 31;
constexpr std::size_t kMaxInflated = std::size_t{1} << 32;

// Field offsets inside the 348-byte header.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffMagic = 344;

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> b, bool swap) : bytes_(b), swap_(swap) {}

  template <typename T>
  T get(std::size_t off) const {
    T v;
    std::memcpy(&v, bytes_.data() + off, sizeof(T));
    if (swap_) v = byteswap(v);
    return v;
  }

 private:
  template <typename T>
  static T byteswap(T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    std::reverse(raw, raw + sizeof(T));
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

template <typename T>
void put(Bytes& out, std::size_t off, T v) {
  static_assert(std::endian::native == std::endian::little);
  std::memcpy(out.data() + off, &v, sizeof(T));
}

std::size_t bytes_per_voxel(DataType t) {
  switch (t) {
    case DataType::UInt8: return 1;
    case DataType::Int16: return 2;
    case DataType::Float32: return 4;
  }
  return 0;
}

struct Parsed {
  Dims4 dims{};
  VoxelSpacing spacing;
  DataType dtype{};
  double slope = 0.0;
  double inter = 0.0;
  std::size_t data_offset = 0;
  bool swap = false;
};

Parsed parse_header(std::span<const std::uint8_t> b) {
  if (b.size() < kHeaderSize) throw Error(ErrorCode::TruncatedData, "shorter than the 348-byte header");

  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, b.data() + kOffSizeofHdr, 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (__builtin_bswap32(static_cast<std::uint32_t>(sizeof_hdr)) != 348u)
      throw Error(ErrorCode::BadMagic, "sizeof_hdr is not 348");
    swap = true;
  }
  const bool single_file = std::memcmp(b.data() + kOffMagic, "n+1\0", 4) == 0;
  const bool pair_file = std::memcmp(b.data() + kOffMagic, "ni1\0", 4) == 0;
  if (!single_file && !pair_file) throw Error(ErrorCode::BadMagic, "magic is neither n+1 nor ni1");

  HeaderReader h(b, swap);
  Parsed p;
  p.swap = swap;

  const auto ndim = h.get<std::int16_t>(kOffDim);
  if (ndim < 3 || ndim > 4) throw Error(ErrorCode::BadDimensions, "dim[0] must be 3 or 4");
  for (int i = 0; i < 4; ++i) {
    const int d = i < ndim ? h.get<std::int16_t>(kOffDim + 2 * (i + 1)) : 1;
    if (d <= 0) throw Error(ErrorCode::BadDimensions, "non-positive dimension");
    p.dims[i] = d;
  }
  if (voxel_count(p.dims) > kMaxVoxels) throw Error(ErrorCode::BadDimensions, "volume too large");

  const auto dt = h.get<std::int16_t>(kOffDatatype);
  const auto bitpix = h.get<std::int16_t>(kOffBitpix);
  switch (dt) {
    case 2: p.dtype = DataType::UInt8; break;
    case 4: p.dtype = DataType::Int16; break;
    case 16: p.dtype = DataType::Float32; break;
    default: throw Error(ErrorCode::UnsupportedDatatype, "datatype code " + std::to_string(dt));
  }
  if (static_cast<std::size_t>(bitpix) != 8 * bytes_per_voxel(p.dtype))
    throw Error(ErrorCode::UnsupportedDatatype, "bitpix does not match datatype");

  const double px = h.get<float>(kOffPixdim + 4);
  const double py = h.get<float>(kOffPixdim + 8);
  const double pz = h.get<float>(kOffPixdim + 12);
  const double pt = ndim == 4 ? h.get<float>(kOffPixdim + 16) : 0.0;
  p.spacing = {px, py, pz, pt};
  if (!p.spacing.valid()) throw Error(ErrorCode::NonPositiveSpacing, "pixdim[1..3] must be positive");

  const double vox_offset = h.get<float>(kOffVoxOffset);
  if (!std::isfinite(vox_offset) || vox_offset < 0.0 || vox_offset > 1e9 || vox_offset != std::floor(vox_offset))
    throw Error(ErrorCode::BadMagic, "invalid vox_offset");
  // ni1 headers carry no data; the image block is expected to follow the header directly.
  p.data_offset = static_cast<std::size_t>(vox_offset);
  if (p.data_offset < kHeaderSize) {
    if (single_file && p.data_offset != 0) throw Error(ErrorCode::BadMagic, "vox_offset inside header");
    p.data_offset = single_file ? kDefaultVoxOffset : kHeaderSize;
  }

  const double slope = h.get<float>(kOffSclSlope);
  const double inter = h.get<float>(kOffSclInter);
  if (std::isfinite(slope) && slope != 0.0) {
    p.slope = slope;
    p.inter = std::isfinite(inter) ? inter : 0.0;
  }

  // qform/sform are validated only.
  const auto qcode = h.get<std::int16_t>(kOffQformCode);
  const auto scode = h.get<std::int16_t>(kOffSformCode);
  if (qcode < 0 || qcode > 4 || scode < 0 || scode > 4)
    throw Error(ErrorCode::BadMagic, "qform_code/sform_code out of range");
  return p;
}

template <typename Sink>
void decode(std::span<const std::uint8_t> b, const Parsed& p, Sink&& sink) {
  const std::size_t n = voxel_count(p.dims);
  const std::size_t bpv = bytes_per_voxel(p.dtype);
  if (b.size() < p.data_offset || (b.size() - p.data_offset) / bpv < n)
    throw Error(ErrorCode::TruncatedData, "data block shorter than dims imply");
  HeaderReader r(b.subspan(p.data_offset), p.swap);
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    switch (p.dtype) {
      case DataType::UInt8: v = r.get<std::uint8_t>(i); break;
      case DataType::Int16: v = r.get<std::int16_t>(i * 2); break;
      case DataType::Float32: v = r.get<float>(i * 4); break;
    }
    if (p.slope != 0.0) v = v * p.slope + p.inter;
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteData, "non-finite voxel value");
    sink(i, v);
  }
}

Bytes make_header(const Dims4& dims, const VoxelSpacing& s, DataType dtype) {
  Bytes out(kDefaultVoxOffset, 0);
  put<std::int32_t>(out, kOffSizeofHdr, 348);
  const bool is4d = dims[3] > 1 || s.dt != 0.0;
  put<std::int16_t>(out, kOffDim, is4d ? 4 : 3);
  for (int i = 0; i < 7; ++i) {
    const int d = i < 4 ? dims[i] : 1;
    if (d > std::numeric_limits<std::int16_t>::max()) throw Error(ErrorCode::ValueOutOfRange, "dimension exceeds int16");
    put<std::int16_t>(out, kOffDim + 2 * (i + 1), static_cast<std::int16_t>(d));
  }
  put<std::int16_t>(out, kOffDatatype, static_cast<std::int16_t>(dtype));
  put<std::int16_t>(out, kOffBitpix, static_cast<std::int16_t>(8 * bytes_per_voxel(dtype)));
  put<float>(out, kOffPixdim, 1.0f);
  put<float>(out, kOffPixdim + 4, static_cast<float>(s.dx));
  put<float>(out, kOffPixdim + 8, static_cast<float>(s.dy));
  put<float>(out, kOffPixdim + 12, static_cast<float>(s.dz));
  put<float>(out, kOffPixdim + 16, static_cast<float>(s.dt));
  put<float>(out, kOffVoxOffset, static_cast<float>(kDefaultVoxOffset));
  put<float>(out, kOffSclSlope, 0.0f);
  put<float>(out, kOffSclInter, 0.0f);
  out[kOffXyztUnits] = 2 | 8;  // mm, s
  std::memcpy(out.data() + kOffMagic, "n+1\0", 4);
  return out;
}

void check_spacing_for_write(const VoxelSpacing& s) {
  if (!s.valid()) throw Error(ErrorCode::NonPositiveSpacing, "cannot write invalid spacing");
}

}  // namespace

bool is_gzip(std::span<const std::uint8_t> b) { return b.size() >= 2 && b[0] == 0x1f && b[1] == 0x8b; }

Bytes gunzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw Error(ErrorCode::CorruptCompressedData, "inflateInit2 failed");
  Bytes out;
  std::uint8_t buf[1 << 16];
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int ret = Z_OK;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    ret = inflate(&zs, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&zs);
      throw Error(ErrorCode::CorruptCompressedData, "inflate failed");
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    if (out.size() > kMaxInflated) {
      inflateEnd(&zs);
      throw Error(ErrorCode::CorruptCompressedData, "inflated size exceeds limit");
    }
    if (ret == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw Error(ErrorCode::CorruptCompressedData, "truncated gzip stream");
    }
  } while (ret != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

Bytes gzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw Error(ErrorCode::CorruptCompressedData, "deflateInit2 failed");
  Bytes out(deflateBound(&zs, static_cast<uLong>(in.size())));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int ret = deflate(&zs, Z_FINISH);
  deflateEnd(&zs);
  if (ret != Z_STREAM_END) throw Error(ErrorCode::CorruptCompressedData, "deflate failed");
  out.resize(zs.total_out);
  return out;
}

Volume4D read(std::span<const std::uint8_t> bytes) {
  if (is_gzip(bytes)) {
    const Bytes raw = gunzip(bytes);
    return read(raw);
  }
  const Parsed p = parse_header(bytes);
  std::vector<float> data(voxel_count(p.dims));
  decode(bytes, p, [&](std::size_t i, double v) { data[i] = static_cast<float>(v); });
  return Volume4D(p.dims, p.spacing, std::move(data));
}

LabelVolume read_labels(std::span<const std::uint8_t> bytes) {
  if (is_gzip(bytes)) {
    const Bytes raw = gunzip(bytes);
    return read_labels(raw);
  }
  const Parsed p = parse_header(bytes);
  std::vector<std::uint8_t> labels(voxel_count(p.dims));
  decode(bytes, p, [&](std::size_t i, double v) {
    if (v < 0 || v >= kNumClasses || v != std::floor(v))
      throw Error(ErrorCode::ValueOutOfRange, "label value outside {0,1,2,3}");
    labels[i] = static_cast<std::uint8_t>(v);
  });
  return LabelVolume(p.dims, p.spacing, std::move(labels));
}

Bytes write(const Volume4D& v, DataType dtype) {
  check_spacing_for_write(v.spacing());
  Bytes out = make_header(v.dims(), v.spacing(), dtype);
  const std::size_t bpv = bytes_per_voxel(dtype);
  const std::size_t base = out.size();
  out.resize(base + v.size() * bpv);
  auto data = v.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float f = data[i];
    if (!std::isfinite(f)) throw Error(ErrorCode::ValueOutOfRange, "non-finite value");
    switch (dtype) {
      case DataType::Float32: put<float>(out, base + 4 * i, f); break;
      case DataType::Int16:
        if (f != std::floor(f) || f < std::numeric_limits<std::int16_t>::min() ||
            f > std::numeric_limits<std::int16_t>::max())
          throw Error(ErrorCode::ValueOutOfRange, "value not representable as int16");
        put<std::int16_t>(out, base + 2 * i, static_cast<std::int16_t>(f));
        break;
      case DataType::UInt8:
        if (f != std::floor(f) || f < 0 || f > 255) throw Error(ErrorCode::ValueOutOfRange, "value not representable as uint8");
        out[base + i] = static_cast<std::uint8_t>(f);
        break;
    }
  }
  return out;
}

Bytes write(const LabelVolume& v, DataType dtype) {
  check_spacing_for_write(v.spacing());
  Bytes out = make_header(v.dims(), v.spacing(), dtype);
  const std::size_t bpv = bytes_per_voxel(dtype);
  const std::size_t base = out.size();
  out.resize(base + v.size() * bpv);
  auto labels = v.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    switch (dtype) {
      case DataType::UInt8: out[base + i] = labels[i]; break;
      case DataType::Int16: put<std::int16_t>(out, base + 2 * i, labels[i]); break;
      case DataType::Float32: put<float>(out, base + 4 * i, labels[i]); break;
    }
  }
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::InvalidArgument, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::InvalidArgument, "short write to " + path.string());
}

}  // namespace cardiac::nifti

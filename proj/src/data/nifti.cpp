#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "rcan/data.hpp"
#include "rcan/error.hpp"

namespace rcan {

static_assert(std::endian::native == std::endian::little, "NIfTI I/O assumes a little-endian host");

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

// Byte offsets within the 348-byte header.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffMagic = 344;

template <typename V>
V load(const std::vector<char>& buf, std::size_t off) {
  V v;
  std::memcpy(&v, buf.data() + off, sizeof(V));
  return v;
}

template <typename V>
void store(std::vector<char>& buf, std::size_t off, V v) {
  std::memcpy(buf.data() + off, &v, sizeof(V));
}

int bytes_per_voxel(std::int16_t datatype) {
  switch (datatype) {
    case nifti::kUint8:
      return 1;
    case nifti::kInt16:
      return 2;
    case nifti::kFloat32:
      return 4;
    default:
      fail(ErrorCode::kUnsupportedDatatype, "datatype code " + std::to_string(datatype));
  }
}

}  // namespace

NiftiGrid read_nifti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(buf.size() >= kHeaderSize, ErrorCode::kTruncatedFile, path.string() + ": shorter than a NIfTI-1 header");

  require(load<std::int32_t>(buf, 0) == 348, ErrorCode::kBadHeader,
          path.string() + ": sizeof_hdr is not 348 (big-endian files are unsupported)");
  require(std::memcmp(buf.data() + kOffMagic, "n+1\0", 4) == 0, ErrorCode::kBadMagic,
          path.string() + ": magic is not \"n+1\"");

  const auto ndim = load<std::int16_t>(buf, kOffDim);
  require(ndim >= 1 && ndim <= 7, ErrorCode::kBadHeader, path.string() + ": dim[0] out of range");
  std::array<std::int64_t, 7> dims{1, 1, 1, 1, 1, 1, 1};
  for (int i = 0; i < ndim; ++i) {
    dims[static_cast<std::size_t>(i)] = load<std::int16_t>(buf, kOffDim + 2 * static_cast<std::size_t>(i + 1));
    require(dims[static_cast<std::size_t>(i)] >= 1, ErrorCode::kBadHeader, path.string() + ": non-positive extent");
  }
  for (int i = 3; i < 7; ++i)
    require(dims[static_cast<std::size_t>(i)] == 1, ErrorCode::kBadHeader,
            path.string() + ": only single 3-D volumes are supported");

  NiftiGrid g;
  g.datatype = load<std::int16_t>(buf, kOffDatatype);
  const int bpv = bytes_per_voxel(g.datatype);
  // File order is x fastest, which is W in (D, H, W).
  g.extent = {dims[2], dims[1], dims[0]};
  for (int a = 0; a < 3; ++a) {
    const float p = load<float>(buf, kOffPixdim + 4 * static_cast<std::size_t>(3 - a));
    g.spacing[static_cast<std::size_t>(a)] = p > 0.0f ? static_cast<double>(p) : 1.0;
  }

  const float vox = load<float>(buf, kOffVoxOffset);
  require(std::isfinite(vox) && vox >= static_cast<float>(kHeaderSize), ErrorCode::kBadHeader,
          path.string() + ": vox_offset before end of header");
  const auto offset = static_cast<std::size_t>(vox);
  const auto n = static_cast<std::size_t>(voxel_count(g.extent));
  require(buf.size() >= offset + n * static_cast<std::size_t>(bpv), ErrorCode::kTruncatedFile,
          path.string() + ": voxel data shorter than header implies");

  g.values.resize(n);
  const char* src = buf.data() + offset;
  switch (g.datatype) {
    case nifti::kUint8:
      for (std::size_t i = 0; i < n; ++i) g.values[i] = static_cast<unsigned char>(src[i]);
      break;
    case nifti::kInt16:
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t v;
        std::memcpy(&v, src + 2 * i, 2);
        g.values[i] = v;
      }
      break;
    default: {
      std::memcpy(g.values.data(), src, 4 * n);
      const float slope = load<float>(buf, kOffSclSlope);
      const float inter = load<float>(buf, kOffSclInter);
      if (slope != 0.0f && std::isfinite(slope) && std::isfinite(inter) && !(slope == 1.0f && inter == 0.0f))
        for (auto& v : g.values) v = v * slope + inter;
    }
  }
  return g;
}

void write_nifti(const NiftiGrid& g, const std::filesystem::path& path) {
  validate_shape({g.extent[0], g.extent[1], g.extent[2]});
  const auto n = static_cast<std::size_t>(voxel_count(g.extent));
  require(g.values.size() == n, ErrorCode::kShapeMismatch, "grid values do not match extent");
  for (auto e : g.extent) require(e <= 32767, ErrorCode::kInvalidArgument, "extent exceeds NIfTI-1 range");
  const int bpv = bytes_per_voxel(g.datatype);

  std::vector<char> buf(kVoxOffset + n * static_cast<std::size_t>(bpv), 0);
  store<std::int32_t>(buf, 0, 348);
  store<std::int16_t>(buf, kOffDim, 3);
  store<std::int16_t>(buf, kOffDim + 2, static_cast<std::int16_t>(g.extent[2]));
  store<std::int16_t>(buf, kOffDim + 4, static_cast<std::int16_t>(g.extent[1]));
  store<std::int16_t>(buf, kOffDim + 6, static_cast<std::int16_t>(g.extent[0]));
  for (int i = 4; i <= 7; ++i) store<std::int16_t>(buf, kOffDim + 2 * static_cast<std::size_t>(i), 1);
  store<std::int16_t>(buf, kOffDatatype, g.datatype);
  store<std::int16_t>(buf, kOffBitpix, static_cast<std::int16_t>(8 * bpv));
  store<float>(buf, kOffPixdim, 1.0f);
  for (int a = 0; a < 3; ++a)
    store<float>(buf, kOffPixdim + 4 * static_cast<std::size_t>(3 - a),
                 static_cast<float>(g.spacing[static_cast<std::size_t>(a)]));
  store<float>(buf, kOffVoxOffset, static_cast<float>(kVoxOffset));
  store<float>(buf, kOffSclSlope, 0.0f);
  buf[kOffXyztUnits] = 2;  // millimetres
  std::memcpy(buf.data() + kOffMagic, "n+1\0", 4);

  char* dst = buf.data() + kVoxOffset;
  for (std::size_t i = 0; i < n; ++i) {
    const float v = g.values[i];
    require(std::isfinite(v), ErrorCode::kInvalidArgument, "non-finite voxel value");
    switch (g.datatype) {
      case nifti::kUint8:
        require(v >= 0 && v <= 255 && v == std::floor(v), ErrorCode::kInvalidArgument, "value not a uint8");
        dst[i] = static_cast<char>(static_cast<unsigned char>(v));
        break;
      case nifti::kInt16: {
        require(v >= -32768 && v <= 32767 && v == std::floor(v), ErrorCode::kInvalidArgument, "value not an int16");
        const auto s = static_cast<std::int16_t>(v);
        std::memcpy(dst + 2 * i, &s, 2);
        break;
      }
      default:
        std::memcpy(dst + 4 * i, &v, 4);
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(out.good(), ErrorCode::kIoError, "write failed for " + path.string());
}

LabelMap read_labels(const std::filesystem::path& path) {
  auto g = read_nifti(path);
  LabelMap l{g.extent, std::vector<std::uint8_t>(g.values.size()), g.spacing};
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const float v = g.values[i];
    require(v == std::floor(v) && valid_label(static_cast<int>(v)), ErrorCode::kInvalidLabelValue,
            path.string() + ": label value " + std::to_string(v));
    l.labels[i] = static_cast<std::uint8_t>(v);
  }
  return l;
}

void write_labels(const LabelMap& l, const std::filesystem::path& path) {
  check_labels(l);
  NiftiGrid g{l.extent, l.spacing, nifti::kUint8, std::vector<float>(l.labels.begin(), l.labels.end())};
  write_nifti(g, path);
}

}  // namespace rcan

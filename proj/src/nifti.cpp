#include "tdnet/nifti.hpp"

#include <zlib.h>

#include <cstring>
#include <stdexcept>
#include <vector>

namespace tdnet::nifti {

namespace {

// NIfTI-1 header, 348 bytes, no padding with natural alignment.
struct Nifti1Header {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;
constexpr int16_t kDtUint16 = 512;

template <typename T>
void swap_bytes(T& v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  for (size_t i = 0, j = sizeof(T) - 1; i < j; ++i, --j) std::swap(p[i], p[j]);
}

void swap_header(Nifti1Header& h) {
  swap_bytes(h.sizeof_hdr);
  for (auto& d : h.dim) swap_bytes(d);
  swap_bytes(h.datatype);
  swap_bytes(h.bitpix);
  for (auto& p : h.pixdim) swap_bytes(p);
  swap_bytes(h.vox_offset);
  swap_bytes(h.scl_slope);
  swap_bytes(h.scl_inter);
}

class GzFile {
public:
  GzFile(const std::string& path, const char* mode) : file_(gzopen(path.c_str(), mode)) {
    if (!file_) throw std::runtime_error("cannot open " + path);
  }
  ~GzFile() {
    if (file_) gzclose(file_);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  void read(void* buf, size_t n, const std::string& path) {
    if (gzread(file_, buf, static_cast<unsigned>(n)) != static_cast<int>(n))
      throw std::runtime_error("truncated NIfTI file: " + path);
  }
  void write(const void* buf, size_t n, const std::string& path) {
    if (gzwrite(file_, buf, static_cast<unsigned>(n)) != static_cast<int>(n))
      throw std::runtime_error("failed writing " + path);
  }
  void skip(size_t n, const std::string& path) {
    std::vector<char> sink(4096);
    while (n > 0) {
      const size_t chunk = std::min(n, sink.size());
      read(sink.data(), chunk, path);
      n -= chunk;
    }
  }

private:
  gzFile file_;
};

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct RawImage {
  std::array<int64_t, 3> dims;  // (D,H,W)
  std::array<double, 3> spacing;
  std::vector<float> values;
};

RawImage read_raw(const std::string& path) {
  GzFile f(path, "rb");
  Nifti1Header h{};
  f.read(&h, sizeof(h), path);

  bool swapped = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swapped = true;
    if (h.sizeof_hdr != 348) throw std::runtime_error("not a NIfTI-1 file: " + path);
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
    throw std::runtime_error("unsupported NIfTI magic in " + path);
  if (std::strncmp(h.magic, "ni1", 3) == 0)
    throw std::runtime_error("detached .hdr/.img NIfTI pairs are not supported: " + path);
  if (h.dim[0] < 3) {
    // promote 1D/2D to 3D with singleton axes
    for (int i = h.dim[0] + 1; i <= 3; ++i) {
      h.dim[i] = 1;
      h.pixdim[i] = 1.0f;
    }
  }
  for (int i = 4; i <= h.dim[0] && i < 8; ++i)
    if (h.dim[i] > 1)
      throw std::runtime_error("only scalar 3D NIfTI volumes are supported: " + path);

  const int64_t nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
  if (nx < 1 || ny < 1 || nz < 1) throw std::runtime_error("bad NIfTI dims in " + path);
  const int64_t n = nx * ny * nz;

  RawImage img;
  img.dims = {nz, ny, nx};  // grid order (D,H,W); file order is x fastest
  img.spacing = {static_cast<double>(h.pixdim[3]), static_cast<double>(h.pixdim[2]),
                 static_cast<double>(h.pixdim[1])};
  for (double& s : img.spacing)
    if (!(s > 0.0)) s = 1.0;

  const size_t offset = static_cast<size_t>(h.vox_offset);
  if (offset < sizeof(h)) throw std::runtime_error("bad vox_offset in " + path);
  f.skip(offset - sizeof(h), path);

  img.values.resize(static_cast<size_t>(n));
  auto load = [&](auto tag) {
    using S = decltype(tag);
    std::vector<S> buf(static_cast<size_t>(n));
    f.read(buf.data(), buf.size() * sizeof(S), path);
    if (swapped && sizeof(S) > 1)
      for (auto& v : buf) swap_bytes(v);
    for (int64_t i = 0; i < n; ++i) img.values[static_cast<size_t>(i)] = static_cast<float>(buf[static_cast<size_t>(i)]);
  };
  switch (h.datatype) {
    case kDtUint8: load(uint8_t{}); break;
    case kDtInt16: load(int16_t{}); break;
    case kDtUint16: load(uint16_t{}); break;
    case kDtInt32: load(int32_t{}); break;
    case kDtFloat32: load(float{}); break;
    case kDtFloat64: load(double{}); break;
    default:
      throw std::runtime_error("unsupported NIfTI datatype " + std::to_string(h.datatype) +
                               " in " + path);
  }
  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    for (auto& v : img.values) v = v * h.scl_slope + h.scl_inter;
  }
  return img;
}

Nifti1Header make_header(const std::array<int64_t, 3>& dims, const std::array<double, 3>& spacing,
                         int16_t datatype, int16_t bitpix) {
  Nifti1Header h{};
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<int16_t>(dims[2]);  // W -> x
  h.dim[2] = static_cast<int16_t>(dims[1]);  // H -> y
  h.dim[3] = static_cast<int16_t>(dims[0]);  // D -> z
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(spacing[2]);
  h.pixdim[2] = static_cast<float>(spacing[1]);
  h.pixdim[3] = static_cast<float>(spacing[0]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // millimetres
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(spacing[2]);
  h.srow_y[1] = static_cast<float>(spacing[1]);
  h.srow_z[2] = static_cast<float>(spacing[0]);
  std::strncpy(h.descrip, "tdnet", sizeof(h.descrip) - 1);
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

void write_raw(const std::string& path, const Nifti1Header& h, const void* data, size_t bytes) {
  // "wT" stores the stream uncompressed so plain .nii stays plain.
  const char* mode = ends_with(path, ".gz") ? "wb6" : "wbT";
  GzFile f(path, mode);
  f.write(&h, sizeof(h), path);
  const char ext[4] = {0, 0, 0, 0};
  f.write(ext, 4, path);
  f.write(data, bytes, path);
}

}  // namespace

Volume read_volume(const std::string& path) {
  RawImage img = read_raw(path);
  Volume v;
  v.data = Tensor({img.dims[0], img.dims[1], img.dims[2]}, std::move(img.values));
  v.spacing = img.spacing;
  return v;
}

ByteGrid read_labels(const std::string& path, std::array<double, 3>* spacing) {
  RawImage img = read_raw(path);
  if (spacing) *spacing = img.spacing;
  ByteGrid g({img.dims[0], img.dims[1], img.dims[2]});
  for (int64_t i = 0; i < g.numel(); ++i) {
    const float v = img.values[static_cast<size_t>(i)];
    const long r = std::lround(v);
    if (r < 0 || r > 255 || std::abs(v - static_cast<float>(r)) > 1e-3f)
      throw std::runtime_error("non-integer or out-of-range label value in " + path);
    g[i] = static_cast<uint8_t>(r);
  }
  return g;
}

void write_volume(const std::string& path, const Volume& v) {
  if (v.data.rank() != 3) throw std::invalid_argument("volume must be 3D");
  const Nifti1Header h =
      make_header({v.data.dim(0), v.data.dim(1), v.data.dim(2)}, v.spacing, kDtFloat32, 32);
  write_raw(path, h, v.data.data(), static_cast<size_t>(v.data.numel()) * sizeof(float));
}

void write_labels(const std::string& path, const ByteGrid& labels,
                  const std::array<double, 3>& spacing) {
  if (labels.rank() != 3) throw std::invalid_argument("label grid must be 3D");
  const Nifti1Header h =
      make_header({labels.dim(0), labels.dim(1), labels.dim(2)}, spacing, kDtUint8, 8);
  write_raw(path, h, labels.data(), static_cast<size_t>(labels.numel()));
}

}  // namespace tdnet::nifti

// Copyright (c) 2026 the warpaug authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// @file nifti.hpp
/// @brief NIfTI-1 reader/writer (.nii and .nii.gz, single-file variant).
///
/// Supported on-disk datatypes: uint8, int16, float32, float64; everything is
/// promoted to float in memory with scl_slope/scl_inter applied. Data is
/// stored x-fastest on disk, which matches the in-memory canonical order, so
/// no reordering happens. Byte-swapped (big-endian) files are handled.

#ifndef WARPAUG_NIFTI_HPP
#define WARPAUG_NIFTI_HPP

#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <zlib.h>

#include "warpaug/volume.hpp"

namespace warpaug {

namespace detail {

#pragma pack(push, 1)
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
  int16_t qform_code;
  int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

inline void bswap(int16_t& v) { v = static_cast<int16_t>(__builtin_bswap16(static_cast<uint16_t>(v))); }
inline void bswap(int32_t& v) { v = static_cast<int32_t>(__builtin_bswap32(static_cast<uint32_t>(v))); }
inline void bswap(float& v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  u = __builtin_bswap32(u);
  std::memcpy(&v, &u, 4);
}

inline void bswapHeader(Nifti1Header& h) {
  bswap(h.sizeof_hdr);
  bswap(h.extents);
  bswap(h.session_error);
  for (auto& d : h.dim) bswap(d);
  bswap(h.intent_p1); bswap(h.intent_p2); bswap(h.intent_p3);
  bswap(h.intent_code); bswap(h.datatype); bswap(h.bitpix);
  bswap(h.slice_start);
  for (auto& p : h.pixdim) bswap(p);
  bswap(h.vox_offset); bswap(h.scl_slope); bswap(h.scl_inter);
  bswap(h.slice_end);
  bswap(h.cal_max); bswap(h.cal_min);
  bswap(h.slice_duration); bswap(h.toffset);
  bswap(h.glmax); bswap(h.glmin);
  bswap(h.qform_code); bswap(h.sform_code);
  bswap(h.quatern_b); bswap(h.quatern_c); bswap(h.quatern_d);
  bswap(h.qoffset_x); bswap(h.qoffset_y); bswap(h.qoffset_z);
  for (auto& v : h.srow_x) bswap(v);
  for (auto& v : h.srow_y) bswap(v);
  for (auto& v : h.srow_z) bswap(v);
}

/// Reads a whole file through zlib; transparently handles plain files too.
inline std::vector<unsigned char> readAllBytes(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw Error(ErrorKind::io, "cannot open: " + path);
  std::vector<unsigned char> out;
  unsigned char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof(buf))) > 0)
    out.insert(out.end(), buf, buf + n);
  bool bad = (n < 0);
  gzclose(f);
  if (bad) throw Error(ErrorKind::format, "decompression failure: " + path);
  return out;
}

inline Eigen::Matrix4d qformToAffine(const Nifti1Header& h) {
  double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
  double a = 1.0 - b * b - c * c - d * d;
  a = a > 0 ? std::sqrt(a) : 0.0;
  double qfac = (h.pixdim[0] < 0) ? -1.0 : 1.0;
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c;
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int col = 0; col < 3; ++col) {
    double s = h.pixdim[col + 1] * (col == 2 ? qfac : 1.0);
    m.block<3, 1>(0, col) = r.col(col) * s;
  }
  m(0, 3) = h.qoffset_x;
  m(1, 3) = h.qoffset_y;
  m(2, 3) = h.qoffset_z;
  return m;
}

}  // namespace detail

using NiftiVolume = std::variant<Volume3D, Volume4D>;

/// Reads a 3D or 4D NIfTI-1 file. Non-finite voxels are sanitized to 0 so the
/// finiteness invariant holds on everything entering the pipeline.
inline NiftiVolume readNifti(const std::string& path) {
  auto bytes = detail::readAllBytes(path);
  if (bytes.size() < sizeof(detail::Nifti1Header))
    throw Error(ErrorKind::format, "truncated NIfTI header: " + path);
  detail::Nifti1Header hdr;
  std::memcpy(&hdr, bytes.data(), sizeof(hdr));
  bool swapped = false;
  if (hdr.sizeof_hdr != 348) {
    detail::bswapHeader(hdr);
    swapped = true;
    if (hdr.sizeof_hdr != 348)
      throw Error(ErrorKind::format, "bad sizeof_hdr: " + path);
  }
  if (std::strncmp(hdr.magic, "n+1", 3) != 0)
    throw Error(ErrorKind::format, "malformed magic bytes: " + path);
  int rank = hdr.dim[0];
  if (rank != 3 && rank != 4)
    throw Error(ErrorKind::dimension,
                strCat("unsupported dim count ", rank, ": ", path));

  VolumeHeader vh;
  vh.rank = rank;
  vh.dim = {hdr.dim[1], hdr.dim[2], hdr.dim[3]};
  vh.nframes = (rank == 4) ? std::max<int>(1, hdr.dim[4]) : 1;
  vh.time_step = (rank == 4) ? hdr.pixdim[4] : 0.0;
  if (hdr.sform_code > 0) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int c = 0; c < 4; ++c) {
      m(0, c) = hdr.srow_x[c];
      m(1, c) = hdr.srow_y[c];
      m(2, c) = hdr.srow_z[c];
    }
    vh.affine = m;
  } else if (hdr.qform_code > 0) {
    vh.affine = detail::qformToAffine(hdr);
  } else {
    vh.affine = Eigen::Matrix4d::Identity();
    for (int d = 0; d < 3; ++d) vh.affine(d, d) = hdr.pixdim[d + 1];
  }
  // the affine is authoritative for voxel size (keeps the header invariant)
  for (int d = 0; d < 3; ++d)
    vh.voxel_size[d] = vh.affine.block<3, 1>(0, d).norm();

  size_t nvox = vh.nvox() * vh.nframes;
  size_t elem;
  switch (hdr.datatype) {
    case 2: elem = 1; break;    // uint8
    case 4: elem = 2; break;    // int16
    case 16: elem = 4; break;   // float32
    case 64: elem = 8; break;   // float64
    default:
      throw Error(ErrorKind::unsupported_format,
                  strCat("unsupported datatype code ", hdr.datatype));
  }
  size_t offset = static_cast<size_t>(hdr.vox_offset);
  if (offset < 348 || bytes.size() < offset + nvox * elem)
    throw Error(ErrorKind::format, "truncated NIfTI data: " + path);

  double slope = (hdr.scl_slope == 0.0f) ? 1.0 : hdr.scl_slope;
  double inter = (hdr.scl_slope == 0.0f) ? 0.0 : hdr.scl_inter;
  const unsigned char* src = bytes.data() + offset;
  std::vector<float> all(nvox);
  for (size_t v = 0; v < nvox; ++v) {
    double raw;
    switch (hdr.datatype) {
      case 2: raw = src[v]; break;
      case 4: {
        int16_t x;
        std::memcpy(&x, src + 2 * v, 2);
        if (swapped) detail::bswap(x);
        raw = x;
        break;
      }
      case 16: {
        float x;
        std::memcpy(&x, src + 4 * v, 4);
        if (swapped) detail::bswap(x);
        raw = x;
        break;
      }
      default: {
        uint64_t u;
        std::memcpy(&u, src + 8 * v, 8);
        if (swapped) u = __builtin_bswap64(u);
        double x;
        std::memcpy(&x, &u, 8);
        raw = x;
        break;
      }
    }
    double val = raw * slope + inter;
    all[v] = std::isfinite(val) ? static_cast<float>(val) : 0.0f;
  }

  if (rank == 3) {
    Volume3D vol;
    vol.header = vh.spatial();
    vol.data = std::move(all);
    vol.validate();
    return vol;
  }
  Volume4D vol(vh.spatial(), vh.nframes, vh.time_step);
  size_t per = vh.nvox();
  for (int f = 0; f < vh.nframes; ++f)
    std::copy(all.begin() + f * per, all.begin() + (f + 1) * per,
              vol.frames[f].data.begin());
  vol.validate();
  return vol;
}

inline Volume3D readNifti3D(const std::string& path) {
  auto v = readNifti(path);
  if (!std::holds_alternative<Volume3D>(v))
    throw Error(ErrorKind::dimension, "expected 3D volume: " + path);
  return std::get<Volume3D>(std::move(v));
}

inline Volume4D readNifti4D(const std::string& path) {
  auto v = readNifti(path);
  if (!std::holds_alternative<Volume4D>(v))
    throw Error(ErrorKind::dimension, "expected 4D volume: " + path);
  return std::get<Volume4D>(std::move(v));
}

namespace detail {

inline Nifti1Header buildHeader(const VolumeHeader& vh, int16_t datatype,
                                int16_t bitpix) {
  Nifti1Header h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = static_cast<int16_t>(vh.rank);
  h.dim[1] = static_cast<int16_t>(vh.dim[0]);
  h.dim[2] = static_cast<int16_t>(vh.dim[1]);
  h.dim[3] = static_cast<int16_t>(vh.dim[2]);
  h.dim[4] = static_cast<int16_t>(vh.rank == 4 ? vh.nframes : 1);
  for (int d = 5; d < 8; ++d) h.dim[d] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  for (int d = 0; d < 3; ++d)
    h.pixdim[d + 1] = static_cast<float>(vh.voxel_size[d]);
  h.pixdim[4] = static_cast<float>(vh.rank == 4 ? vh.time_step : 0.0);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2 | 8;  // mm, seconds
  std::snprintf(h.descrip, sizeof(h.descrip), "warpaug");
  h.sform_code = 2;  // aligned
  h.qform_code = 0;
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(vh.affine(0, c));
    h.srow_y[c] = static_cast<float>(vh.affine(1, c));
    h.srow_z[c] = static_cast<float>(vh.affine(2, c));
  }
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

inline void writeAllBytes(const std::string& path,
                          const std::vector<unsigned char>& bytes) {
  bool gz = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gz) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (!f) throw Error(ErrorKind::io, "cannot write: " + path);
    size_t done = 0;
    while (done < bytes.size()) {
      unsigned chunk = static_cast<unsigned>(
          std::min<size_t>(bytes.size() - done, 1u << 20));
      if (gzwrite(f, bytes.data() + done, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        throw Error(ErrorKind::io, "write failure: " + path);
      }
      done += chunk;
    }
    gzclose(f);
  } else {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::io, "cannot write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error(ErrorKind::io, "write failure: " + path);
  }
}

inline void appendFrames(std::vector<unsigned char>& out,
                         const std::vector<const Volume3D*>& frames) {
  for (const Volume3D* f : frames) {
    const auto* p = reinterpret_cast<const unsigned char*>(f->data.data());
    out.insert(out.end(), p, p + f->data.size() * sizeof(float));
  }
}

}  // namespace detail

/// Writes float32 NIfTI-1; .gz suffix selects gzip compression.
inline void writeNifti(const Volume3D& vol, const std::string& path) {
  vol.validate();
  auto h = detail::buildHeader(vol.header, 16, 32);
  std::vector<unsigned char> out(sizeof(h) + 4, 0);  // header + extender
  std::memcpy(out.data(), &h, sizeof(h));
  detail::appendFrames(out, {&vol});
  detail::writeAllBytes(path, out);
}

inline void writeNifti(const Volume4D& vol, const std::string& path) {
  vol.validate();
  auto h = detail::buildHeader(vol.header, 16, 32);
  std::vector<unsigned char> out(sizeof(h) + 4, 0);
  std::memcpy(out.data(), &h, sizeof(h));
  std::vector<const Volume3D*> ptrs;
  for (const auto& f : vol.frames) ptrs.push_back(&f);
  detail::appendFrames(out, ptrs);
  detail::writeAllBytes(path, out);
}

/// Masks persist as uint8.
inline void writeNifti(const BinaryMask& mask, const std::string& path) {
  mask.validate();
  auto h = detail::buildHeader(mask.header, 2, 8);
  std::vector<unsigned char> out(sizeof(h) + 4, 0);
  std::memcpy(out.data(), &h, sizeof(h));
  out.insert(out.end(), mask.data.begin(), mask.data.end());
  detail::writeAllBytes(path, out);
}

inline BinaryMask readMask(const std::string& path) {
  Volume3D v = readNifti3D(path);
  BinaryMask m(v.header);
  for (size_t i = 0; i < v.data.size(); ++i) m.data[i] = v.data[i] > 0.5f;
  return m;
}

/// Integer label volumes (parcellations) persist as int16.
inline void writeNiftiLabels(const VolumeHeader& header,
                             const std::vector<int32_t>& labels,
                             const std::string& path) {
  if (labels.size() != header.nvox())
    throw Error(ErrorKind::shape, "label count != grid size");
  auto h = detail::buildHeader(header.spatial(), 4, 16);
  std::vector<unsigned char> out(sizeof(h) + 4, 0);
  std::memcpy(out.data(), &h, sizeof(h));
  for (int32_t v : labels) {
    auto s = static_cast<int16_t>(v);
    const auto* p = reinterpret_cast<const unsigned char*>(&s);
    out.insert(out.end(), p, p + 2);
  }
  detail::writeAllBytes(path, out);
}

}  // namespace warpaug

#endif  // WARPAUG_NIFTI_HPP

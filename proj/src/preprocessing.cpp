#include "tdnet/preprocessing.hpp"

#include <algorithm>
#include <stdexcept>

namespace tdnet {

Volume window_and_normalize(const Volume& v, double window, double level) {
  if (!(window > 0.0)) throw std::invalid_argument("window width must be > 0");
  validate_volume(v);
  const double lo = level - window / 2.0;
  Volume out;
  out.spacing = v.spacing;
  out.id = v.id;
  out.data = Tensor(v.data.shape());
  const float flo = static_cast<float>(lo);
  const float inv = static_cast<float>(1.0 / window);
  for (int64_t i = 0; i < v.data.numel(); ++i) {
    const float x = (v.data[i] - flo) * inv;
    out.data[i] = std::clamp(x, 0.0f, 1.0f);
  }
  return out;
}

namespace {

template <typename T>
std::array<int64_t, 3> pad_impl(TensorT<T>& grid, const std::array<int64_t, 3>& target, T fill) {
  const std::array<int64_t, 3> in{grid.dim(0), grid.dim(1), grid.dim(2)};
  std::array<int64_t, 3> out_shape = in;
  std::array<int64_t, 3> lo{0, 0, 0};
  bool needs = false;
  for (int a = 0; a < 3; ++a) {
    if (in[static_cast<size_t>(a)] < target[static_cast<size_t>(a)]) {
      const int64_t pad = target[static_cast<size_t>(a)] - in[static_cast<size_t>(a)];
      lo[static_cast<size_t>(a)] = pad / 2;
      out_shape[static_cast<size_t>(a)] = target[static_cast<size_t>(a)];
      needs = true;
    }
  }
  if (!needs) return lo;
  TensorT<T> padded = TensorT<T>::full({out_shape[0], out_shape[1], out_shape[2]}, fill);
  for (int64_t d = 0; d < in[0]; ++d)
    for (int64_t h = 0; h < in[1]; ++h)
      for (int64_t w = 0; w < in[2]; ++w)
        padded.at3(d + lo[0], h + lo[1], w + lo[2]) = grid.at3(d, h, w);
  grid = std::move(padded);
  return lo;
}

}  // namespace

std::array<int64_t, 3> pad_to_min(Tensor& grid, const std::array<int64_t, 3>& target, float fill) {
  return pad_impl(grid, target, fill);
}

std::array<int64_t, 3> pad_to_min(ByteGrid& grid, const std::array<int64_t, 3>& target,
                                  uint8_t fill) {
  return pad_impl(grid, target, fill);
}

PatchPair extract_random_patch(const Volume& v, const ScribbleAnnotation& s,
                               const std::array<int64_t, 3>& patch_size, Rng& rng) {
  for (int64_t p : patch_size)
    if (p < 1) throw std::invalid_argument("patch dimensions must be positive");
  if (!v.data.same_shape(TensorT<float>(s.labels.shape())))
    throw std::invalid_argument("volume and scribble shapes differ");

  PatchPair out;
  Tensor img = v.data;
  ByteGrid scr = s.labels;
  pad_to_min(img, patch_size, 0.0f);
  pad_to_min(scr, patch_size, kIgnoreLabel);

  std::array<int64_t, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    const int64_t hi = img.dim(a) - patch_size[static_cast<size_t>(a)];
    origin[static_cast<size_t>(a)] = hi == 0 ? 0 : rng.uniform_int(0, hi);
  }

  out.origin = origin;
  out.image.spacing = v.spacing;
  out.image.id = v.id;
  out.image.data = Tensor({patch_size[0], patch_size[1], patch_size[2]});
  out.scribble.num_classes = s.num_classes;
  out.scribble.labels = ByteGrid({patch_size[0], patch_size[1], patch_size[2]});
  for (int64_t d = 0; d < patch_size[0]; ++d)
    for (int64_t h = 0; h < patch_size[1]; ++h) {
      const int64_t sd = origin[0] + d, sh = origin[1] + h, sw = origin[2];
      float* ir = &out.image.data.at3(d, h, 0);
      uint8_t* sr = &out.scribble.labels.at3(d, h, 0);
      const float* src_i = &img.at3(sd, sh, sw);
      const uint8_t* src_s = &scr.at3(sd, sh, sw);
      std::copy(src_i, src_i + patch_size[2], ir);
      std::copy(src_s, src_s + patch_size[2], sr);
    }
  return out;
}

}  // namespace tdnet

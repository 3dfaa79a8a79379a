#include "tdnet/inference.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "tdnet/preprocessing.hpp"

namespace tdnet {

std::vector<int64_t> window_origins(int64_t size, int64_t patch, int64_t stride) {
  if (stride < 1) throw std::invalid_argument("stride must be at least 1");
  if (patch < 1 || patch > size)
    throw std::invalid_argument("patch extent " + std::to_string(patch) +
                                " must lie in [1, " + std::to_string(size) + "]");
  if (stride > patch) throw std::invalid_argument("stride must not exceed the patch extent");
  std::vector<int64_t> origins;
  for (int64_t o = 0; o + patch <= size; o += stride) origins.push_back(o);
  if (origins.back() != size - patch) origins.push_back(size - patch);
  return origins;
}

ProbabilityMap sliding_window_predict(const TDNet& net, const Volume& v,
                                      const std::array<int64_t, 3>& patch_size,
                                      std::array<int64_t, 3> stride) {
  validate_volume(v);
  const int64_t factor = net.config().pool_factor();
  for (int a = 0; a < 3; ++a) {
    if (patch_size[static_cast<size_t>(a)] < 1)
      throw std::invalid_argument("patch dimensions must be positive");
    if (patch_size[static_cast<size_t>(a)] % factor != 0)
      throw std::invalid_argument("patch extent " +
                                  std::to_string(patch_size[static_cast<size_t>(a)]) +
                                  " must be divisible by " + std::to_string(factor));
    if (stride[static_cast<size_t>(a)] == 0)
      stride[static_cast<size_t>(a)] = std::max<int64_t>(1, patch_size[static_cast<size_t>(a)] / 2);
  }

  const std::array<int64_t, 3> orig{v.data.dim(0), v.data.dim(1), v.data.dim(2)};
  Tensor grid = v.data;
  const std::array<int64_t, 3> lo = pad_to_min(grid, patch_size, 0.0f);
  const std::array<int64_t, 3> dims{grid.dim(0), grid.dim(1), grid.dim(2)};

  const auto od = window_origins(dims[0], patch_size[0], stride[0]);
  const auto oh = window_origins(dims[1], patch_size[1], stride[1]);
  const auto ow = window_origins(dims[2], patch_size[2], stride[2]);

  const int64_t c_count = net.config().num_classes;
  TensorD acc({c_count, dims[0], dims[1], dims[2]});
  TensorT<int32_t> cover({dims[0], dims[1], dims[2]});

  Tensor patch({patch_size[0], patch_size[1], patch_size[2]});
  nn::Workspace<float> ws;
  for (int64_t d0 : od)
    for (int64_t h0 : oh)
      for (int64_t w0 : ow) {
        for (int64_t d = 0; d < patch_size[0]; ++d)
          for (int64_t h = 0; h < patch_size[1]; ++h) {
            const float* src = &grid.at3(d0 + d, h0 + h, w0);
            std::copy(src, src + patch_size[2], &patch.at3(d, h, 0));
          }
        const NetworkOutput out = net.forward(patch, false, 0, nullptr, &ws);
        const Tensor& p = out.probs[0].probs;
        for (int64_t c = 0; c < c_count; ++c)
          for (int64_t d = 0; d < patch_size[0]; ++d)
            for (int64_t h = 0; h < patch_size[1]; ++h) {
              const float* src = p.data() + ((c * patch_size[0] + d) * patch_size[1] + h) *
                                                patch_size[2];
              double* dst = &acc.at4(c, d0 + d, h0 + h, w0);
              for (int64_t w = 0; w < patch_size[2]; ++w) dst[w] += src[w];
            }
        for (int64_t d = 0; d < patch_size[0]; ++d)
          for (int64_t h = 0; h < patch_size[1]; ++h) {
            int32_t* dst = &cover.at3(d0 + d, h0 + h, w0);
            for (int64_t w = 0; w < patch_size[2]; ++w) ++dst[w];
          }
      }

  ProbabilityMap result;
  result.probs = Tensor({c_count, orig[0], orig[1], orig[2]});
  for (int64_t c = 0; c < c_count; ++c)
    for (int64_t d = 0; d < orig[0]; ++d)
      for (int64_t h = 0; h < orig[1]; ++h)
        for (int64_t w = 0; w < orig[2]; ++w) {
          const int32_t n = cover.at3(lo[0] + d, lo[1] + h, lo[2] + w);
          result.probs.at4(c, d, h, w) =
              static_cast<float>(acc.at4(c, lo[0] + d, lo[1] + h, lo[2] + w) /
                                 static_cast<double>(n));
        }
  return result;
}

}  // namespace tdnet

#include "evs/cost_volume.hpp"

#include "evs/checkpoint.hpp"

namespace evs {

Correlation correlate(const Tensor& left, const Tensor& right, std::size_t candidates) {
  if (left.rank() != 4 || left.shape() != right.shape()) {
    throw ShapeError("correlate: feature maps must share a [B,C,H,W] shape, got " + shape_str(left.shape()) +
                     " and " + shape_str(right.shape()));
  }
  if (candidates == 0) throw ShapeError("correlate: need at least one disparity candidate");
  const std::size_t B = left.dim(0), C = left.dim(1), H = left.dim(2), W = left.dim(3), D = candidates;
  const std::size_t hw = H * W;
  const double inv_c = 1.0 / static_cast<double>(C);

  Tensor valid = Tensor::zeros({D, W});
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t w = d; w < W; ++w) valid.data()[d * W + w] = 1.0;

  const bool track = autograd::should_record({&left, &right});
  Tensor vol = Tensor::zeros({B, D, H, W});
  if (track) vol.set_requires_grad(true);
  auto fl = left.data();
  auto fr = right.data();
  auto vd = vol.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t d = 0; d < D && d < W; ++d) {
      double* out = vd.data() + (b * D + d) * hw;
      for (std::size_t c = 0; c < C; ++c) {
        const double* l = fl.data() + (b * C + c) * hw;
        const double* r = fr.data() + (b * C + c) * hw;
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = d; w < W; ++w) out[h * W + w] += l[h * W + w] * r[h * W + w - d];
      }
      for (std::size_t i = 0; i < hw; ++i) out[i] *= inv_c;
    }
  }
  autograd::check_finite("correlate", vol);

  if (track) {
    Tape::current().record("correlate", vol, [left, right, B, C, H, W, D, inv_c](std::span<const double> g) {
      const std::size_t hw = H * W;
      auto fl = left.data();
      auto fr = right.data();
      double* gl = left.requires_grad() ? autograd::grad_of(left).data() : nullptr;
      double* gr = right.requires_grad() ? autograd::grad_of(right).data() : nullptr;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t d = 0; d < D && d < W; ++d) {
          const double* go = g.data() + (b * D + d) * hw;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * hw;
            for (std::size_t h = 0; h < H; ++h)
              for (std::size_t w = d; w < W; ++w) {
                const double gv = go[h * W + w] * inv_c;
                if (gl) gl[base + h * W + w] += gv * fr[base + h * W + w - d];
                if (gr) gr[base + h * W + w - d] += gv * fl[base + h * W + w];
              }
          }
        }
    });
  }
  return {vol, valid};
}

std::size_t candidates_at_stride(std::size_t max_disparity, std::size_t stride) {
  return (max_disparity + stride - 1) / stride;
}

CostVolumePyramid build_cost_pyramid(const FeaturePyramid& left, const FeaturePyramid& right,
                                     std::size_t max_disparity) {
  if (max_disparity == 0) throw ShapeError("build_cost_pyramid: max disparity must be >= 1");
  if (left.levels.size() != right.levels.size() || left.strides != right.strides ||
      left.strides.size() != left.levels.size()) {
    throw ShapeError("build_cost_pyramid: left and right pyramids have different levels");
  }
  CostVolumePyramid pyr;
  pyr.max_disparity = max_disparity;
  pyr.strides = left.strides;
  for (std::size_t l = 0; l < left.levels.size(); ++l) {
    const std::size_t d = candidates_at_stride(max_disparity, left.strides[l]);
    Correlation c = correlate(left.levels[l], right.levels[l], d);
    pyr.volumes.push_back(c.volume);
    pyr.valid.push_back(c.valid);
    pyr.candidates.push_back(d);
  }
  return pyr;
}

void dump_cost_pyramid(const std::filesystem::path& path, const CostVolumePyramid& pyramid) {
  std::vector<NamedTensor> named;
  for (std::size_t l = 0; l < pyramid.volumes.size(); ++l) {
    named.push_back({"cost.s" + std::to_string(pyramid.strides[l]), pyramid.volumes[l]});
  }
  save_checkpoint(path, named);
}

}  // namespace evs

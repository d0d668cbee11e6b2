#include "evs/disparity.hpp"

#include <Eigen/Core>

namespace evs {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
}  // namespace

DisparityDistribution cost_to_prob(const Tensor& volume) {
  if (volume.rank() != 4) throw ShapeError("cost_to_prob: volume must be [B,D,H,W], got " + shape_str(volume.shape()));
  return {softmax(volume, 1), volume.dim(1)};
}

Tensor soft_argmax(const DisparityDistribution& dist) {
  const Tensor& p = dist.probs;
  if (p.rank() != 4) throw ShapeError("soft_argmax: probs must be [B,D,H,W]");
  const std::size_t B = p.dim(0), D = p.dim(1), hw = p.dim(2) * p.dim(3);
  const bool track = autograd::should_record({&p});
  Tensor out = Tensor::zeros({B, 1, p.dim(2), p.dim(3)});
  if (track) out.set_requires_grad(true);
  auto pd = p.data();
  auto od = out.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t d = 0; d < D; ++d) {
      const double* src = pd.data() + (b * D + d) * hw;
      double* dst = od.data() + b * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += static_cast<double>(d) * src[i];
    }
  if (track) {
    Tape::current().record("soft_argmax", out, [p, B, D, hw](std::span<const double> g) {
      auto gp = autograd::grad_of(p);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t i = 0; i < hw; ++i) gp[(b * D + d) * hw + i] += static_cast<double>(d) * g[b * hw + i];
    });
  }
  return out;
}

Tensor upsample_disparity(const Tensor& disparity, std::size_t factor) {
  if (factor == 1) return disparity;
  return scale(upsample_bilinear(disparity, factor), static_cast<double>(factor));
}

Tensor linear_attention_core(const Tensor& phi_q, const Tensor& phi_k, const Tensor& v) {
  if (phi_q.rank() != 4 || phi_q.shape() != phi_k.shape() || phi_q.shape() != v.shape()) {
    throw ShapeError("linear_attention: q, k, v must share a [B,C,H,W] shape");
  }
  const std::size_t B = phi_q.dim(0), C = phi_q.dim(1), N = phi_q.dim(2) * phi_q.dim(3);
  const bool track = autograd::should_record({&phi_q, &phi_k, &v});
  Tensor out = Tensor::zeros(phi_q.shape());
  if (track) out.set_requires_grad(true);

  // Per batch, channel-major [C,N] views. kv = phi_k v^T [C,C], z = phi_k 1 [C].
  Buffer kv(B * C * C), z(B * C), den(B * N);
  for (std::size_t b = 0; b < B; ++b) {
    CMapMat q(phi_q.data().data() + b * C * N, C, N);
    CMapMat k(phi_k.data().data() + b * C * N, C, N);
    CMapMat val(v.data().data() + b * C * N, C, N);
    MapMat kvm(kv.data() + b * C * C, C, C);
    kvm.noalias() = k * val.transpose();
    Eigen::Map<Eigen::VectorXd> zv(z.data() + b * C, C);
    zv = k.rowwise().sum();
    Eigen::Map<Eigen::RowVectorXd> dv(den.data() + b * N, N);
    dv.noalias() = zv.transpose() * q;
    MapMat o(out.data().data() + b * C * N, C, N);
    o.noalias() = kvm.transpose() * q;
    for (std::size_t n = 0; n < N; ++n) o.col(n) /= dv(n);
  }
  autograd::check_finite("linear_attention", out);

  if (track) {
    Tape::current().record(
        "linear_attention", out, [phi_q, phi_k, v, out, kv, z, den, B, C, N](std::span<const double> g) {
          for (std::size_t b = 0; b < B; ++b) {
            CMapMat q(phi_q.data().data() + b * C * N, C, N);
            CMapMat k(phi_k.data().data() + b * C * N, C, N);
            CMapMat val(v.data().data() + b * C * N, C, N);
            CMapMat o(out.data().data() + b * C * N, C, N);
            CMapMat go(g.data() + b * C * N, C, N);
            CMapMat kvm(kv.data() + b * C * C, C, C);
            Eigen::Map<const Eigen::VectorXd> zv(z.data() + b * C, C);
            Eigen::Map<const Eigen::RowVectorXd> dv(den.data() + b * N, N);
            // out = num / den: d num = g / den, d den = -sum_c g * out / den
            RowMat gnum = go;
            Eigen::RowVectorXd gden(N);
            for (std::size_t n = 0; n < N; ++n) {
              gnum.col(n) /= dv(n);
              gden(n) = -go.col(n).dot(o.col(n)) / dv(n);
            }
            // num = kv^T q, den = z^T q
            if (phi_q.requires_grad()) {
              MapMat gq(autograd::grad_of(phi_q).data() + b * C * N, C, N);
              gq.noalias() += kvm * gnum;
              gq.noalias() += zv * gden;
            }
            const RowMat gkv = q * gnum.transpose();  // [C,C]
            const Eigen::VectorXd gz = q * gden.transpose();
            if (phi_k.requires_grad()) {
              MapMat gk(autograd::grad_of(phi_k).data() + b * C * N, C, N);
              gk.noalias() += gkv * val;
              gk.colwise() += gz;
            }
            if (v.requires_grad()) {
              MapMat gv(autograd::grad_of(v).data() + b * C * N, C, N);
              gv.noalias() += gkv.transpose() * k;
            }
          }
        });
  }
  return out;
}

LinearAttention::LinearAttention(std::size_t channels, nn::Rng& rng)
    : query(channels, channels, 1, rng), key(channels, channels, 1, rng), value(channels, channels, 1, rng) {}

Tensor LinearAttention::forward(const Tensor& x) const {
  Tensor q = elu_plus_one(query.forward(x));
  Tensor k = elu_plus_one(key.forward(x));
  return add(x, linear_attention_core(q, k, value.forward(x)));
}

void LinearAttention::collect(nn::Registry& r, const std::string& prefix) const {
  query.collect(r, prefix + ".query");
  key.collect(r, prefix + ".key");
  value.collect(r, prefix + ".value");
}

Refiner::Refiner(const RefinerConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  const std::size_t in = 3 * cfg.rep_channels + 1;
  const std::size_t w = cfg.width;
  enc1_ = nn::ConvBnRelu(in, w, 3, rng, {1, 1, 1});
  enc2_ = nn::ConvBnRelu(w, 2 * w, 3, rng, {1, 1, 1});
  enc3_ = nn::ConvBnRelu(2 * w, 2 * w, 3, rng, {1, 1, 1});
  enc4_ = nn::ConvBnRelu(2 * w, 2 * w, 3, rng, {1, 1, 1});
  attention_ = LinearAttention(2 * w, rng);
  dec3_ = nn::ConvBnRelu(4 * w, 2 * w, 3, rng, {1, 1, 1});
  dec2_ = nn::ConvBnRelu(4 * w, w, 3, rng, {1, 1, 1});
  dec1_ = nn::ConvBnRelu(2 * w, w, 3, rng, {1, 1, 1});
  dilated1_ = nn::Conv2d::same(w, w, 3, rng, nn::Init::Kaiming, 1);
  dilated2_ = nn::Conv2d::same(w, w, 3, rng, nn::Init::Kaiming, 2);
  dilated4_ = nn::Conv2d::same(w, w, 3, rng, nn::Init::Kaiming, 4);
  residual_head_ = nn::Conv2d::same(w, 1, 3, rng, nn::Init::Zero);
  log_var_head_ = nn::Conv2d::same(w, 1, 3, rng, nn::Init::Zero);
}

DisparityOutput Refiner::refine(const Tensor& initial_disparity, const Tensor& left_rep, const Tensor& right_rep,
                                Mode mode) {
  if (left_rep.rank() != 4 || left_rep.shape() != right_rep.shape()) {
    throw ShapeError("refine: left and right representations must share a [B,C,H,W] shape");
  }
  const Shape want{left_rep.dim(0), 1, left_rep.dim(2), left_rep.dim(3)};
  if (initial_disparity.shape() != want) {
    throw ShapeError("refine: disparity " + shape_str(initial_disparity.shape()) +
                     " does not match the representation resolution " + shape_str(want));
  }
  if (left_rep.dim(1) != cfg_.rep_channels) throw ShapeError("refine: unexpected representation channel count");
  if (left_rep.dim(2) % 8 != 0 || left_rep.dim(3) % 8 != 0) {
    throw ShapeError("refine: resolution must be divisible by 8");
  }

  Tensor warped = grid_warp(right_rep, initial_disparity).output;
  Tensor x = concat({left_rep, warped, sub(left_rep, warped),
                     scale(initial_disparity, 1.0 / static_cast<double>(cfg_.max_disparity))},
                    1);
  Tensor e1 = enc1_.forward(x, mode);
  Tensor e2 = enc2_.forward(maxpool2d(e1, 2, 2), mode);
  Tensor e3 = enc3_.forward(maxpool2d(e2, 2, 2), mode);
  Tensor bottleneck = attention_.forward(enc4_.forward(maxpool2d(e3, 2, 2), mode));
  Tensor d3 = dec3_.forward(concat({upsample_bilinear(bottleneck, 2), e3}, 1), mode);
  Tensor d2 = dec2_.forward(concat({upsample_bilinear(d3, 2), e2}, 1), mode);
  Tensor d1 = dec1_.forward(concat({upsample_bilinear(d2, 2), e1}, 1), mode);
  Tensor dil = relu(add(add(dilated1_.forward(d1), dilated2_.forward(d1)), dilated4_.forward(d1)));
  Tensor features = add(d1, dil);

  const double d_max = static_cast<double>(cfg_.max_disparity - 1);
  DisparityOutput out;
  out.disparity = clamp(add(initial_disparity, residual_head_.forward(features)), 0.0, d_max);
  out.log_variance = clamp(log_var_head_.forward(features), cfg_.log_var_min, cfg_.log_var_max);
  return out;
}

void Refiner::collect(nn::Registry& r, const std::string& prefix) const {
  enc1_.collect(r, prefix + ".enc1");
  enc2_.collect(r, prefix + ".enc2");
  enc3_.collect(r, prefix + ".enc3");
  enc4_.collect(r, prefix + ".enc4");
  attention_.collect(r, prefix + ".attention");
  dec3_.collect(r, prefix + ".dec3");
  dec2_.collect(r, prefix + ".dec2");
  dec1_.collect(r, prefix + ".dec1");
  dilated1_.collect(r, prefix + ".dilated1");
  dilated2_.collect(r, prefix + ".dilated2");
  dilated4_.collect(r, prefix + ".dilated4");
  residual_head_.collect(r, prefix + ".residual_head");
  log_var_head_.collect(r, prefix + ".log_var_head");
}

}  // namespace evs

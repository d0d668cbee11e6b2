#include "evs/aggregation.hpp"

namespace evs {

IntraScaleBlock::IntraScaleBlock(std::size_t candidates, std::size_t hidden, std::size_t deform_layers,
                                 nn::Rng& rng, bool zero_init) {
  if (deform_layers == 0) throw std::invalid_argument("IntraScaleBlock: need at least one deformable layer");
  for (std::size_t i = 0; i < deform_layers; ++i) layers_.emplace_back(i == 0 ? candidates : hidden, hidden, rng);
  out_ = nn::Conv2d(hidden, candidates, 1, rng, {}, zero_init ? nn::Init::Zero : nn::Init::Kaiming);
}

Tensor IntraScaleBlock::forward(const Tensor& volume) const {
  Tensor h = volume;
  for (const auto& layer : layers_) h = relu(layer.forward(h));
  return add(volume, out_.forward(h));
}

void IntraScaleBlock::collect(nn::Registry& r, const std::string& prefix) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(r, prefix + ".dconv" + std::to_string(i));
  out_.collect(r, prefix + ".out");
}

CrossScaleBlock::CrossScaleBlock(const std::vector<std::size_t>& candidates, nn::Rng& rng, bool zero_init)
    : candidates_(candidates) {
  const auto last_init = zero_init ? nn::Init::Zero : nn::Init::Kaiming;
  for (std::size_t dst = 0; dst < candidates.size(); ++dst) {
    for (std::size_t src = 0; src < candidates.size(); ++src) {
      if (src == dst) continue;
      Path p{src, dst, {}};
      if (src > dst) {
        p.convs.emplace_back(candidates[src], candidates[dst], 1, rng, Conv2dOptions{}, last_init);
      } else {
        for (std::size_t step = src; step < dst; ++step) {
          const bool last = step + 1 == dst;
          p.convs.emplace_back(candidates[src], last ? candidates[dst] : candidates[src], 3, rng,
                               Conv2dOptions{2, 1, 1}, last ? last_init : nn::Init::Kaiming);
        }
      }
      paths_.push_back(std::move(p));
    }
  }
}

std::vector<Tensor> CrossScaleBlock::forward(const std::vector<Tensor>& volumes) const {
  if (volumes.size() != candidates_.size()) {
    throw ShapeError("csa: expected " + std::to_string(candidates_.size()) + " levels, got " +
                     std::to_string(volumes.size()));
  }
  for (std::size_t l = 0; l < volumes.size(); ++l) {
    if (volumes[l].rank() != 4 || volumes[l].dim(1) != candidates_[l]) {
      throw ShapeError("csa: level " + std::to_string(l) + " has shape " + shape_str(volumes[l].shape()));
    }
  }
  std::vector<Tensor> out = volumes;
  for (const auto& p : paths_) {
    const Tensor& src = volumes[p.src];
    Tensor t;
    if (p.src > p.dst) {
      const Tensor& dst = volumes[p.dst];
      t = p.convs.front().forward(resize_bilinear(src, dst.dim(2), dst.dim(3)));
    } else {
      t = src;
      for (std::size_t i = 0; i < p.convs.size(); ++i) {
        t = p.convs[i].forward(t);
        if (i + 1 < p.convs.size()) t = relu(t);
      }
    }
    out[p.dst] = add(out[p.dst], t);
  }
  return out;
}

void CrossScaleBlock::collect(nn::Registry& r, const std::string& prefix) const {
  for (const auto& p : paths_) {
    const std::string base = prefix + ".from" + std::to_string(p.src) + "to" + std::to_string(p.dst);
    for (std::size_t i = 0; i < p.convs.size(); ++i) p.convs[i].collect(r, base + "." + std::to_string(i));
  }
}

Aggregator::Aggregator(const std::vector<std::size_t>& candidates, const AggregationConfig& cfg, nn::Rng& rng)
    : candidates_(candidates) {
  if (cfg.stages == 0) throw std::invalid_argument("Aggregator: stages must be >= 1");
  for (std::size_t s = 0; s < cfg.stages; ++s) {
    std::vector<IntraScaleBlock> level_blocks;
    for (std::size_t d : candidates) level_blocks.emplace_back(d, cfg.hidden, s == 0 ? 1 : 2, rng, cfg.zero_init);
    isa_.push_back(std::move(level_blocks));
    csa_.emplace_back(candidates, rng, cfg.zero_init);
  }
}

AggregatedPyramid Aggregator::aggregate(const CostVolumePyramid& pyramid, Mode mode) const {
  if (pyramid.volumes.size() != candidates_.size()) {
    throw ShapeError("aggregate: pyramid has " + std::to_string(pyramid.volumes.size()) + " levels, expected " +
                     std::to_string(candidates_.size()));
  }
  AggregatedPyramid out;
  std::vector<Tensor> v = pyramid.volumes;
  for (std::size_t s = 0; s < isa_.size(); ++s) {
    for (std::size_t l = 0; l < v.size(); ++l) v[l] = isa_[s][l].forward(v[l]);
    if (v.size() > 1) v = csa_[s].forward(v);
    if (mode == Mode::Train) out.stages.push_back(v);
  }
  out.volumes = std::move(v);
  return out;
}

void Aggregator::collect(nn::Registry& r, const std::string& prefix) const {
  for (std::size_t s = 0; s < isa_.size(); ++s) {
    for (std::size_t l = 0; l < isa_[s].size(); ++l) {
      isa_[s][l].collect(r, prefix + ".stage" + std::to_string(s) + ".isa" + std::to_string(l));
    }
    csa_[s].collect(r, prefix + ".stage" + std::to_string(s) + ".csa");
  }
}

}  // namespace evs

#include "evs/model.hpp"

namespace evs {

URNet::URNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.backbone.in_channels != cfg.rep_channels) {
    throw std::invalid_argument("URNet: backbone input width must equal the representation channels");
  }
  nn::Rng rng(seed);
  concentrator_ = Concentrator(cfg.scales, cfg.rep_channels, rng);
  backbone_ = StereoBackbone(cfg.backbone, rng);
  std::vector<std::size_t> candidates;
  for (std::size_t s : {4, 8, 16}) candidates.push_back(candidates_at_stride(cfg.max_disparity, s));
  aggregator_ = Aggregator(candidates, cfg.aggregation, rng);
  RefinerConfig rc;
  rc.rep_channels = cfg.rep_channels;
  rc.width = cfg.refine_width;
  rc.max_disparity = cfg.max_disparity;
  refiner_ = Refiner(rc, rng);
}

ModelOutput URNet::forward(const Tensor& left_stacks, const Tensor& right_stacks, Mode mode) {
  if (left_stacks.rank() != 4 || left_stacks.shape() != right_stacks.shape()) {
    throw ShapeError("URNet: left and right stacks must share a [B,M,H,W] shape");
  }
  if (left_stacks.dim(1) != cfg_.scales) throw ShapeError("URNet: expected " + std::to_string(cfg_.scales) + " stacks");

  Tensor left_rep = concentrator_.forward(left_stacks);
  Tensor right_rep = concentrator_.forward(right_stacks);
  auto [left_feat, right_feat] = backbone_.encode_pair(left_rep, right_rep, mode);
  CostVolumePyramid pyramid = build_cost_pyramid(left_feat, right_feat, cfg_.max_disparity);
  AggregatedPyramid agg = aggregator_.aggregate(pyramid, mode);

  ModelOutput out;
  const std::size_t fine_stride = pyramid.strides.front();
  out.initial = upsample_disparity(soft_argmax(cost_to_prob(agg.volumes.front())), fine_stride);
  if (mode == Mode::Train) {
    for (std::size_t s = 0; s < agg.stages.size(); ++s)
      for (std::size_t l = 0; l < agg.stages[s].size(); ++l) {
        const bool reuse = s + 1 == agg.stages.size() && l == 0;
        Tensor d = reuse ? out.initial
                         : upsample_disparity(soft_argmax(cost_to_prob(agg.stages[s][l])), pyramid.strides[l]);
        out.heads.push_back({d, s, pyramid.strides[l]});
      }
  }
  out.refined = refiner_.refine(out.initial, left_rep, right_rep, mode);
  return out;
}

nn::Registry URNet::registry() const {
  nn::Registry r;
  concentrator_.collect(r, "concentrator");
  backbone_.collect(r, "backbone");
  aggregator_.collect(r, "aggregation");
  refiner_.collect(r, "refine");
  return r;
}

std::pair<std::vector<SupervisedOutput>, std::vector<double>> supervision(const ModelOutput& out,
                                                                          const HeadWeights& w,
                                                                          bool uncertainty) {
  std::vector<SupervisedOutput> outputs;
  std::vector<double> weights;
  for (const Head& h : out.heads) {
    outputs.push_back({h.disparity, Tensor()});
    weights.push_back(h.stride <= 4 ? w.mid : w.coarse);
  }
  outputs.push_back({out.refined.disparity, uncertainty ? out.refined.log_variance : Tensor()});
  weights.push_back(w.final);
  return {outputs, weights};
}

}  // namespace evs

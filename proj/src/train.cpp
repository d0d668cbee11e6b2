#include "evs/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "evs/image_io.hpp"

namespace evs {

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.scales = scales;
  m.rep_channels = rep_channels;
  m.backbone.in_channels = rep_channels;
  m.backbone.widths = {width1, width2, width3};
  m.backbone.feature_channels = feature_channels;
  m.max_disparity = max_disparity;
  m.aggregation.stages = stages;
  m.aggregation.hidden = agg_hidden;
  m.refine_width = refine_width;
  return m;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  require(scales >= 1, "scales must be >= 1");
  require(scales < 64 && window >= (std::size_t{1} << (scales - 1)), "window too small for the number of scales");
  require(rep_channels >= 1 && feature_channels >= 1, "channel counts must be positive");
  require(width1 >= 1 && width2 >= 1 && width3 >= 1, "widths must be positive");
  require(max_disparity >= 2, "max_disparity must be >= 2");
  require(stages >= 1, "stages must be >= 1");
  require(alpha > 0, "alpha must be positive");
  require(smooth_l1_beta > 0, "smooth_l1_beta must be positive");
  require(weight_coarse >= 0 && weight_mid >= 0 && weight_final >= 0, "loss weights must be non-negative");
  require(lr >= 0 && weight_decay >= 0, "lr and weight_decay must be non-negative");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must lie in [0, 1)");
  require(batch >= 1, "batch must be >= 1");
  require(crop_height % StereoBackbone::kInputMultiple == 0 && crop_width % StereoBackbone::kInputMultiple == 0 &&
              crop_height > 0 && crop_width > 0,
          "crop size must be a positive multiple of 16");
}

Sample make_sample(const std::string& name, const SyntheticScene& scene, std::size_t window, std::size_t scales) {
  const std::size_t W = scene.left.width, H = scene.left.height;
  auto stacks = [&](const EventFile& f) {
    const EventStack s = build_multi_density(f.events, window, scales, W, H);
    return s.grid.reshape({1, scales, H, W});
  };
  return {name, stacks(scene.left), stacks(scene.right), ground_truth(scene)};
}

std::vector<Sample> load_split(const std::filesystem::path& dir, std::size_t window, std::size_t scales) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset split " + dir.string() + " not found");
  std::vector<std::filesystem::path> scenes;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_directory() && entry.path().filename().string().rfind("scene_", 0) == 0) scenes.push_back(entry.path());
  std::sort(scenes.begin(), scenes.end());
  if (scenes.empty()) throw std::runtime_error("no scene_* directories in " + dir.string());
  std::vector<Sample> out;
  for (const auto& p : scenes) out.push_back(make_sample(p.filename().string(), load_scene(p), window, scales));
  return out;
}

AdamW::AdamW(std::vector<NamedTensor> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
  for (const NamedTensor& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k].tensor;
    if (!p.has_grad()) continue;
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      w[i] -= lr * (update + wd_ * w[i]);
    }
    p.zero_grad();
  }
}

double cosine_lr(double lr0, std::size_t it, std::size_t total) {
  if (total == 0) return lr0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(it) / static_cast<double>(total)));
}

Batch sample_batch(const std::vector<Sample>& data, const RunConfig& cfg, std::mt19937_64& rng) {
  if (data.empty()) throw std::invalid_argument("sample_batch: empty dataset");
  std::vector<Tensor> left, right, disp, valid;
  for (std::size_t b = 0; b < cfg.batch; ++b) {
    const Sample& s = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
    const std::size_t H = s.left.dim(2), W = s.left.dim(3);
    if (cfg.crop_height > H || cfg.crop_width > W) throw std::invalid_argument("sample_batch: crop larger than scene");
    std::size_t top = (H - cfg.crop_height) / 2, lft = (W - cfg.crop_width) / 2;
    if (cfg.random_crop) {
      top = std::uniform_int_distribution<std::size_t>(0, H - cfg.crop_height)(rng);
      lft = std::uniform_int_distribution<std::size_t>(0, W - cfg.crop_width)(rng);
    }
    const bool flip = cfg.vertical_flip && std::bernoulli_distribution(0.5)(rng);
    auto take = [&](const Tensor& t) {
      Tensor c = crop(t, top, lft, cfg.crop_height, cfg.crop_width);
      return flip ? flip_vertical(c) : c;
    };
    left.push_back(take(s.left));
    right.push_back(take(s.right));
    disp.push_back(take(s.gt.disparity));
    valid.push_back(take(s.gt.valid));
  }
  NoGradGuard guard;
  return {concat(left, 0), concat(right, 0), {concat(disp, 0), concat(valid, 0)}};
}

namespace {

void check_grads(const nn::Registry& reg) {
  for (const NamedTensor& p : reg.params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::vector<Sample>& data, const std::filesystem::path& out_dir,
                  std::ostream* progress) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  URNet net(cfg.model(), cfg.seed);
  nn::Registry reg = net.registry();
  for (NamedTensor& p : reg.params) p.tensor.set_requires_grad(true);
  AdamW opt(reg.params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1);

  TrainResult result;
  result.loss_csv = out_dir / "loss.csv";
  result.checkpoint = out_dir / "model.evsk";
  std::ofstream csv(result.loss_csv);
  if (!csv) throw std::runtime_error("cannot write " + result.loss_csv.string());
  csv << "iteration,loss,lr\n";

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double lr = cosine_lr(cfg.lr, it, cfg.iterations);
    Batch batch = sample_batch(data, cfg, rng);
    ModelOutput out = net.forward(batch.left, batch.right, Mode::Train);
    auto [outputs, weights] = supervision(out, cfg.head_weights(), cfg.uncertainty);
    Tensor loss = total_loss(outputs, batch.gt, weights, cfg.loss());
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("non-finite total loss at iteration " + std::to_string(it));
    backward(loss);
    check_grads(reg);
    opt.step(lr);
    result.losses.push_back(value);
    csv << it << ',' << fmt(value) << ',' << fmt(lr) << '\n';
    if (progress && (it % 100 == 0 || it + 1 == cfg.iterations)) {
      *progress << "iter " << it << " loss " << value << " lr " << lr << '\n';
    }
  }
  csv.flush();
  if (!csv) throw std::runtime_error("write failed: " + result.loss_csv.string());
  save_checkpoint(result.checkpoint, reg.state());
  return result;
}

void load_weights(URNet& net, const std::filesystem::path& checkpoint) {
  std::vector<NamedTensor> dst = net.registry().state();
  assign_from(load_checkpoint(checkpoint), dst);
}

Prediction predict(URNet& net, const Tensor& left, const Tensor& right) {
  if (left.rank() != 4 || left.dim(0) != 1 || left.shape() != right.shape()) {
    throw ShapeError("predict: expected matching [1,M,H,W] stacks");
  }
  NoGradGuard guard;
  const std::size_t H = left.dim(2), W = left.dim(3);
  const std::size_t Hp = round_up(H, StereoBackbone::kInputMultiple);
  const std::size_t Wp = round_up(W, StereoBackbone::kInputMultiple);
  ModelOutput out = net.forward(pad_bottom_right(left, Hp, Wp), pad_bottom_right(right, Hp, Wp), Mode::Eval);
  Prediction p;
  p.refined.disparity = crop(out.refined.disparity, 0, 0, H, W);
  p.refined.log_variance = crop(out.refined.log_variance, 0, 0, H, W);
  p.initial = crop(out.initial, 0, 0, H, W);
  return p;
}

void write_prediction(const std::filesystem::path& dir, const std::string& stem, const Prediction& p,
                      const Tensor& valid, double max_disparity) {
  std::filesystem::create_directories(dir);
  write_png16(dir / (stem + ".png"), encode_disparity(p.refined.disparity, valid));
  const Tensor& d = p.refined.disparity;
  write_png_rgb(dir / (stem + "_color.png"), d.dim(3), d.dim(2), colorize(d, valid, max_disparity));
  write_float32(dir / (stem + ".f32"), d);
  write_float32(dir / (stem + "_logvar.f32"), p.refined.log_variance);
}

EvalResult evaluate(URNet& net, const std::vector<Sample>& data, const EvalOutputs& outputs) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalResult result;
  std::vector<MetricReport> refined, initial;
  for (const Sample& s : data) {
    const Prediction p = predict(net, s.left, s.right);
    SampleResult r{s.name, metrics(p.refined.disparity, s.gt), metrics(p.initial, s.gt)};
    refined.push_back(r.refined);
    initial.push_back(r.initial);
    result.samples.push_back(r);
    if (!outputs.dir.empty() && outputs.images) {
      write_prediction(outputs.dir, s.name, p, Tensor(), static_cast<double>(net.config().max_disparity - 1));
    }
  }
  result.refined = combine(refined);
  result.initial = combine(initial);
  if (!outputs.dir.empty()) {
    std::filesystem::create_directories(outputs.dir);
    nlohmann::ordered_json j;
    j["aggregate"] = nlohmann::json::parse(to_json(result.refined));
    j["aggregate_initial"] = nlohmann::json::parse(to_json(result.initial));
    for (const SampleResult& r : result.samples) j["samples"][r.name] = nlohmann::json::parse(to_json(r.refined));
    std::ofstream os(outputs.dir / "metrics.json");
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write metrics.json");
  }
  return result;
}

}  // namespace evs

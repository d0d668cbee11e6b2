#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "evs/model.hpp"
#include "evs/synth.hpp"

namespace evs {

// Desk-scale defaults. Full-scale reference settings: D=192, batch 8.
struct RunConfig {
  std::uint64_t seed = 0;
  // representation
  std::size_t window = 2048;  // N
  std::size_t scales = 3;     // M
  std::size_t rep_channels = 8;
  // network
  std::size_t width1 = 32, width2 = 48, width3 = 64;
  std::size_t feature_channels = 64;
  std::size_t max_disparity = 32;
  std::size_t stages = 2;
  std::size_t agg_hidden = 16;
  std::size_t refine_width = 16;
  // loss
  bool uncertainty = true;
  double alpha = 2.0;
  double smooth_l1_beta = 1.0;
  double weight_coarse = 0.25, weight_mid = 0.5, weight_final = 1.0;
  // optimiser
  double lr = 5e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::size_t batch = 2;
  std::size_t iterations = 2000;
  // augmentation
  std::size_t crop_height = 48, crop_width = 48;
  bool random_crop = true;
  bool vertical_flip = true;

  ModelConfig model() const;
  LossConfig loss() const { return {alpha, smooth_l1_beta}; }
  HeadWeights head_weights() const { return {weight_coarse, weight_mid, weight_final}; }
  /// Throws std::invalid_argument describing the first inconsistent setting.
  void validate() const;
};

struct Sample {
  std::string name;
  Tensor left, right;  // [1,M,H,W] multi-density stacks
  GroundTruth gt;      // [1,1,H,W]
};

Sample make_sample(const std::string& name, const SyntheticScene& scene, std::size_t window, std::size_t scales);

/// Every scene_* directory under dir, sorted by name.
std::vector<Sample> load_split(const std::filesystem::path& dir, std::size_t window, std::size_t scales);

/// Adam moments with decoupled weight decay: p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class AdamW {
 public:
  AdamW(std::vector<NamedTensor> params, double beta1, double beta2, double eps, double weight_decay);

  /// Applies one update from the accumulated grads; tensors without a grad
  /// are skipped. Grads are cleared afterwards.
  void step(double lr);
  std::size_t steps() const { return t_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, wd_;
  std::size_t t_ = 0;
};

/// lr0 * 0.5 * (1 + cos(pi * it / total)).
double cosine_lr(double lr0, std::size_t it, std::size_t total);

/// Batch of random crops (optionally flipped upside down) drawn with rng.
struct Batch {
  Tensor left, right;
  GroundTruth gt;
};
Batch sample_batch(const std::vector<Sample>& data, const RunConfig& cfg, std::mt19937_64& rng);

struct TrainResult {
  std::vector<double> losses;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
};

/// Trains from scratch and writes loss.csv and model.evsk into out_dir.
/// A non-finite loss or gradient aborts with a NumericError naming it.
TrainResult train(const RunConfig& cfg, const std::vector<Sample>& data, const std::filesystem::path& out_dir,
                  std::ostream* progress = nullptr);

/// Loads checkpoint values into a freshly constructed model.
void load_weights(URNet& net, const std::filesystem::path& checkpoint);

struct Prediction {
  DisparityOutput refined;  // cropped back to the input size
  Tensor initial;
};

/// Eval-mode inference on one [1,M,H,W] pair; inputs are zero-padded at the
/// bottom/right to a multiple of 16 and the outputs cropped back.
Prediction predict(URNet& net, const Tensor& left, const Tensor& right);

struct SampleResult {
  std::string name;
  MetricReport refined, initial;
};

struct EvalResult {
  std::vector<SampleResult> samples;
  MetricReport refined, initial;  // valid-pixel-weighted
};

struct EvalOutputs {
  std::filesystem::path dir;  // empty: write nothing
  bool images = true;
};

/// Runs predict on every sample and scores it. With an output dir it writes
/// per-sample 16-bit PNG, colour PNG and float32 disparities plus metrics.json.
EvalResult evaluate(URNet& net, const std::vector<Sample>& data, const EvalOutputs& outputs = {});

/// Writes <stem>.png (16-bit), <stem>_color.png, <stem>.f32 and <stem>_logvar.f32.
void write_prediction(const std::filesystem::path& dir, const std::string& stem, const Prediction& p,
                      const Tensor& valid, double max_disparity);

}  // namespace evs

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "evs/grad_suite.hpp"
#include "evs/image_io.hpp"
#include "evs/train.hpp"

namespace fs = std::filesystem;
using namespace evs;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

void add_run_options(CLI::App& app, RunConfig& c) {
  app.add_option("--window", c.window, "events per stack (N)");
  app.add_option("--scales", c.scales, "density scales (M)");
  app.add_option("--rep-channels", c.rep_channels, "concentrated channels (C0)");
  app.add_option("--width1", c.width1, "backbone stage 1 width");
  app.add_option("--width2", c.width2, "backbone stage 2 width");
  app.add_option("--width3", c.width3, "backbone stage 3 width");
  app.add_option("--feature-channels", c.feature_channels, "pyramid feature channels (Cf)");
  app.add_option("--max-disparity", c.max_disparity, "disparity budget (D)");
  app.add_option("--stages", c.stages, "aggregation stages");
  app.add_option("--agg-hidden", c.agg_hidden, "aggregation hidden channels");
  app.add_option("--refine-width", c.refine_width, "refinement network width");
  app.add_option("--uncertainty", c.uncertainty, "train the final head with the uncertainty loss");
  app.add_option("--alpha", c.alpha, "log-variance penalty weight");
  app.add_option("--smooth-l1-beta", c.smooth_l1_beta, "smooth-L1 transition point");
  app.add_option("--weight-coarse", c.weight_coarse, "weight of stride 8/16 heads");
  app.add_option("--weight-mid", c.weight_mid, "weight of stride 4 heads");
  app.add_option("--weight-final", c.weight_final, "weight of the refined output");
  app.add_option("--lr", c.lr, "initial learning rate");
  app.add_option("--weight-decay", c.weight_decay, "decoupled weight decay");
  app.add_option("--beta1", c.beta1);
  app.add_option("--beta2", c.beta2);
  app.add_option("--adam-eps", c.adam_eps);
  app.add_option("--batch", c.batch, "crops per iteration");
  app.add_option("--iterations", c.iterations, "training iterations");
  app.add_option("--crop-height", c.crop_height);
  app.add_option("--crop-width", c.crop_width);
  app.add_option("--random-crop", c.random_crop);
  app.add_option("--vertical-flip", c.vertical_flip);
}

URNet load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  URNet net(cfg.model(), cfg.seed);
  load_weights(net, checkpoint);
  return net;
}

Tensor stacks_for(const EventFile& f, std::uint64_t t_end, const RunConfig& cfg) {
  const std::vector<Event> events = filter_window(f.events, 0, t_end);
  const EventStack s = build_multi_density(events, cfg.window, cfg.scales, f.width, f.height);
  return s.grid.reshape({1, cfg.scales, f.height, f.width});
}

void write_stack_images(const fs::path& dir, const std::string& stem, const Tensor& stacks) {
  const std::size_t M = stacks.dim(1), H = stacks.dim(2), W = stacks.dim(3);
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<std::uint8_t> rgb(H * W * 3, 0);
    for (std::size_t i = 0; i < H * W; ++i) {
      const double v = stacks.data()[m * H * W + i];
      if (v > 0) rgb[3 * i] = 255;
      if (v < 0) rgb[3 * i + 2] = 255;
    }
    write_png_rgb(dir / (stem + "_scale" + std::to_string(m) + ".png"), W, H, rgb);
  }
}

// Top-level settings only, so the file can be replayed with --config.
std::string run_config_text(const CLI::App& app) {
  std::istringstream in(app.config_to_str(true, false));
  std::string line, out;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.find('.') < eq || line.rfind("out-dir=", 0) == 0) continue;
    out += line + "\n";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-stereo disparity estimation at desk scale"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "key=value configuration file");

  RunConfig cfg;
  fs::path out_dir = "runs";
  app.add_option("--seed", cfg.seed, "seed for weights, data and sampling");
  app.add_option("--out-dir", out_dir, "output directory");
  add_run_options(app, cfg);

  // synth
  SceneParams scene;
  std::size_t train_count = 20, test_count = 5;
  auto* synth = app.add_subcommand("synth", "generate a synthetic stereo-event dataset");
  synth->add_option("--train-scenes", train_count);
  synth->add_option("--test-scenes", test_count);
  synth->add_option("--scene-width", scene.width);
  synth->add_option("--scene-height", scene.height);
  synth->add_option("--foreground-planes", scene.foreground_planes);
  synth->add_option("--min-plane-disparity", scene.min_plane_disparity);
  synth->add_option("--max-plane-disparity", scene.max_plane_disparity);
  synth->add_option("--frames", scene.frames);
  synth->add_option("--frame-interval-us", scene.frame_interval_us);

  // train
  fs::path data_dir;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "train from scratch on <data>/train");
  train_cmd->add_option("--data", data_dir, "dataset root")->required();
  train_cmd->add_flag("--quiet", quiet, "suppress progress lines");

  // eval
  fs::path checkpoint;
  bool no_images = false;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on <data>/test");
  eval_cmd->add_option("--data", data_dir, "dataset root")->required();
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_flag("--no-images", no_images, "write metrics only");

  // infer
  fs::path left_path, right_path, scene_dir;
  std::uint64_t stride_us = 0;
  std::size_t max_windows = 1;
  auto* infer_cmd = app.add_subcommand("infer", "predict disparity for event windows");
  infer_cmd->add_option("--left", left_path, "left EVT1 file")->check(CLI::ExistingFile);
  infer_cmd->add_option("--right", right_path, "right EVT1 file")->check(CLI::ExistingFile);
  infer_cmd->add_option("--scene", scene_dir, "scene directory holding left.evt and right.evt")
      ->check(CLI::ExistingDirectory);
  infer_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--stride-us", stride_us, "spacing of window end times, 0 for the last window only");
  infer_cmd->add_option("--max-windows", max_windows);

  // gradcheck
  std::string module = "all";
  double tolerance = 1e-4;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  std::vector<std::string> choices = grad_suite_modules();
  choices.push_back("all");
  grad_cmd->add_option("--module", module)->check(CLI::IsMember(choices));
  grad_cmd->add_option("--tolerance", tolerance);

  // viz
  fs::path png_path;
  double viz_max = 0.0;
  auto* viz_cmd = app.add_subcommand("viz", "colour-map a disparity PNG or render a scene's inputs");
  viz_cmd->add_option("--png", png_path, "16-bit disparity PNG")->check(CLI::ExistingFile);
  viz_cmd->add_option("--scene", scene_dir, "scene directory")->check(CLI::ExistingDirectory);
  viz_cmd->add_option("--max", viz_max, "colour scale maximum, default max disparity");

  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    cfg.validate();
    fs::create_directories(out_dir);

    if (*synth) {
      scene.max_disparity = cfg.max_disparity;
      generate_dataset(out_dir, scene, train_count, test_count, cfg.seed);
      std::cout << "wrote " << train_count << " train and " << test_count << " test scenes to " << out_dir << "\n";
    } else if (*train_cmd) {
      std::ofstream(out_dir / "config.ini") << run_config_text(app);
      const std::vector<Sample> data = load_split(data_dir / "train", cfg.window, cfg.scales);
      const TrainResult r = train(cfg, data, out_dir, quiet ? nullptr : &std::cout);
      std::cout << "final loss " << r.losses.back() << "\ncheckpoint " << r.checkpoint.string() << "\n";
    } else if (*eval_cmd) {
      URNet net = load_model(cfg, checkpoint);
      const std::vector<Sample> data = load_split(data_dir / "test", cfg.window, cfg.scales);
      const EvalResult r = evaluate(net, data, {out_dir, !no_images});
      std::vector<std::pair<std::string, MetricReport>> rows;
      for (const SampleResult& s : r.samples) rows.emplace_back(s.name, s.refined);
      rows.emplace_back("mean", r.refined);
      rows.emplace_back("mean (coarse)", r.initial);
      std::cout << to_table(rows);
    } else if (*infer_cmd) {
      if (!scene_dir.empty()) {
        left_path = scene_dir / "left.evt";
        right_path = scene_dir / "right.evt";
      }
      if (left_path.empty() || right_path.empty())
        throw std::invalid_argument("infer needs --scene or both --left and --right");
      const EventFile left = load_evt1(left_path), right = load_evt1(right_path);
      if (left.width != right.width || left.height != right.height)
        throw std::invalid_argument("left and right sensors differ in resolution");
      if (left.events.empty()) throw std::invalid_argument("left stream holds no events");
      URNet net = load_model(cfg, checkpoint);
      const auto ends =
          window_end_times(left.events.front().t, left.events.back().t, stride_us, std::max<std::size_t>(max_windows, 1));
      for (std::uint64_t t : ends) {
        const Prediction p = predict(net, stacks_for(left, t, cfg), stacks_for(right, t, cfg));
        const std::string stem = "disparity_t" + std::to_string(t);
        write_prediction(out_dir, stem, p, Tensor(), static_cast<double>(cfg.max_disparity));
        std::cout << "wrote " << (out_dir / stem).string() << ".png\n";
      }
    } else if (*grad_cmd) {
      const auto reports = run_grad_suite(module, cfg.seed, tolerance);
      bool ok = true;
      for (const GradReport& r : reports) {
        std::printf("%-16s %-24s max_rel_err %.3e  entries %4zu  %s\n", r.module.c_str(), r.op.c_str(),
                    r.max_rel_error, r.checked, r.pass ? "ok" : "FAIL");
        ok = ok && r.pass;
      }
      return ok ? kOk : kValidation;
    } else if (*viz_cmd) {
      const double vmax = viz_max > 0 ? viz_max : static_cast<double>(cfg.max_disparity);
      if (!png_path.empty()) {
        const Image16 img = read_png16(png_path);
        std::vector<double> d(img.pixels.size()), valid(img.pixels.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
          d[i] = img.pixels[i] / 256.0;
          valid[i] = img.pixels[i] > 0 ? 1.0 : 0.0;
        }
        const Shape shape{1, 1, img.height, img.width};
        const fs::path out = out_dir / (png_path.stem().string() + "_color.png");
        write_png_rgb(out, img.width, img.height, colorize(Tensor::from(shape, d), Tensor::from(shape, valid), vmax));
        std::cout << "wrote " << out.string() << "\n";
      } else if (!scene_dir.empty()) {
        const Sample s = make_sample(scene_dir.filename().string(), load_scene(scene_dir), cfg.window, cfg.scales);
        write_stack_images(out_dir, "left", s.left);
        write_stack_images(out_dir, "right", s.right);
        write_png_rgb(out_dir / "gt_color.png", s.gt.disparity.dim(3), s.gt.disparity.dim(2),
                      colorize(s.gt.disparity, s.gt.valid, vmax));
        std::cout << "wrote stacks and ground truth to " << out_dir.string() << "\n";
      } else {
        throw std::invalid_argument("viz needs --png or --scene");
      }
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

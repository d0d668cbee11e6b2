#include "evs/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "evs/checkpoint.hpp"

namespace evs {

namespace {

using Rng = std::mt19937_64;

// Periodic random-dot texture shared by the frames of one plane.
struct Texture {
  std::size_t size = 0;
  std::vector<double> values;

  double at(long u, long v) const {
    const long n = static_cast<long>(size);
    const long uu = ((u % n) + n) % n, vv = ((v % n) + n) % n;
    return values[static_cast<std::size_t>(vv) * size + static_cast<std::size_t>(uu)];
  }
};

Texture make_texture(std::size_t size, double density, Rng& rng) {
  Texture t{size, std::vector<double>(size * size, 0.0)};
  std::uniform_real_distribution<double> pos(0.0, static_cast<double>(size));
  std::uniform_real_distribution<double> amp(0.5, 1.0);
  std::uniform_real_distribution<double> rad(0.8, 1.6);
  const auto dots = static_cast<std::size_t>(density * static_cast<double>(size * size));
  const long n = static_cast<long>(size);
  for (std::size_t k = 0; k < dots; ++k) {
    const double cx = pos(rng), cy = pos(rng), a = amp(rng), r = rad(rng);
    const long reach = static_cast<long>(std::ceil(3 * r));
    for (long dy = -reach; dy <= reach; ++dy)
      for (long dx = -reach; dx <= reach; ++dx) {
        const long px = static_cast<long>(std::floor(cx)) + dx, py = static_cast<long>(std::floor(cy)) + dy;
        const double ex = static_cast<double>(px) + 0.5 - cx, ey = static_cast<double>(py) + 0.5 - cy;
        const std::size_t idx = static_cast<std::size_t>(((py % n) + n) % n) * size +
                                static_cast<std::size_t>(((px % n) + n) % n);
        t.values[idx] += a * std::exp(-(ex * ex + ey * ey) / (2 * r * r));
      }
  }
  for (double& v : t.values) v = std::min(v, 1.0);
  return t;
}

bool covers(const Plane& p, long x, long y) {
  return x >= static_cast<long>(p.x0) && y >= static_cast<long>(p.y0) && x < static_cast<long>(p.x0 + p.width) &&
         y < static_cast<long>(p.y0 + p.height);
}

}  // namespace

SyntheticScene render_scene(const SceneParams& params, const std::vector<Plane>& planes, std::uint64_t seed) {
  const std::size_t W = params.width, H = params.height;
  if (W == 0 || H == 0 || W > 65535 || H > 65535) throw std::invalid_argument("synth: bad scene size");
  if (planes.empty()) throw std::invalid_argument("synth: need at least one plane");
  if (params.frame_interval_us == 0) throw std::invalid_argument("synth: frame interval must be positive");
  for (std::size_t i = 0; i < planes.size(); ++i) {
    const int d = planes[i].disparity;
    if (d < 0 || static_cast<std::size_t>(d) >= params.max_disparity) {
      throw std::invalid_argument("synth: plane disparity " + std::to_string(d) + " outside [0, " +
                                  std::to_string(params.max_disparity - 1) + "]");
    }
    if (i > 0 && d < planes[i - 1].disparity) throw std::invalid_argument("synth: planes must be ordered far to near");
  }

  Rng rng(seed);
  std::vector<Texture> textures;
  for (std::size_t i = 0; i < planes.size(); ++i) textures.push_back(make_texture(64, params.dot_density, rng));

  // Visible plane per pixel in each view; nearer planes are painted later.
  std::vector<int> owner_left(W * H, -1), owner_right(W * H, -1);
  for (std::size_t i = 0; i < planes.size(); ++i)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const long ly = static_cast<long>(y), lx = static_cast<long>(x);
        if (covers(planes[i], lx, ly)) owner_left[y * W + x] = static_cast<int>(i);
        if (covers(planes[i], lx + planes[i].disparity, ly)) owner_right[y * W + x] = static_cast<int>(i);
      }

  SyntheticScene scene;
  scene.planes = planes;
  scene.left.width = scene.right.width = static_cast<std::uint32_t>(W);
  scene.left.height = scene.right.height = static_cast<std::uint32_t>(H);
  scene.disparity.assign(W * H, 0.0);
  scene.valid.assign(W * H, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const int o = owner_left[y * W + x];
      if (o < 0) continue;
      const int d = planes[static_cast<std::size_t>(o)].disparity;
      scene.disparity[y * W + x] = d;
      scene.valid[y * W + x] = static_cast<long>(x) - d >= 0 ? 1.0 : 0.0;
    }

  auto intensity = [&](std::size_t x, std::size_t y, long f) {
    const int o = owner_left[y * W + x];
    if (o < 0) return 0.0;
    const Plane& p = planes[static_cast<std::size_t>(o)];
    const long u = static_cast<long>(x) - static_cast<long>(p.x0) - p.vx * f;
    const long v = static_cast<long>(y) - static_cast<long>(p.y0) - p.vy * f;
    return textures[static_cast<std::size_t>(o)].at(u, v);
  };

  // Events of one frame get jittered timestamps inside the frame interval, as
  // an asynchronous sensor would report them.
  std::uniform_int_distribution<std::uint64_t> jitter(0, params.frame_interval_us - 1);
  auto by_time = [](const Event& a, const Event& b) { return a.t < b.t; };
  for (std::size_t f = 1; f <= params.frames; ++f) {
    const std::size_t left_begin = scene.left.events.size(), right_begin = scene.right.events.size();
    const std::uint64_t t0 = (f - 1) * params.frame_interval_us;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        const double delta = intensity(x, y, static_cast<long>(f)) - intensity(x, y, static_cast<long>(f) - 1);
        if (std::abs(delta) <= params.contrast_threshold) continue;
        const Event e{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t0 + jitter(rng),
                      static_cast<std::int8_t>(delta > 0 ? 1 : -1)};
        scene.left.events.push_back(e);
        const int o = owner_left[y * W + x];
        const long xr = static_cast<long>(x) - planes[static_cast<std::size_t>(o)].disparity;
        if (xr >= 0 && owner_right[y * W + static_cast<std::size_t>(xr)] == o) {
          Event r = e;
          r.x = static_cast<std::uint16_t>(xr);
          scene.right.events.push_back(r);
        }
      }
    std::stable_sort(scene.left.events.begin() + static_cast<long>(left_begin), scene.left.events.end(), by_time);
    std::stable_sort(scene.right.events.begin() + static_cast<long>(right_begin), scene.right.events.end(), by_time);
  }
  return scene;
}

SyntheticScene generate_scene(const SceneParams& params, std::uint64_t seed) {
  if (params.min_plane_disparity < 0 || params.min_plane_disparity > params.max_plane_disparity ||
      static_cast<std::size_t>(params.max_plane_disparity) >= params.max_disparity) {
    throw std::invalid_argument("synth: plane disparity range must lie within [0, D-1]");
  }
  Rng rng(seed);
  std::uniform_int_distribution<int> disp(params.min_plane_disparity, params.max_plane_disparity);
  std::uniform_int_distribution<int> vel(-1, 1);
  auto motion = [&](Plane& p) {
    do {
      p.vx = vel(rng);
      p.vy = vel(rng);
    } while (p.vx == 0 && p.vy == 0);
  };

  std::vector<int> disparities;
  for (std::size_t i = 0; i <= params.foreground_planes; ++i) disparities.push_back(disp(rng));
  std::sort(disparities.begin(), disparities.end());

  std::vector<Plane> planes;
  Plane background{0, 0, params.width, params.height, disparities[0]};
  motion(background);
  planes.push_back(background);
  const std::size_t min_side = std::max<std::size_t>(params.width / 5, 4);
  const std::size_t max_side = std::max(min_side, params.width / 2);
  std::uniform_int_distribution<std::size_t> side(min_side, max_side);
  for (std::size_t i = 1; i <= params.foreground_planes; ++i) {
    Plane p;
    p.width = std::min(side(rng), params.width);
    p.height = std::min(side(rng), params.height);
    p.x0 = std::uniform_int_distribution<std::size_t>(0, params.width - p.width)(rng);
    p.y0 = std::uniform_int_distribution<std::size_t>(0, params.height - p.height)(rng);
    p.disparity = disparities[i];
    motion(p);
    planes.push_back(p);
  }
  return render_scene(params, planes, rng());
}

GroundTruth ground_truth(const SyntheticScene& scene) {
  const Shape s{1, 1, scene.left.height, scene.left.width};
  return {Tensor::from(s, scene.disparity), Tensor::from(s, scene.valid)};
}

void save_scene(const std::filesystem::path& dir, const SyntheticScene& scene) {
  std::filesystem::create_directories(dir);
  save_evt1(dir / "left.evt", scene.left);
  save_evt1(dir / "right.evt", scene.right);
  const GroundTruth gt = ground_truth(scene);
  save_checkpoint(dir / "gt.evsk", {{"disparity", gt.disparity}, {"valid", gt.valid}});
}

SyntheticScene load_scene(const std::filesystem::path& dir) {
  SyntheticScene s;
  s.left = load_evt1(dir / "left.evt");
  s.right = load_evt1(dir / "right.evt");
  if (s.left.width != s.right.width || s.left.height != s.right.height) {
    throw EventError("scene " + dir.string() + ": left and right sensor sizes differ");
  }
  const Shape want{1, 1, s.left.height, s.left.width};
  for (const NamedTensor& t : load_checkpoint(dir / "gt.evsk")) {
    if (t.tensor.shape() != want) throw FormatError("scene " + dir.string() + ": ground truth has the wrong size");
    std::vector<double> v(t.tensor.data().begin(), t.tensor.data().end());
    if (t.name == "disparity") s.disparity = std::move(v);
    if (t.name == "valid") s.valid = std::move(v);
  }
  if (s.disparity.empty() || s.valid.empty()) throw FormatError("scene " + dir.string() + ": incomplete ground truth");
  return s;
}

void generate_dataset(const std::filesystem::path& dir, const SceneParams& params, std::size_t train_count,
                      std::size_t test_count, std::uint64_t seed) {
  Rng rng(seed);
  auto emit = [&](const char* split, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "scene_%04zu", i);
      save_scene(dir / split / name, generate_scene(params, rng()));
    }
  };
  emit("train", train_count);
  emit("test", test_count);
}

}  // namespace evs

#include "evs/events.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "evs/binary_io.hpp"

namespace evs {

void validate_events(std::span<const Event> events, std::size_t width, std::size_t height) {
  std::uint64_t last_t = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw EventError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                       ") lies outside " + std::to_string(width) + "x" + std::to_string(height));
    }
    if (e.p != 1 && e.p != -1) {
      throw EventError("event " + std::to_string(i) + " has polarity " + std::to_string(e.p));
    }
    if (i > 0 && e.t < last_t) throw EventError("timestamps decrease at event " + std::to_string(i));
    last_t = e.t;
  }
}

std::vector<Event> filter_window(std::span<const Event> events, std::uint64_t t_min, std::uint64_t t_max) {
  std::vector<Event> out;
  std::copy_if(events.begin(), events.end(), std::back_inserter(out),
               [&](const Event& e) { return e.t >= t_min && e.t < t_max; });
  return out;
}

Tensor stack_by_number(std::span<const Event> events, std::size_t n, std::size_t width, std::size_t height) {
  if (n == 0) throw EventError("stack_by_number: n must be >= 1");
  Tensor grid = Tensor::zeros({1, height, width});
  auto g = grid.data();
  const std::size_t take = std::min(n, events.size());
  for (const Event& e : events.subspan(events.size() - take)) {
    if (e.x >= width || e.y >= height) throw EventError("stack_by_number: event outside the grid");
    g[static_cast<std::size_t>(e.y) * width + e.x] = static_cast<double>(e.p);
  }
  return grid;
}

EventStack build_multi_density(std::span<const Event> events, std::size_t window, std::size_t scales,
                               std::size_t width, std::size_t height) {
  if (scales == 0) throw EventError("build_multi_density: need at least one scale");
  if (scales > 63 || window < (std::size_t{1} << (scales - 1))) {
    throw EventError("build_multi_density: window " + std::to_string(window) + " too small for " +
                     std::to_string(scales) + " halving scales");
  }
  EventStack stack;
  stack.window_length = window;
  stack.grid = Tensor::zeros({scales, height, width});
  const std::size_t plane = height * width;
  for (std::size_t m = 0; m < scales; ++m) {
    const std::size_t n = window >> m;
    Tensor s = stack_by_number(events, n, width, height);
    std::copy(s.data().begin(), s.data().end(), stack.grid.data().begin() + m * plane);
    stack.densities.push_back(n);
    stack.events_used.push_back(std::min(n, events.size()));
  }
  return stack;
}

std::vector<std::uint64_t> window_end_times(std::uint64_t t_begin, std::uint64_t t_end, std::uint64_t stride_us,
                                            std::size_t max_windows) {
  std::vector<std::uint64_t> ends{t_end};
  if (stride_us == 0) return ends;
  while (ends.size() < max_windows && ends.back() >= t_begin + stride_us) ends.push_back(ends.back() - stride_us);
  return ends;
}

Concentrator::Concentrator(std::size_t scales, std::size_t channels, nn::Rng& rng)
    : conv(scales, channels, 1, rng) {}

Tensor concentrate(const EventStack& stack, const Concentrator& net) {
  const auto& s = stack.grid.shape();
  return net.forward(stack.grid.reshape({1, s[0], s[1], s[2]}));
}

namespace {

struct Layout {
  std::size_t planes, h, w;
};

Layout layout_of(const Tensor& t) {
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2)};
  if (t.rank() == 4) return {t.dim(0) * t.dim(1), t.dim(2), t.dim(3)};
  throw ShapeError("expected a [C,H,W] or [B,C,H,W] tensor, got " + shape_str(t.shape()));
}

Shape with_hw(const Tensor& t, std::size_t h, std::size_t w) {
  Shape s = t.shape();
  s[s.size() - 2] = h;
  s[s.size() - 1] = w;
  return s;
}

}  // namespace

Tensor crop(const Tensor& t, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  const Layout l = layout_of(t);
  if (top + height > l.h || left + width > l.w) {
    throw ShapeError("crop window exceeds " + std::to_string(l.h) + "x" + std::to_string(l.w));
  }
  Tensor out = Tensor::zeros(with_hw(t, height, width));
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < l.planes; ++p)
    for (std::size_t y = 0; y < height; ++y)
      std::copy_n(src.begin() + (p * l.h + top + y) * l.w + left, width, dst.begin() + (p * height + y) * width);
  return out;
}

Tensor flip_vertical(const Tensor& t) {
  const Layout l = layout_of(t);
  Tensor out = Tensor::zeros(t.shape());
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < l.planes; ++p)
    for (std::size_t y = 0; y < l.h; ++y)
      std::copy_n(src.begin() + (p * l.h + y) * l.w, l.w, dst.begin() + (p * l.h + (l.h - 1 - y)) * l.w);
  return out;
}

Tensor pad_bottom_right(const Tensor& t, std::size_t height, std::size_t width) {
  const Layout l = layout_of(t);
  if (height < l.h || width < l.w) throw ShapeError("pad target smaller than input");
  Tensor out = Tensor::zeros(with_hw(t, height, width));
  auto src = t.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < l.planes; ++p)
    for (std::size_t y = 0; y < l.h; ++y)
      std::copy_n(src.begin() + (p * l.h + y) * l.w, l.w, dst.begin() + (p * height + y) * width);
  return out;
}

std::size_t round_up(std::size_t v, std::size_t multiple) { return (v + multiple - 1) / multiple * multiple; }

namespace {
constexpr char kEvtMagic[4] = {'E', 'V', 'T', '1'};
}

void write_evt1(std::ostream& os, const EventFile& file) {
  os.write(kEvtMagic, 4);
  io::put_le<std::uint32_t>(os, file.width);
  io::put_le<std::uint32_t>(os, file.height);
  io::put_le<std::uint64_t>(os, file.events.size());
  for (const Event& e : file.events) {
    io::put_le<std::uint16_t>(os, e.x);
    io::put_le<std::uint16_t>(os, e.y);
    io::put_le<std::int8_t>(os, e.p);
    io::put_le<std::uint8_t>(os, 0);
    io::put_le<std::uint64_t>(os, e.t);
  }
  if (!os) throw EventError("EVT1 write failed");
}

EventFile read_evt1(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kEvtMagic, 4) != 0) throw EventError("not an EVT1 stream");
  EventFile f;
  f.width = io::require_le<std::uint32_t, EventError>(is, "width");
  f.height = io::require_le<std::uint32_t, EventError>(is, "height");
  const auto count = io::require_le<std::uint64_t, EventError>(is, "count");
  f.events.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 24)));
  for (std::uint64_t i = 0; i < count; ++i) {
    Event e;
    e.x = io::require_le<std::uint16_t, EventError>(is, "x");
    e.y = io::require_le<std::uint16_t, EventError>(is, "y");
    e.p = io::require_le<std::int8_t, EventError>(is, "p");
    io::require_le<std::uint8_t, EventError>(is, "pad");
    e.t = io::require_le<std::uint64_t, EventError>(is, "t");
    f.events.push_back(e);
  }
  validate_events(f.events, f.width, f.height);
  return f;
}

void save_evt1(const std::filesystem::path& path, const EventFile& file) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw EventError("cannot open " + path.string() + " for writing");
  write_evt1(os, file);
}

EventFile load_evt1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw EventError("cannot open " + path.string());
  return read_evt1(is);
}

std::vector<Event> read_event_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) return {};
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x,y,t,p") throw EventError("CSV header must be 'x,y,t,p', got '" + line + "'");
  std::vector<Event> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    long long fields[4];
    const char* p = line.data();
    const char* end = line.data() + line.size();
    for (int k = 0; k < 4; ++k) {
      auto [next, ec] = std::from_chars(p, end, fields[k]);
      if (ec != std::errc{} || (k < 3 && (next == end || *next != ','))) {
        throw EventError("malformed CSV event on line " + std::to_string(lineno));
      }
      p = next + (k < 3 ? 1 : 0);
    }
    if (fields[0] < 0 || fields[1] < 0 || fields[2] < 0 || fields[0] > 65535 || fields[1] > 65535) {
      throw EventError("CSV event out of range on line " + std::to_string(lineno));
    }
    if (fields[3] != 1 && fields[3] != -1) throw EventError("CSV polarity must be +1/-1 on line " + std::to_string(lineno));
    out.push_back({static_cast<std::uint16_t>(fields[0]), static_cast<std::uint16_t>(fields[1]),
                   static_cast<std::uint64_t>(fields[2]), static_cast<std::int8_t>(fields[3])});
  }
  return out;
}

}  // namespace evs

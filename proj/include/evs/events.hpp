#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include "evs/nn.hpp"
#include "evs/tensor.hpp"

namespace evs {

struct Event {
  std::uint16_t x = 0;  // column
  std::uint16_t y = 0;  // row
  std::uint64_t t = 0;  // microseconds
  std::int8_t p = 1;    // +1 or -1

  bool operator==(const Event&) const = default;
};

class EventError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checks coordinates, polarity and timestamp ordering.
void validate_events(std::span<const Event> events, std::size_t width, std::size_t height);

/// Events with t_min <= t < t_max, order preserved.
std::vector<Event> filter_window(std::span<const Event> events, std::uint64_t t_min, std::uint64_t t_max);

/// [1,H,W] grid from the last min(n, size) events. Cells start at 0 and each
/// event overwrites its pixel with its polarity, so the latest event wins.
Tensor stack_by_number(std::span<const Event> events, std::size_t n, std::size_t width, std::size_t height);

struct EventStack {
  Tensor grid;                          // [M,H,W]
  std::size_t window_length = 0;        // N
  std::vector<std::size_t> densities;   // floor(N / 2^m), strictly decreasing
  std::vector<std::size_t> events_used; // min(densities[m], available)
};

/// Scale m stacks the most recent floor(N / 2^m) events, m = 0..M-1.
EventStack build_multi_density(std::span<const Event> events, std::size_t window, std::size_t scales,
                               std::size_t width, std::size_t height);

/// End timestamps for windows walking back from t_end in steps of stride_us
/// (the frame-skip interval); stride 0 yields the single window ending at t_end.
std::vector<std::uint64_t> window_end_times(std::uint64_t t_begin, std::uint64_t t_end, std::uint64_t stride_us,
                                            std::size_t max_windows);

/// Learnable 1x1 conv + SiLU mapping the M stack channels to C0 channels.
class Concentrator {
 public:
  Concentrator() = default;
  Concentrator(std::size_t scales, std::size_t channels, nn::Rng& rng);

  /// stacks: [B,M,H,W] -> [B,C0,H,W]
  Tensor forward(const Tensor& stacks) const { return silu(conv.forward(stacks)); }
  void collect(nn::Registry& r, const std::string& prefix) const { conv.collect(r, prefix + ".conv"); }

  nn::Conv2d conv;
};

/// Single-stack convenience: [M,H,W] -> [1,C0,H,W].
Tensor concentrate(const EventStack& stack, const Concentrator& net);

// Layout helpers for [C,H,W] / [B,C,H,W] tensors outside the tape.
Tensor crop(const Tensor& t, std::size_t top, std::size_t left, std::size_t height, std::size_t width);
Tensor flip_vertical(const Tensor& t);
Tensor pad_bottom_right(const Tensor& t, std::size_t height, std::size_t width);
std::size_t round_up(std::size_t v, std::size_t multiple);

// EVT1: "EVT1", u32 width, u32 height, u64 count, then count records of
// {u16 x, u16 y, i8 p, u8 pad, u64 t_us}, little-endian.
struct EventFile {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<Event> events;
};

void write_evt1(std::ostream& os, const EventFile& file);
EventFile read_evt1(std::istream& is);
void save_evt1(const std::filesystem::path& path, const EventFile& file);
EventFile load_evt1(const std::filesystem::path& path);

/// CSV fixture reader: header "x,y,t,p", one event per line.
std::vector<Event> read_event_csv(std::istream& is);

}  // namespace evs

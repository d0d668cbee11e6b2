#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "evs/events.hpp"
#include "evs/gradcheck.hpp"

using namespace evs;

namespace {

std::vector<Event> random_stream(std::size_t count, std::size_t w, std::size_t h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Event> out;
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < count; ++i) {
    t += rng() % 5;
    out.push_back({static_cast<std::uint16_t>(rng() % w), static_cast<std::uint16_t>(rng() % h), t,
                   static_cast<std::int8_t>(rng() % 2 ? 1 : -1)});
  }
  return out;
}

// Replays events one by one into a dense grid.
std::vector<double> replay(const std::vector<Event>& events, std::size_t n, std::size_t w, std::size_t h) {
  std::vector<double> grid(w * h, 0.0);
  const std::size_t start = events.size() > n ? events.size() - n : 0;
  for (std::size_t i = start; i < events.size(); ++i) grid[events[i].y * w + events[i].x] = events[i].p;
  return grid;
}

}  // namespace

TEST(FilterWindow, EmptyStream) { EXPECT_TRUE(filter_window({}, 0, 100).empty()); }

TEST(FilterWindow, AllInsideIsIdentity) {
  const auto ev = random_stream(50, 8, 8, 1);
  EXPECT_EQ(filter_window(ev, 0, ev.back().t + 1), ev);
}

TEST(FilterWindow, MatchesLinearScan) {
  const auto ev = random_stream(300, 8, 8, 2);
  const std::uint64_t lo = ev[40].t, hi = ev[200].t;
  std::vector<Event> expected;
  for (const Event& e : ev)
    if (e.t >= lo && e.t < hi) expected.push_back(e);
  EXPECT_EQ(filter_window(ev, lo, hi), expected);
}

TEST(StackByNumber, NoEventsIsZero) {
  Tensor g = stack_by_number({}, 4, 5, 3);
  ASSERT_EQ(g.shape(), (Shape{1, 3, 5}));
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(StackByNumber, SingleEventAtColumnTwoRowThree) {
  std::vector<Event> ev{{2, 3, 10, 1}};
  Tensor g = stack_by_number(ev, 1, 5, 4);
  for (std::size_t i = 0; i < g.numel(); ++i) EXPECT_EQ(g.data()[i], i == 3 * 5 + 2 ? 1.0 : 0.0);
}

TEST(StackByNumber, LastWriteWins) {
  std::vector<Event> ev{{1, 1, 0, -1}, {1, 1, 5, 1}};
  EXPECT_EQ(stack_by_number(ev, 2, 3, 3).data()[4], 1.0);
}

TEST(StackByNumber, MatchesReplayAndStaysTernary) {
  const auto ev = random_stream(500, 9, 7, 3);
  for (std::size_t n : {1, 17, 128, 500, 2000}) {
    Tensor g = stack_by_number(ev, n, 9, 7);
    const auto expect = replay(ev, n, 9, 7);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      EXPECT_EQ(g.data()[i], expect[i]);
      EXPECT_TRUE(g.data()[i] == 0.0 || g.data()[i] == 1.0 || g.data()[i] == -1.0);
    }
  }
}

TEST(StackByNumber, IdempotentUnderReingestion) {
  const auto ev = random_stream(100, 6, 6, 4);
  Tensor a = stack_by_number(ev, 60, 6, 6);
  Tensor b = stack_by_number(ev, 60, 6, 6);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST(StackByNumber, RejectsZeroCount) { EXPECT_THROW(stack_by_number({}, 0, 2, 2), EventError); }

TEST(MultiDensity, HalvingSchedule) {
  const auto ev = random_stream(20, 4, 4, 5);
  EventStack s = build_multi_density(ev, 8, 3, 4, 4);
  EXPECT_EQ(s.densities, (std::vector<std::size_t>{8, 4, 2}));
  EXPECT_EQ(s.grid.shape(), (Shape{3, 4, 4}));
}

TEST(MultiDensity, SingleScaleEqualsStackByNumber) {
  const auto ev = random_stream(200, 8, 8, 6);
  EventStack s = build_multi_density(ev, 64, 1, 8, 8);
  Tensor ref = stack_by_number(ev, 64, 8, 8);
  EXPECT_TRUE(std::equal(ref.data().begin(), ref.data().end(), s.grid.data().begin()));
}

TEST(MultiDensity, EachScaleMatchesReplay) {
  const auto ev = random_stream(400, 8, 6, 7);
  EventStack s = build_multi_density(ev, 256, 4, 8, 6);
  for (std::size_t m = 0; m < 4; ++m) {
    const auto expect = replay(ev, 256 >> m, 8, 6);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(s.grid.data()[m * 48 + i], expect[i]);
  }
}

TEST(MultiDensity, FewerEventsThanWindow) {
  const auto ev = random_stream(5, 4, 4, 8);
  EventStack s = build_multi_density(ev, 64, 3, 4, 4);
  EXPECT_EQ(s.events_used, (std::vector<std::size_t>{5, 5, 5}));
}

TEST(MultiDensity, WindowTooSmallForScales) { EXPECT_THROW(build_multi_density({}, 3, 3, 4, 4), EventError); }

TEST(WindowEndTimes, WalksBackByStride) {
  EXPECT_EQ(window_end_times(0, 1000, 300, 10), (std::vector<std::uint64_t>{1000, 700, 400, 100}));
  EXPECT_EQ(window_end_times(0, 1000, 0, 10), (std::vector<std::uint64_t>{1000}));
  EXPECT_EQ(window_end_times(0, 1000, 100, 2).size(), 2u);
}

TEST(Concentrate, ZeroStackZeroBiasGivesZero) {
  nn::Rng rng(1);
  Concentrator net(3, 5, rng);
  for (double& b : net.conv.bias.data()) b = 0.0;
  EventStack s = build_multi_density({}, 8, 3, 4, 4);
  Tensor y = concentrate(s, net);
  ASSERT_EQ(y.shape(), (Shape{1, 5, 4, 4}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Concentrate, IdentityWeightsGiveSilu) {
  nn::Rng rng(1);
  Concentrator net(3, 3, rng);
  auto w = net.conv.weight.data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  std::fill(net.conv.bias.data().begin(), net.conv.bias.data().end(), 0.0);
  EventStack s = build_multi_density(random_stream(100, 6, 5, 9), 64, 3, 6, 5);
  Tensor y = concentrate(s, net);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double x = s.grid.data()[i];
    EXPECT_DOUBLE_EQ(y.data()[i], x / (1.0 + std::exp(-x)));
  }
}

TEST(Concentrate, WeightGradcheck) {
  nn::Rng rng(2);
  Concentrator net(3, 4, rng);
  Tensor stacks = build_multi_density(random_stream(200, 6, 6, 10), 64, 3, 6, 6).grid.reshape({1, 3, 6, 6});
  auto r = gradcheck(
      [&](const std::vector<Tensor>& in) {
        return random_projection(silu(conv2d(stacks, in[0], in[1])), 3);
      },
      {net.conv.weight.clone(), net.conv.bias.clone()});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Layout, CropFlipPad) {
  Tensor t = Tensor::from({1, 3, 4}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  Tensor c = crop(t, 1, 1, 2, 2);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{5, 6, 9, 10}));
  Tensor f = flip_vertical(t);
  EXPECT_EQ(f.data()[0], 8.0);
  EXPECT_EQ(f.data()[8], 0.0);
  Tensor p = pad_bottom_right(t, 4, 5);
  EXPECT_EQ(p.shape(), (Shape{1, 4, 5}));
  EXPECT_EQ(p.data()[5 + 1], 5.0);
  EXPECT_EQ(p.data()[19], 0.0);
  EXPECT_EQ(round_up(33, 16), 48u);
  EXPECT_THROW(crop(t, 2, 0, 2, 2), ShapeError);
}

TEST(Evt1, RoundTrip) {
  EventFile f{9, 7, random_stream(64, 9, 7, 11)};
  std::stringstream ss;
  write_evt1(ss, f);
  EXPECT_EQ(ss.str().size(), 4 + 4 + 4 + 8 + 64 * 14u);
  EventFile g = read_evt1(ss);
  EXPECT_EQ(g.width, 9u);
  EXPECT_EQ(g.height, 7u);
  EXPECT_EQ(g.events, f.events);
}

TEST(Evt1, RejectsBadMagicTruncationAndBadPolarity) {
  std::stringstream bad("EVT2xxxxxxxx");
  EXPECT_THROW(read_evt1(bad), EventError);

  EventFile f{4, 4, random_stream(3, 4, 4, 12)};
  std::stringstream ss;
  write_evt1(ss, f);
  std::string s = ss.str();
  std::stringstream cut(s.substr(0, s.size() - 3));
  EXPECT_THROW(read_evt1(cut), EventError);

  s[4 + 4 + 4 + 8 + 4] = 3;  // polarity of the first record
  std::stringstream pol(s);
  EXPECT_THROW(read_evt1(pol), EventError);
}

TEST(Evt1, RejectsOutOfBoundsEvent) {
  EventFile f{4, 4, {{4, 0, 0, 1}}};
  std::stringstream ss;
  write_evt1(ss, f);
  EXPECT_THROW(read_evt1(ss), EventError);
}

TEST(Csv, ParsesFixture) {
  std::istringstream is("x,y,t,p\n1,2,30,1\n3,0,31,-1\n");
  const auto ev = read_event_csv(is);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[1], (Event{3, 0, 31, -1}));
}

TEST(Csv, RejectsBadHeaderAndRows) {
  std::istringstream header("x,y,p,t\n");
  EXPECT_THROW(read_event_csv(header), EventError);
  std::istringstream row("x,y,t,p\n1,2,3\n");
  EXPECT_THROW(read_event_csv(row), EventError);
  std::istringstream pol("x,y,t,p\n1,2,3,0\n");
  EXPECT_THROW(read_event_csv(pol), EventError);
}

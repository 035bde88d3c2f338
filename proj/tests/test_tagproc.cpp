#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "bellsim/error.hpp"
#include "bellsim/tagproc.hpp"

using namespace bellsim;
using namespace bellsim::tags;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "bellsim_tag_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string raw_header(std::uint16_t version = 1) {
  std::string h(32, '\0');
  std::memcpy(h.data(), "PTAG", 4);
  std::memcpy(h.data() + 4, &version, 2);
  const std::uint16_t div = 10;
  std::memcpy(h.data() + 6, &div, 2);
  const std::uint64_t period = kDefaultRepPeriodDecips;
  std::memcpy(h.data() + 8, &period, 8);
  for (int i = 0; i < 5; ++i) h[16 + i] = static_cast<char>(i);
  return h;
}

std::string raw_record(std::uint64_t t, std::uint8_t ch) {
  std::string r(12, '\0');
  std::memcpy(r.data(), &t, 8);
  r[8] = static_cast<char>(ch);
  return r;
}

void dump(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

std::string expect_io_error(const fs::path& p) {
  try {
    read_tags(p);
  } catch (const IoError& e) {
    return e.what();
  }
  return "";
}

TagRecord rec(std::uint64_t t, Channel c) { return {t, static_cast<std::uint8_t>(c)}; }

}  // namespace

TEST_CASE("binary record round trip") {
  const auto p = scratch("one.ptag");
  write_tags(p, TagFileHeader{}, {TagRecord{1000, 1}});
  CHECK(fs::file_size(p) == kHeaderBytes + kRecordBytes);
  const auto back = read_tags(p);
  REQUIRE(back.size() == 1);
  CHECK(back[0] == TagRecord{1000, 1});

  std::ifstream in(p, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes.substr(0, 4) == "PTAG");
  CHECK(bytes.substr(32) == raw_record(1000, 1));
}

TEST_CASE("large stream round trip in binary and CSV") {
  std::mt19937_64 rng(1);
  std::vector<TagRecord> recs;
  std::uint64_t t = 0;
  for (int i = 0; i < 300000; ++i) {
    t += rng() % 5000;
    recs.push_back({t, static_cast<std::uint8_t>(rng() % 5)});
  }
  TagFileHeader h;
  h.channel_map = {9, 3, 4, 1, 2};
  write_tags(scratch("big.ptag"), h, recs);
  CHECK(read_tags(scratch("big.ptag")) == recs);
  TagReader r(scratch("big.ptag"));
  REQUIRE(r.header());
  CHECK(r.header()->channel_map == h.channel_map);
  CHECK(r.header()->rep_period_ps() == doctest::Approx(12391.6));

  write_tags(scratch("big.csv"), h, recs);
  CHECK(detect_format(scratch("big.csv")) == TagFormat::kCsv);
  CHECK(read_tags(scratch("big.csv")) == recs);
}

TEST_CASE("channel map translates on-disk codes") {
  TagFileHeader h;
  h.channel_map = {7, 6, 5, 4, 3};
  const auto p = scratch("mapped.ptag");
  write_tags(p, h, {TagRecord{5, 1}});
  std::ifstream in(p, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(static_cast<int>(bytes[32 + 8]) == 6);
  CHECK(read_tags(p)[0].channel == 1);
}

TEST_CASE("empty streams") {
  dump(scratch("header_only.ptag"), raw_header());
  CHECK(read_tags(scratch("header_only.ptag")).empty());
  dump(scratch("zero.ptag"), "");
  CHECK(read_tags(scratch("zero.ptag")).empty());
  const auto r = reduce_file(scratch("zero.ptag"), WindowSpec{});
  CHECK(r.counts == CountsTable{});
}

TEST_CASE("malformed files name the failure position") {
  dump(scratch("magic.ptag"), "PTAX" + raw_header().substr(4));
  CHECK(expect_io_error(scratch("magic.ptag")).find("bad magic") != std::string::npos);

  dump(scratch("version.ptag"), raw_header(2));
  CHECK(expect_io_error(scratch("version.ptag")).find("version") != std::string::npos);

  dump(scratch("short_header.ptag"), raw_header().substr(0, 20));
  CHECK(expect_io_error(scratch("short_header.ptag")).find("truncated header") != std::string::npos);

  dump(scratch("truncated.ptag"), raw_header() + raw_record(10, 1) + raw_record(20, 1).substr(0, 7));
  CHECK(expect_io_error(scratch("truncated.ptag")).find("byte offset 44") != std::string::npos);

  dump(scratch("chan7.ptag"), raw_header() + raw_record(10, 1) + raw_record(20, 7));
  const auto e = expect_io_error(scratch("chan7.ptag"));
  CHECK(e.find("unknown channel 7") != std::string::npos);
  CHECK(e.find("byte offset 44") != std::string::npos);

  dump(scratch("regress.ptag"), raw_header() + raw_record(100, 1) + raw_record(200, 1) + raw_record(150, 2));
  const auto r = expect_io_error(scratch("regress.ptag"));
  CHECK(r.find("timestamp regression") != std::string::npos);
  CHECK(r.find("byte offset 56") != std::string::npos);

  dump(scratch("bad.csv"), "time_ps,channel\n10,1\n5,2\n");
  CHECK(expect_io_error(scratch("bad.csv")).find("line 3") != std::string::npos);

  CHECK_THROWS_AS(read_tags(scratch("does_not_exist.ptag")), IoError);
}

TEST_CASE("window reduction hand traces") {
  const WindowSpec w{0, 1000};

  auto single = window_reduce({rec(0, Channel::kSync), rec(10, Channel::kAPlus), rec(12392, Channel::kSync)}, w);
  CHECK(single.counts.singles_Ap == 1);
  CHECK(single.counts.post_selected() == 0);
  CHECK(single.counts.reps == 2);

  auto pair = window_reduce({rec(0, Channel::kSync), rec(10, Channel::kAPlus), rec(20, Channel::kBPlus)}, w);
  CHECK(pair.counts.n_pp == 1);

  auto late = window_reduce({rec(0, Channel::kSync), rec(1500, Channel::kAPlus)}, w);
  CHECK(late.counts.singles_Ap == 0);
  CHECK(late.clicks_outside_window == 1);

  // Window edges are inclusive.
  auto edge = window_reduce({rec(5000, Channel::kSync), rec(7000, Channel::kAMinus), rec(9000, Channel::kBMinus),
                             rec(9001, Channel::kBPlus)},
                            WindowSpec{3000, 1000});
  CHECK(edge.counts.n_mm == 1);
  CHECK(edge.clicks_outside_window == 1);

  auto early = window_reduce({rec(3, Channel::kAPlus), rec(5, Channel::kSync)}, w);
  CHECK(early.clicks_before_first_sync == 1);
  CHECK(early.counts.singles_Ap == 0);

  auto multi = window_reduce({rec(0, Channel::kSync), rec(3000, Channel::kAPlus), rec(3001, Channel::kAMinus),
                              rec(3002, Channel::kBMinus)},
                             WindowSpec{});
  CHECK(multi.counts.n_bothA_m == 1);
}

TEST_CASE("header-period binning without sync records") {
  const WindowSpec w{3000, 1000};
  // Repetition 2 starts at 24783.2 ps.
  const std::vector<TagRecord> recs{rec(27783, Channel::kAPlus), rec(27790, Channel::kBMinus),
                                    rec(3000 + 49566, Channel::kBPlus)};
  const auto r = window_reduce(recs, w, SyncMode::kHeaderPeriod);
  CHECK(r.mode_used == SyncMode::kHeaderPeriod);
  CHECK(r.counts.n_pm == 1);
  CHECK(r.counts.singles_Bp == 1);
  CHECK(r.counts.reps == 5);

  WindowReducer red(w, SyncMode::kAuto, kDefaultRepPeriodDecips, 10);
  red.feed(recs.data(), recs.size());
  const auto a = red.finish(100);
  CHECK(a.mode_used == SyncMode::kHeaderPeriod);
  CHECK(a.counts.reps == 100);
  CHECK(a.counts.n_pm == 1);
}

TEST_CASE("reduction merges across chunks split at syncs") {
  std::mt19937_64 rng(5);
  ExperimentPlan plan;
  std::vector<TagRecord> recs;
  for (std::uint64_t k = 0; k < 20000; ++k) {
    const auto s = plan.sync_time(k);
    recs.push_back({s, 0});
    std::vector<TagRecord> clicks;
    for (std::uint8_t ch = 1; ch <= 4; ++ch) {
      if (rng() % 3 == 0) clicks.push_back({s + 2500 + rng() % 1000, ch});
    }
    std::sort(clicks.begin(), clicks.end(), [](auto& a, auto& b) { return a.time_ps < b.time_ps; });
    recs.insert(recs.end(), clicks.begin(), clicks.end());
  }
  const auto whole = window_reduce(recs, WindowSpec{});
  std::size_t cut = recs.size() / 2;
  while (recs[cut].channel != 0) ++cut;
  auto first = window_reduce({recs.begin(), recs.begin() + cut}, WindowSpec{}).counts;
  first += window_reduce({recs.begin() + cut, recs.end()}, WindowSpec{}).counts;
  CHECK(first == whole.counts);
  CHECK(whole.counts.reps == 20000);
}

TEST_CASE("g2 from counts") {
  CHECK(g2_from_counts(100, 100, 10, 10000) == doctest::Approx(10.0));
  CHECK(g2_from_counts(200, 50, 1, 10000) == doctest::Approx(1.0));
  CHECK_THROWS_AS(g2_from_counts(0, 100, 0, 10), NumericalError);
  CHECK_THROWS_AS(g2_from_counts(10, 100, 0, 0), NumericalError);
}

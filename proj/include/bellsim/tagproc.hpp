#pragma once

// Time-tag streams: the PTAG binary format, a CSV fallback, and the
// single-pass reduction of tags to coincidence tables.
//
// PTAG layout (little endian):
//   header, 32 bytes: "PTAG" | u16 version=1 | u16 period_divisor |
//                     u64 rep_period (units of 1/period_divisor ps) |
//                     u8 channel_map[5] | 11 reserved zero bytes
//   record, 12 bytes: u64 time_ps | u8 channel | u8 flags=0 | u16 reserved=0
// channel_map[i] is the on-disk channel code carrying logical channel i
// (0 sync, 1 A+, 2 A-, 3 B+, 4 B-).

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bellsim/core.hpp"

namespace bellsim::tags {

inline constexpr std::uint16_t kPtagVersion = 1;
inline constexpr std::size_t kHeaderBytes = 32;
inline constexpr std::size_t kRecordBytes = 12;

struct TagFileHeader {
  std::uint16_t version = kPtagVersion;
  std::uint16_t period_divisor = 10;
  std::uint64_t rep_period = kDefaultRepPeriodDecips;
  std::array<std::uint8_t, 5> channel_map{0, 1, 2, 3, 4};

  double rep_period_ps() const { return static_cast<double>(rep_period) / period_divisor; }
  static TagFileHeader from_plan(const ExperimentPlan& plan);
};

enum class TagFormat { kAuto, kBinary, kCsv };

/// Picks CSV for a ".csv" extension, binary otherwise.
TagFormat detect_format(const std::filesystem::path& path);

class TagSink {
 public:
  virtual ~TagSink() = default;
  virtual void write(const TagRecord& rec) = 0;
};

class TagWriter : public TagSink {
 public:
  /// Throws IoError if the file cannot be created.
  TagWriter(const std::filesystem::path& path, const TagFileHeader& header,
            TagFormat format = TagFormat::kAuto);
  ~TagWriter() override;
  TagWriter(const TagWriter&) = delete;
  TagWriter& operator=(const TagWriter&) = delete;

  void write(const TagRecord& rec) override;
  void close();
  std::uint64_t records_written() const { return written_; }

 private:
  void flush_buffer();

  std::FILE* file_ = nullptr;
  TagFormat format_;
  TagFileHeader header_;
  std::vector<unsigned char> buffer_;
  std::uint64_t written_ = 0;
};

/// Collects records in memory (tests, small streams).
class VectorSink : public TagSink {
 public:
  void write(const TagRecord& rec) override { records.push_back(rec); }
  std::vector<TagRecord> records;
};

class TagReader {
 public:
  /// Reads and validates the header. Throws IoError on open failure, bad magic
  /// or version.
  explicit TagReader(const std::filesystem::path& path, TagFormat format = TagFormat::kAuto);
  ~TagReader();
  TagReader(const TagReader&) = delete;
  TagReader& operator=(const TagReader&) = delete;

  /// Present for binary files only.
  const std::optional<TagFileHeader>& header() const { return header_; }

  /// Next record in file order. Throws IoError naming the byte offset (binary)
  /// or line (CSV) on a truncated record, unknown channel or time regression.
  bool next(TagRecord& out);

  /// Fast path: fills up to `max` records, returns the number read.
  std::size_t next_batch(TagRecord* out, std::size_t max);

 private:
  bool refill();
  bool next_csv(TagRecord& out);
  [[noreturn]] void fail(const std::string& what, std::uint64_t where) const;

  std::FILE* file_ = nullptr;
  TagFormat format_;
  std::optional<TagFileHeader> header_;
  std::array<int, 256> decode_{};
  std::vector<unsigned char> buffer_;
  std::size_t pos_ = 0;
  std::size_t len_ = 0;
  std::uint64_t offset_ = 0;  // byte offset of buffer_[0]
  std::uint64_t line_ = 0;
  std::uint64_t last_time_ = 0;
  bool eof_ = false;
};

std::vector<TagRecord> read_tags(const std::filesystem::path& path, TagFormat format = TagFormat::kAuto);
void write_tags(const std::filesystem::path& path, const TagFileHeader& header,
                const std::vector<TagRecord>& records, TagFormat format = TagFormat::kAuto);

struct WindowSpec {
  std::int64_t offset_ps = 3000;     // window centre relative to the sync
  std::int64_t halfwidth_ps = 1000;

  static WindowSpec from_plan(const ExperimentPlan& plan) {
    return {plan.bin_separation_ps, plan.window_halfwidth_ps};
  }
};

enum class SyncMode {
  kSyncChannel,   // repetitions start at sync records
  kHeaderPeriod,  // repetition k spans [k P, (k+1) P) from the stream period
  kAuto,          // sync records if any appear, else the period
};

struct ReduceReport {
  CountsTable counts;
  std::uint64_t syncs = 0;
  std::uint64_t clicks_in_window = 0;
  std::uint64_t clicks_outside_window = 0;
  std::uint64_t clicks_before_first_sync = 0;
  SyncMode mode_used = SyncMode::kSyncChannel;
};

/// Streaming reducer: feed records in time order, then finish().
class WindowReducer {
 public:
  WindowReducer(const WindowSpec& window, SyncMode mode, std::uint64_t period_num,
                std::uint32_t period_den);

  void feed(const TagRecord& rec);
  void feed(const TagRecord* recs, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) feed(recs[i]);
  }
  /// `expected_reps` pads trailing empty repetitions in header-period mode.
  ReduceReport finish(std::uint64_t expected_reps = 0);

 private:
  struct Binned {
    CountsTable counts;
    OutcomeClicks current;
    std::uint64_t index = 0;
    bool open = false;
    std::uint64_t in_window = 0, outside = 0;
  };

  void feed_sync_click(const TagRecord& rec);
  void feed_period_click(const TagRecord& rec);
  bool in_window(std::int64_t offset) const;
  static void mark(OutcomeClicks& c, std::uint8_t channel);

  WindowSpec window_;
  SyncMode mode_;
  std::uint64_t period_num_;
  std::uint32_t period_den_;

  // sync-channel state
  bool seen_sync_ = false;
  std::uint64_t sync_time_ = 0;
  OutcomeClicks current_;
  CountsTable counts_;
  std::uint64_t syncs_ = 0, in_window_ = 0, outside_ = 0, before_sync_ = 0;

  // header-period state (also the provisional result in auto mode)
  Binned period_;
};

ReduceReport window_reduce(const std::vector<TagRecord>& tags, const WindowSpec& window,
                           SyncMode mode = SyncMode::kSyncChannel,
                           std::uint64_t period_num = kDefaultRepPeriodDecips,
                           std::uint32_t period_den = 10);

/// Reduces a tag file; header-period fallback uses the file header (or the
/// supplied period for CSV).
ReduceReport reduce_file(const std::filesystem::path& path, const WindowSpec& window,
                         SyncMode mode = SyncMode::kAuto,
                         std::uint64_t period_num = kDefaultRepPeriodDecips,
                         std::uint32_t period_den = 10, std::uint64_t expected_reps = 0);

/// g2 = n_coinc R / (n_s n_a). Throws NumericalError on zero singles or reps.
double g2_from_counts(std::uint64_t n_s, std::uint64_t n_a, std::uint64_t n_coinc,
                      std::uint64_t reps);

/// g2 between Alice "+" and Bob "+" of a counts table.
double g2_from_counts(const CountsTable& counts);

}  // namespace bellsim::tags

#include "bellsim/tagproc.hpp"

#include <bit>
#include <charconv>
#include <cstring>

#include "bellsim/error.hpp"

static_assert(std::endian::native == std::endian::little, "PTAG I/O assumes a little-endian host");

namespace bellsim::tags {

namespace {

constexpr std::size_t kBufferBytes = 1 << 20;
constexpr char kMagic[4] = {'P', 'T', 'A', 'G'};

template <typename T>
T load(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void store(unsigned char* p, T v) {
  std::memcpy(p, &v, sizeof(T));
}

std::FILE* open_or_throw(const std::filesystem::path& path, const char* mode) {
  std::FILE* f = std::fopen(path.c_str(), mode);
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

TagFormat resolve(TagFormat format, const std::filesystem::path& path) {
  return format == TagFormat::kAuto ? detect_format(path) : format;
}

}  // namespace

TagFileHeader TagFileHeader::from_plan(const ExperimentPlan& plan) {
  TagFileHeader h;
  h.rep_period = plan.rep_period_num;
  h.period_divisor = static_cast<std::uint16_t>(plan.rep_period_den);
  return h;
}

TagFormat detect_format(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".csv" ? TagFormat::kCsv : TagFormat::kBinary;
}

// ---------------------------------------------------------------- writer

TagWriter::TagWriter(const std::filesystem::path& path, const TagFileHeader& header,
                     TagFormat format)
    : format_(resolve(format, path)), header_(header) {
  file_ = open_or_throw(path, "wb");
  buffer_.reserve(kBufferBytes + 64);
  if (format_ == TagFormat::kBinary) {
    unsigned char h[kHeaderBytes] = {};
    std::memcpy(h, kMagic, 4);
    store<std::uint16_t>(h + 4, header.version);
    store<std::uint16_t>(h + 6, header.period_divisor);
    store<std::uint64_t>(h + 8, header.rep_period);
    std::memcpy(h + 16, header.channel_map.data(), 5);
    buffer_.insert(buffer_.end(), h, h + kHeaderBytes);
  } else {
    const char* line = "time_ps,channel\n";
    buffer_.insert(buffer_.end(), line, line + std::strlen(line));
  }
}

TagWriter::~TagWriter() {
  try {
    close();
  } catch (...) {
  }
}

void TagWriter::write(const TagRecord& rec) {
  if (!file_) throw IoError("write to closed tag file");
  if (format_ == TagFormat::kBinary) {
    unsigned char r[kRecordBytes] = {};
    store<std::uint64_t>(r, rec.time_ps);
    r[8] = header_.channel_map.at(rec.channel);
    buffer_.insert(buffer_.end(), r, r + kRecordBytes);
  } else {
    char line[48];
    auto [end, ec] = std::to_chars(line, line + 32, rec.time_ps);
    *end++ = ',';
    end = std::to_chars(end, line + 46, static_cast<unsigned>(rec.channel)).ptr;
    *end++ = '\n';
    buffer_.insert(buffer_.end(), line, end);
  }
  ++written_;
  if (buffer_.size() >= kBufferBytes) flush_buffer();
}

void TagWriter::flush_buffer() {
  if (!buffer_.empty() && std::fwrite(buffer_.data(), 1, buffer_.size(), file_) != buffer_.size()) {
    throw IoError("short write to tag file");
  }
  buffer_.clear();
}

void TagWriter::close() {
  if (!file_) return;
  flush_buffer();
  const int rc = std::fclose(file_);
  file_ = nullptr;
  if (rc != 0) throw IoError("failed to close tag file");
}

// ---------------------------------------------------------------- reader

TagReader::TagReader(const std::filesystem::path& path, TagFormat format)
    : format_(resolve(format, path)) {
  file_ = open_or_throw(path, "rb");
  if (format_ == TagFormat::kCsv) return;

  buffer_.resize(kBufferBytes);
  unsigned char h[kHeaderBytes];
  const std::size_t got = std::fread(h, 1, kHeaderBytes, file_);
  if (got == 0) {
    // A zero-length file is an empty stream.
    eof_ = true;
    return;
  }
  if (got < kHeaderBytes) fail("truncated header", 0);
  if (std::memcmp(h, kMagic, 4) != 0) fail("bad magic", 0);
  TagFileHeader hd;
  hd.version = load<std::uint16_t>(h + 4);
  if (hd.version != kPtagVersion) fail("unsupported version " + std::to_string(hd.version), 4);
  hd.period_divisor = load<std::uint16_t>(h + 6);
  hd.rep_period = load<std::uint64_t>(h + 8);
  if (hd.period_divisor == 0 || hd.rep_period == 0) fail("repetition period must be > 0", 6);
  std::memcpy(hd.channel_map.data(), h + 16, 5);
  decode_.fill(-1);
  for (int i = 0; i < 5; ++i) {
    if (decode_[hd.channel_map[i]] != -1) fail("duplicate channel in channel map", 16);
    decode_[hd.channel_map[i]] = i;
  }
  header_ = hd;
  offset_ = kHeaderBytes;
}

TagReader::~TagReader() {
  if (file_) std::fclose(file_);
}

void TagReader::fail(const std::string& what, std::uint64_t where) const {
  if (format_ == TagFormat::kCsv) throw IoError("tag file line " + std::to_string(where) + ": " + what);
  throw IoError("tag file byte offset " + std::to_string(where) + ": " + what);
}

bool TagReader::refill() {
  if (eof_) return len_ > pos_;
  const std::size_t keep = len_ - pos_;
  std::memmove(buffer_.data(), buffer_.data() + pos_, keep);
  offset_ += pos_;
  pos_ = 0;
  len_ = keep;
  const std::size_t got = std::fread(buffer_.data() + keep, 1, buffer_.size() - keep, file_);
  len_ += got;
  if (got == 0) eof_ = true;
  return len_ > 0;
}

std::size_t TagReader::next_batch(TagRecord* out, std::size_t max) {
  if (format_ == TagFormat::kCsv) {
    std::size_t n = 0;
    while (n < max && next_csv(out[n])) ++n;
    return n;
  }
  std::size_t n = 0;
  while (n < max) {
    if (len_ - pos_ < kRecordBytes) {
      refill();
      if (len_ - pos_ < kRecordBytes) {
        if (len_ > pos_ && eof_) fail("truncated record", offset_ + pos_);
        if (eof_) break;
        continue;
      }
    }
    const unsigned char* p = buffer_.data() + pos_;
    const std::size_t avail = std::min((len_ - pos_) / kRecordBytes, max - n);
    for (std::size_t i = 0; i < avail; ++i, p += kRecordBytes) {
      const std::uint64_t t = load<std::uint64_t>(p);
      const int ch = decode_[p[8]];
      if (ch < 0) {
        fail("unknown channel " + std::to_string(p[8]),
             offset_ + static_cast<std::uint64_t>(p - buffer_.data()));
      }
      if (t < last_time_) {
        fail("timestamp regression", offset_ + static_cast<std::uint64_t>(p - buffer_.data()));
      }
      last_time_ = t;
      out[n].time_ps = t;
      out[n].channel = static_cast<std::uint8_t>(ch);
      ++n;
    }
    pos_ += avail * kRecordBytes;
  }
  return n;
}

bool TagReader::next(TagRecord& out) {
  if (format_ == TagFormat::kCsv) return next_csv(out);
  return next_batch(&out, 1) == 1;
}

bool TagReader::next_csv(TagRecord& out) {
  char line[256];
  while (std::fgets(line, sizeof line, file_)) {
    ++line_;
    const std::size_t len = std::strcspn(line, "\r\n");
    if (len == 0 || line[0] == '#') continue;
    if (line[0] < '0' || line[0] > '9') {
      if (line_ == 1) continue;  // column header
      fail("malformed line", line_);
    }
    const char* end = line + len;
    std::uint64_t t = 0;
    unsigned ch = 0;
    auto r1 = std::from_chars(line, end, t);
    if (r1.ec != std::errc() || r1.ptr == end || *r1.ptr != ',') fail("malformed line", line_);
    const char* cstart = r1.ptr + 1;
    while (cstart < end && *cstart == ' ') ++cstart;
    auto r2 = std::from_chars(cstart, end, ch);
    if (r2.ec != std::errc()) fail("malformed line", line_);
    if (ch > 4) fail("unknown channel " + std::to_string(ch), line_);
    if (t < last_time_) fail("timestamp regression", line_);
    last_time_ = t;
    out.time_ps = t;
    out.channel = static_cast<std::uint8_t>(ch);
    return true;
  }
  if (std::ferror(file_)) throw IoError("read error in tag file");
  return false;
}

std::vector<TagRecord> read_tags(const std::filesystem::path& path, TagFormat format) {
  TagReader reader(path, format);
  std::vector<TagRecord> out;
  TagRecord rec;
  while (reader.next(rec)) out.push_back(rec);
  return out;
}

void write_tags(const std::filesystem::path& path, const TagFileHeader& header,
                const std::vector<TagRecord>& records, TagFormat format) {
  TagWriter writer(path, header, format);
  for (const auto& r : records) writer.write(r);
  writer.close();
}

// ---------------------------------------------------------------- reduction

WindowReducer::WindowReducer(const WindowSpec& window, SyncMode mode, std::uint64_t period_num,
                             std::uint32_t period_den)
    : window_(window), mode_(mode), period_num_(period_num), period_den_(period_den) {
  if (window.halfwidth_ps <= 0) throw ConfigError("window.halfwidth_ps", "must be > 0");
  if (period_num == 0 || period_den == 0) throw ConfigError("rep_period", "must be > 0");
}

void WindowReducer::mark(OutcomeClicks& c, std::uint8_t channel) {
  switch (static_cast<Channel>(channel)) {
    case Channel::kAPlus: c.a_plus = true; break;
    case Channel::kAMinus: c.a_minus = true; break;
    case Channel::kBPlus: c.b_plus = true; break;
    case Channel::kBMinus: c.b_minus = true; break;
    case Channel::kSync: break;
  }
}

bool WindowReducer::in_window(std::int64_t offset) const {
  const std::int64_t d = offset - window_.offset_ps;
  return d >= -window_.halfwidth_ps && d <= window_.halfwidth_ps;
}

void WindowReducer::feed(const TagRecord& rec) {
  if (rec.channel > 4) throw IoError("unknown channel " + std::to_string(rec.channel));
  if (rec.channel == 0) {
    if (mode_ == SyncMode::kHeaderPeriod) return;
    if (seen_sync_) {
      counts_.record(current_);
      current_ = {};
    }
    seen_sync_ = true;
    sync_time_ = rec.time_ps;
    ++syncs_;
    return;
  }
  if (mode_ == SyncMode::kHeaderPeriod) {
    feed_period_click(rec);
    return;
  }
  if (!seen_sync_) {
    ++before_sync_;
    if (mode_ == SyncMode::kAuto) feed_period_click(rec);
    return;
  }
  feed_sync_click(rec);
}

void WindowReducer::feed_sync_click(const TagRecord& rec) {
  const auto offset = static_cast<std::int64_t>(rec.time_ps - sync_time_);
  if (in_window(offset)) {
    mark(current_, rec.channel);
    ++in_window_;
  } else {
    ++outside_;
  }
}

void WindowReducer::feed_period_click(const TagRecord& rec) {
  // Exact rational arithmetic in units of 1/period_den ps.
  const auto scaled = static_cast<unsigned __int128>(rec.time_ps) * period_den_;
  const auto k = static_cast<std::uint64_t>(scaled / period_num_);
  const auto rem = static_cast<__int128>(scaled - static_cast<unsigned __int128>(k) * period_num_);
  const __int128 d = rem - static_cast<__int128>(window_.offset_ps) * period_den_;
  const __int128 hw = static_cast<__int128>(window_.halfwidth_ps) * period_den_;

  Binned& b = period_;
  if (!b.open) {
    b.counts.reps += k;
    b.open = true;
    b.index = k;
  } else if (k != b.index) {
    b.counts.record(b.current);
    b.current = {};
    b.counts.reps += k - b.index - 1;
    b.index = k;
  }
  if (d >= -hw && d <= hw) {
    mark(b.current, rec.channel);
    ++b.in_window;
  } else {
    ++b.outside;
  }
}

ReduceReport WindowReducer::finish(std::uint64_t expected_reps) {
  ReduceReport out;
  const bool use_sync =
      mode_ == SyncMode::kSyncChannel || (mode_ == SyncMode::kAuto && seen_sync_);
  if (use_sync) {
    if (seen_sync_) {
      counts_.record(current_);
      current_ = {};
      seen_sync_ = false;
    }
    out.counts = counts_;
    out.syncs = syncs_;
    out.clicks_in_window = in_window_;
    out.clicks_outside_window = outside_;
    out.clicks_before_first_sync = before_sync_;
    out.mode_used = SyncMode::kSyncChannel;
    return out;
  }
  Binned& b = period_;
  if (b.open) {
    b.counts.record(b.current);
    b.current = {};
    b.open = false;
  }
  if (b.counts.reps < expected_reps) b.counts.reps = expected_reps;
  out.counts = b.counts;
  out.clicks_in_window = b.in_window;
  out.clicks_outside_window = b.outside;
  out.mode_used = SyncMode::kHeaderPeriod;
  return out;
}

ReduceReport window_reduce(const std::vector<TagRecord>& tags, const WindowSpec& window,
                           SyncMode mode, std::uint64_t period_num, std::uint32_t period_den) {
  WindowReducer reducer(window, mode, period_num, period_den);
  reducer.feed(tags.data(), tags.size());
  return reducer.finish();
}

ReduceReport reduce_file(const std::filesystem::path& path, const WindowSpec& window,
                         SyncMode mode, std::uint64_t period_num, std::uint32_t period_den,
                         std::uint64_t expected_reps) {
  TagReader reader(path);
  if (reader.header()) {
    period_num = reader.header()->rep_period;
    period_den = reader.header()->period_divisor;
  }
  WindowReducer reducer(window, mode, period_num, period_den);
  std::vector<TagRecord> batch(1 << 16);
  while (const std::size_t n = reader.next_batch(batch.data(), batch.size())) {
    reducer.feed(batch.data(), n);
  }
  return reducer.finish(expected_reps);
}

double g2_from_counts(std::uint64_t n_s, std::uint64_t n_a, std::uint64_t n_coinc,
                      std::uint64_t reps) {
  if (reps == 0) throw NumericalError("g2: zero repetitions");
  if (n_s == 0 || n_a == 0) throw NumericalError("g2: zero singles");
  return static_cast<double>(n_coinc) * static_cast<double>(reps) /
         (static_cast<double>(n_s) * static_cast<double>(n_a));
}

double g2_from_counts(const CountsTable& c) {
  return g2_from_counts(c.singles_Ap, c.singles_Bp, c.plus_plus_coincidences(), c.reps);
}

}  // namespace bellsim::tags

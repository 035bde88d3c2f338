#include "bellsim/mc_sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include "bellsim/error.hpp"
#include "bellsim/rng.hpp"

namespace bellsim::mc {

namespace {

constexpr std::uint64_t kPatternPurpose = 0;
constexpr std::uint64_t kJitterPurpose = 1;

// Pattern source for one (setting, delay) run.
class CellSampler {
 public:
  CellSampler(const Settings& settings, const analytic::MeasurementModel& model,
              const SimOptions& opts, const PatternDistribution* forced)
      : sampling_(forced ? PhaseSampling::kMixture : opts.sampling) {
    if (sampling_ == PhaseSampling::kMixture || model.sigma == 0.0) {
      sampling_ = PhaseSampling::kMixture;
      const PatternDistribution d = forced ? *forced : analytic::pattern_probs_avg(settings, model);
      double p_click = 0.0;
      for (int k = 1; k < 16; ++k) {
        p_click += d.p[k];
        cdf_[k] = p_click;
      }
      p_click_ = p_click;
      if (p_click > 0.0) {
        for (int k = 1; k < 16; ++k) cdf_[k] /= p_click;
      }
      log_no_click_ = std::log1p(-std::min(p_click, 1.0));
      return;
    }
    const int n = std::max(opts.phase_grid_points, 2);
    lo_ = -opts.phase_grid_span * model.sigma;
    step_ = 2.0 * opts.phase_grid_span * model.sigma / (n - 1);
    sigma_ = model.sigma;
    grid_.reserve(n);
    for (int i = 0; i < n; ++i) {
      grid_.push_back(analytic::pattern_probs_fixed_phase(settings, model, lo_ + step_ * i).p);
    }
  }

  template <typename Visit>
  void run_block(PhiloxStream& rng, std::uint64_t first, std::uint64_t len, Visit&& visit) const {
    if (sampling_ == PhaseSampling::kMixture) {
      if (!(p_click_ > 0.0)) return;
      std::uint64_t pos = 0;
      while (true) {
        const double gap = std::floor(std::log(rng.uniform_pos()) / log_no_click_);
        if (!(gap < static_cast<double>(len - pos))) break;
        pos += static_cast<std::uint64_t>(gap);
        const double v = rng.uniform();
        int k = 1;
        while (k < 15 && cdf_[k] <= v) ++k;
        visit(first + pos, ClickPattern(static_cast<std::uint8_t>(k)));
        ++pos;
      }
      return;
    }
    const int last = static_cast<int>(grid_.size()) - 1;
    for (std::uint64_t r = 0; r < len; ++r) {
      const double phi = sigma_ * rng.normal_pair()[0];
      const double x = std::clamp((phi - lo_) / step_, 0.0, static_cast<double>(last));
      const int i = std::min(static_cast<int>(x), last - 1);
      const double w = x - i;
      std::array<double, 16> p{};
      double total = 0.0;
      for (int k = 0; k < 16; ++k) {
        p[k] = (1.0 - w) * grid_[i][k] + w * grid_[i + 1][k];
        total += p[k];
      }
      double v = rng.uniform() * total;
      int k = 0;
      while (k < 15 && v >= p[k]) v -= p[k++];
      if (k != 0) visit(first + r, ClickPattern(static_cast<std::uint8_t>(k)));
    }
  }

 private:
  PhaseSampling sampling_;
  std::array<double, 16> cdf_{};
  double p_click_ = 0.0;
  double log_no_click_ = 0.0;
  double lo_ = 0.0, step_ = 0.0, sigma_ = 0.0;
  std::vector<std::array<double, 16>> grid_;
};

CellSampler make_sampler(const ExperimentPlan& plan, const PhysicsParams& params,
                         std::size_t setting_index, std::size_t delay_index,
                         const SimOptions& opts, const PatternDistribution* forced) {
  if (setting_index >= plan.settings_list.size() || delay_index >= plan.delays_ps.size()) {
    throw ConfigError("plan", "setting or delay index out of range");
  }
  const auto model = analytic::MeasurementModel::at_delay(params, plan.delays_ps[delay_index]);
  return CellSampler(plan.settings_list[setting_index], model, opts, forced);
}

void add_scaled(CountsTable& out, const CountsTable& one, std::uint64_t n) {
  out.n_pp += n * one.n_pp;
  out.n_pm += n * one.n_pm;
  out.n_mp += n * one.n_mp;
  out.n_mm += n * one.n_mm;
  out.n_bothA_p += n * one.n_bothA_p;
  out.n_bothA_m += n * one.n_bothA_m;
  out.n_bothB_p += n * one.n_bothB_p;
  out.n_bothB_m += n * one.n_bothB_m;
  out.n_bothAB += n * one.n_bothAB;
  out.singles_Ap += n * one.singles_Ap;
  out.singles_Am += n * one.singles_Am;
  out.singles_Bp += n * one.singles_Bp;
  out.singles_Bm += n * one.singles_Bm;
  out.reps += n * one.reps;
}

std::uint8_t channel_of(Detector d, const DetectorMap& map) {
  if (d == map.alice_plus) return static_cast<std::uint8_t>(Channel::kAPlus);
  if (d == map.alice_minus) return static_cast<std::uint8_t>(Channel::kAMinus);
  if (d == map.bob_plus) return static_cast<std::uint8_t>(Channel::kBPlus);
  return static_cast<std::uint8_t>(Channel::kBMinus);
}

}  // namespace

CountsTable counts_from_tally(const PatternTally& tally, const DetectorMap& map) {
  CountsTable out;
  for (int k = 0; k < 16; ++k) {
    if (tally[k] == 0) continue;
    CountsTable one;
    one.record(to_outcomes(ClickPattern(static_cast<std::uint8_t>(k)), map));
    add_scaled(out, one, tally[k]);
  }
  return out;
}

void for_each_click(const ExperimentPlan& plan, const PhysicsParams& params, std::uint64_t seed,
                    std::size_t setting_index, std::size_t delay_index, const SimOptions& opts,
                    const std::function<void(std::uint64_t, ClickPattern)>& visit,
                    const PatternDistribution* forced) {
  const CellSampler sampler = make_sampler(plan, params, setting_index, delay_index, opts, forced);
  const std::uint64_t key = derive_key(seed, setting_index, delay_index, kPatternPurpose);
  const std::uint64_t reps = plan.reps_per_setting;
  const std::uint64_t block = std::max<std::uint64_t>(opts.block_reps, 1);
  for (std::uint64_t b = 0; b * block < reps; ++b) {
    PhiloxStream rng(key, b);
    const std::uint64_t first = b * block;
    sampler.run_block(rng, first, std::min(block, reps - first), visit);
  }
}

SimOutcome simulate_counts(const ExperimentPlan& plan, const PhysicsParams& params,
                           std::uint64_t seed, const SimOptions& opts) {
  if (!opts.map.valid()) throw ConfigError("detector_map", "not a bijection onto each side");
  SimOutcome out;
  const std::uint64_t reps = plan.reps_per_setting;
  const std::uint64_t block = std::max<std::uint64_t>(opts.block_reps, 1);
  const std::uint64_t n_blocks = (reps + block - 1) / block;
  unsigned threads = opts.threads ? opts.threads : std::max(1U, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, std::max<std::uint64_t>(n_blocks, 1)));

  for (std::size_t s = 0; s < plan.settings_list.size(); ++s) {
    for (std::size_t d = 0; d < plan.delays_ps.size(); ++d) {
      const CellSampler sampler = make_sampler(plan, params, s, d, opts, nullptr);
      const std::uint64_t key = derive_key(seed, s, d, kPatternPurpose);

      std::vector<PatternTally> partial(threads, PatternTally{});
      std::atomic<std::uint64_t> next{0};
      auto worker = [&](unsigned w) {
        PatternTally& t = partial[w];
        for (std::uint64_t b = next++; b < n_blocks; b = next++) {
          PhiloxStream rng(key, b);
          const std::uint64_t first = b * block;
          sampler.run_block(rng, first, std::min(block, reps - first),
                            [&t](std::uint64_t, ClickPattern p) { ++t[p.index()]; });
        }
      };
      if (threads == 1) {
        worker(0);
      } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
        for (auto& th : pool) th.join();
      }

      SimCell cell;
      cell.setting_index = s;
      cell.delay_index = d;
      cell.settings = plan.settings_list[s];
      cell.delay_ps = plan.delays_ps[d];
      std::uint64_t clicked = 0;
      for (const auto& t : partial) {
        for (int k = 1; k < 16; ++k) {
          cell.tally[k] += t[k];
          clicked += t[k];
        }
      }
      cell.tally[0] = reps - clicked;
      cell.counts = counts_from_tally(cell.tally, opts.map);
      out.cells.push_back(cell);
    }
  }
  return out;
}

TagSimReport simulate_tags(const ExperimentPlan& plan, const PhysicsParams& params,
                           std::uint64_t seed, std::size_t setting_index, std::size_t delay_index,
                           tags::TagSink& sink, const TagSimOptions& opts) {
  if (!(opts.jitter_std_ps >= 0.0)) throw ConfigError("jitter_std_ps", "must be >= 0");
  if (!opts.sim.map.valid()) throw ConfigError("detector_map", "not a bijection onto each side");
  TagSimReport report;
  const std::uint64_t jitter_key = derive_key(seed, setting_index, delay_index, kJitterPurpose);
  std::uint64_t next_sync = 0;

  auto emit_syncs_through = [&](std::uint64_t rep) {
    if (!opts.emit_syncs) return;
    for (; next_sync <= rep && next_sync < plan.reps_per_setting; ++next_sync) {
      sink.write(TagRecord{plan.sync_time(next_sync), static_cast<std::uint8_t>(Channel::kSync)});
      ++report.syncs;
    }
  };

  auto visit = [&](std::uint64_t rep, ClickPattern pattern) {
    emit_syncs_through(rep);
    // Clicks stay inside their repetition under both sync-record and
    // header-period binning: [ceil(k P), round((k + 1) P) - 1].
    const auto scaled = static_cast<unsigned __int128>(rep) * plan.rep_period_num;
    const auto start = static_cast<double>(
        static_cast<std::uint64_t>((scaled + plan.rep_period_den - 1) / plan.rep_period_den));
    const auto stop = static_cast<double>(plan.sync_time(rep + 1)) - 1.0;
    PhiloxStream rng(jitter_key, rep);
    std::array<TagRecord, 4> clicks;
    int n = 0;
    for (int d = 0; d < 4; ++d) {
      const auto det = static_cast<Detector>(d);
      if (!pattern.clicked(det)) continue;
      double t = static_cast<double>(plan.sync_time(rep) + plan.bin_separation_ps);
      if (opts.jitter_std_ps > 0.0) t += opts.jitter_std_ps * rng.normal_pair()[0];
      t = std::clamp(std::round(t), start, stop);
      clicks[n++] = TagRecord{static_cast<std::uint64_t>(t), channel_of(det, opts.sim.map)};
    }
    std::sort(clicks.begin(), clicks.begin() + n, [](const TagRecord& a, const TagRecord& b) {
      return a.time_ps != b.time_ps ? a.time_ps < b.time_ps : a.channel < b.channel;
    });
    for (int i = 0; i < n; ++i) sink.write(clicks[i]);
    report.clicks += n;
  };

  for_each_click(plan, params, seed, setting_index, delay_index, opts.sim, visit, opts.forced);
  if (plan.reps_per_setting > 0) emit_syncs_through(plan.reps_per_setting - 1);
  report.records = report.syncs + report.clicks;
  return report;
}

}  // namespace bellsim::mc

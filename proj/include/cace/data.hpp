#pragma once

// Trial records, observed assignment/receipt patterns, and CSV ingestion.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "cace/errors.hpp"

namespace cace {

struct PatientRecord {
  std::string id;
  int z = 0;
  int d_obs = 0;
  std::optional<double> y_obs;
  double x = 0.0;
};

/// Which principal strata are compatible with an observed (z, d_obs) pair under monotonicity.
enum class ObservedPattern : int {
  KnownNeverTaker = 0,     // z=1, d=0
  KnownAlwaysTaker = 1,    // z=0, d=1
  MixtureControlArm = 2,   // z=0, d=0: complier or never-taker
  MixtureTreatedArm = 3,   // z=1, d=1: complier or always-taker
};

inline constexpr std::array<ObservedPattern, 4> kAllPatterns = {
    ObservedPattern::KnownNeverTaker, ObservedPattern::KnownAlwaysTaker,
    ObservedPattern::MixtureControlArm, ObservedPattern::MixtureTreatedArm};

inline constexpr std::size_t index_of(ObservedPattern p) noexcept { return static_cast<std::size_t>(p); }

inline constexpr ObservedPattern classify_observed_pattern(int z, int d_obs) noexcept {
  if (z == 0) return d_obs == 0 ? ObservedPattern::MixtureControlArm : ObservedPattern::KnownAlwaysTaker;
  return d_obs == 0 ? ObservedPattern::KnownNeverTaker : ObservedPattern::MixtureTreatedArm;
}

inline constexpr bool is_mixture(ObservedPattern p) noexcept {
  return p == ObservedPattern::MixtureControlArm || p == ObservedPattern::MixtureTreatedArm;
}

inline std::string_view to_string(ObservedPattern p) noexcept {
  switch (p) {
    case ObservedPattern::KnownNeverTaker: return "KnownNeverTaker";
    case ObservedPattern::KnownAlwaysTaker: return "KnownAlwaysTaker";
    case ObservedPattern::MixtureControlArm: return "MixtureControlArm";
    case ObservedPattern::MixtureTreatedArm: return "MixtureTreatedArm";
  }
  return "?";
}

/// Validated trial data. Immutable once built; record order is preserved.
class Dataset {
public:
  Dataset() = default;

  /// Validates the records and builds the pattern tables. `first_row` offsets error row numbers.
  static Dataset from_records(std::vector<PatientRecord> records, std::size_t first_row = 1) {
    Dataset ds;
    std::array<bool, 2> arm_seen{false, false};
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      const std::size_t row = first_row + i;
      if (r.z != 0 && r.z != 1) throw ValidationError(row, "z must be 0 or 1");
      if (r.d_obs != 0 && r.d_obs != 1) throw ValidationError(row, "d_obs must be 0 or 1");
      if (!std::isfinite(r.x)) throw ValidationError(row, "x must be finite");
      if (r.y_obs && !std::isfinite(*r.y_obs)) throw ValidationError(row, "y_obs must be finite when present");
      arm_seen[static_cast<std::size_t>(r.z)] = true;
      const ObservedPattern p = classify_observed_pattern(r.z, r.d_obs);
      ds.patterns_.push_back(p);
      ++ds.group_counts_[index_of(p)];
      if (!r.y_obs) {
        ++ds.missing_by_pattern_[index_of(p)];
        ++ds.missing_by_arm_[static_cast<std::size_t>(r.z)];
      }
    }
    if (!arm_seen[0] || !arm_seen[1]) {
      throw EmptyArmError(std::string("no records assigned to arm z=") + (arm_seen[0] ? "1" : "0"));
    }
    ds.records_ = std::move(records);
    return ds;
  }

  const std::vector<PatientRecord>& records() const noexcept { return records_; }
  const PatientRecord& operator[](std::size_t i) const noexcept { return records_[i]; }
  std::size_t size() const noexcept { return records_.size(); }
  ObservedPattern pattern(std::size_t i) const noexcept { return patterns_[i]; }

  std::size_t group_count(ObservedPattern p) const noexcept { return group_counts_[index_of(p)]; }
  std::size_t missing_count(ObservedPattern p) const noexcept { return missing_by_pattern_[index_of(p)]; }
  std::size_t missing_in_arm(int z) const noexcept { return missing_by_arm_[static_cast<std::size_t>(z)]; }

  std::size_t mixture_count() const noexcept {
    return group_count(ObservedPattern::MixtureControlArm) + group_count(ObservedPattern::MixtureTreatedArm);
  }

  /// Mean of the non-missing outcomes; NaN when every outcome is missing.
  double observed_outcome_mean() const noexcept {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : records_)
      if (r.y_obs) {
        s += *r.y_obs;
        ++n;
      }
    return n ? s / static_cast<double>(n) : std::nan("");
  }

  /// Sample variance (n-1) of the non-missing outcomes; NaN with fewer than two.
  double observed_outcome_variance() const noexcept {
    const double m = observed_outcome_mean();
    double ss = 0.0;
    std::size_t n = 0;
    for (const auto& r : records_)
      if (r.y_obs) {
        ss += (*r.y_obs - m) * (*r.y_obs - m);
        ++n;
      }
    return n > 1 ? ss / static_cast<double>(n - 1) : std::nan("");
  }

  double x_min() const noexcept {
    double v = HUGE_VAL;
    for (const auto& r : records_) v = std::min(v, r.x);
    return v;
  }
  double x_max() const noexcept {
    double v = -HUGE_VAL;
    for (const auto& r : records_) v = std::max(v, r.x);
    return v;
  }

private:
  std::vector<PatientRecord> records_;
  std::vector<ObservedPattern> patterns_;
  std::array<std::size_t, 4> group_counts_{};
  std::array<std::size_t, 4> missing_by_pattern_{};
  std::array<std::size_t, 2> missing_by_arm_{};
};

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long> parse_int(std::string_view s) {
  s = trim(s);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

inline constexpr std::string_view kDatasetHeader = "id,z,d_obs,y_obs,x";

/// Reads `id,z,d_obs,y_obs,x` CSV. An empty y_obs field means missing.
/// Error rows are 1-based data rows (the header is row 0).
inline Dataset ingest_dataset(std::istream& in) {
  std::string line;
  std::size_t row = 0;
  bool have_header = false;
  std::vector<PatientRecord> records;
  while (std::getline(in, line)) {
    std::string_view view = detail::trim(line);
    if (!have_header) {
      if (view.size() >= 3 && static_cast<unsigned char>(view[0]) == 0xEF) view.remove_prefix(3);  // BOM
      if (view.empty()) continue;
      if (view != kDatasetHeader) throw ParseError(0, "expected header '" + std::string(kDatasetHeader) + "'");
      have_header = true;
      continue;
    }
    ++row;
    if (view.empty()) continue;
    const auto fields = detail::split_csv_line(view);
    if (fields.size() != 5) throw ParseError(row, "expected 5 fields, got " + std::to_string(fields.size()));

    PatientRecord r;
    r.id = std::string(detail::trim(fields[0]));
    const auto z = detail::parse_int(fields[1]);
    const auto d = detail::parse_int(fields[2]);
    if (!z) throw ParseError(row, "z is not an integer");
    if (!d) throw ParseError(row, "d_obs is not an integer");
    if (*z != 0 && *z != 1) throw ValidationError(row, "z must be 0 or 1");
    if (*d != 0 && *d != 1) throw ValidationError(row, "d_obs must be 0 or 1");
    r.z = static_cast<int>(*z);
    r.d_obs = static_cast<int>(*d);
    if (!detail::trim(fields[3]).empty()) {
      r.y_obs = detail::parse_double(fields[3]);
      if (!r.y_obs) throw ParseError(row, "y_obs is not a number");
    }
    if (detail::trim(fields[4]).empty()) throw ValidationError(row, "x is missing");
    const auto x = detail::parse_double(fields[4]);
    if (!x) throw ParseError(row, "x is not a number");
    r.x = *x;
    records.push_back(std::move(r));
  }
  if (records.empty()) throw EmptyArmError("dataset has no records");
  return Dataset::from_records(std::move(records));
}

inline Dataset ingest_dataset_string(const std::string& text) {
  std::istringstream in(text);
  return ingest_dataset(in);
}

/// Writes records in ingestible form with full double precision.
inline void write_dataset(std::ostream& out, const std::vector<PatientRecord>& records) {
  out << kDatasetHeader << '\n';
  char buf[64];
  auto fmt = [&](double v) {
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
  };
  for (const auto& r : records) {
    out << r.id << ',' << r.z << ',' << r.d_obs << ',' << (r.y_obs ? fmt(*r.y_obs) : std::string()) << ','
        << fmt(r.x) << '\n';
  }
}

struct PatternSummary {
  ObservedPattern pattern{};
  std::size_t n = 0;
  std::optional<double> x_mean;
  std::optional<double> x_sd;
  std::size_t n_y = 0;
  std::optional<double> y_mean;
  std::optional<double> y_sd;
};

namespace detail {

struct MeanSd {
  std::size_t n = 0;
  double sum = 0.0;
  std::vector<double> values;
  void add(double v) {
    ++n;
    sum += v;
    values.push_back(v);
  }
  std::optional<double> mean() const {
    return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt;
  }
  std::optional<double> sd() const {
    if (n < 2) return std::nullopt;
    const double m = *mean();
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    return std::sqrt(ss / static_cast<double>(n - 1));
  }
};

}  // namespace detail

/// Per-pattern mean/SD of x over all records and of y over observed records (record order).
inline std::array<PatternSummary, 4> summarize_dataset(const Dataset& ds) {
  std::array<detail::MeanSd, 4> xs, ys;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto k = index_of(ds.pattern(i));
    xs[k].add(ds[i].x);
    if (ds[i].y_obs) ys[k].add(*ds[i].y_obs);
  }
  std::array<PatternSummary, 4> out;
  for (std::size_t k = 0; k < 4; ++k) {
    out[k].pattern = static_cast<ObservedPattern>(k);
    out[k].n = xs[k].n;
    out[k].x_mean = xs[k].mean();
    out[k].x_sd = xs[k].sd();
    out[k].n_y = ys[k].n;
    out[k].y_mean = ys[k].mean();
    out[k].y_sd = ys[k].sd();
  }
  return out;
}

}  // namespace cace

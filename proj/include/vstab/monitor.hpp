#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include "series.hpp"

namespace vstab {

enum class AlarmKind { onset, collapse_proximity, cleared };

inline const char* to_string(AlarmKind k) {
  switch (k) {
    case AlarmKind::onset: return "onset";
    case AlarmKind::collapse_proximity: return "collapse_proximity";
    case AlarmKind::cleared: return "cleared";
  }
  return "?";
}

struct AlarmEvent {
  AlarmKind kind;
  double axis_value;
  int bus;
  double pi2_value;
};

// Pi2 = dP / (-dPi1); flat denominators repeat the previous value
template <class Series>
IndexSeries ld_vsi(const Series& axis, const Series& p, const Series& pi1, const FilterConfig& cfg, int bus) {
  if (std::size(p) != std::size(axis) || std::size(pi1) != std::size(axis))
    throw DomainError("ld_vsi series are not aligned");
  IndexSeries out;
  out.kind = IndexKind::ld_vsi;
  auto dp = filtered_increment(p, cfg.window_samples);
  auto dpi = filtered_increment(pi1, cfg.window_samples);
  const std::size_t off = increment_offset(cfg.window_samples);
  double last = 0.0;
  for (std::size_t j = 0; j < dp.size(); ++j) {
    const bool flat = !(std::abs(dpi[j]) > cfg.epsilon_denominator);
    if (!flat) last = dp[j] / (-dpi[j]);
    out.push(axis[off + j], bus, last, flat);
  }
  return out;
}

inline std::vector<AlarmEvent> detect_onset(const IndexSeries& pi2, int hysteresis = 3, double collapse_threshold = -50.0) {
  std::vector<AlarmEvent> ev;
  int neg = 0, pos = 0;
  bool active = false, collapsed = false;
  for (std::size_t i = 0; i < pi2.size(); ++i) {
    const double v = pi2.value[i];
    if (std::isnan(v)) continue;
    if (v < 0.0) {
      ++neg;
      pos = 0;
    } else if (v > 0.0) {
      ++pos;
      neg = 0;
    } else {
      neg = pos = 0;
    }
    if (!active && neg >= hysteresis) {
      active = true;
      ev.push_back({AlarmKind::onset, pi2.axis[i], pi2.bus[i], v});
    }
    if (active && !collapsed && v < collapse_threshold) {
      collapsed = true;
      ev.push_back({AlarmKind::collapse_proximity, pi2.axis[i], pi2.bus[i], v});
    }
    if (active && pos >= hysteresis) {
      active = collapsed = false;
      ev.push_back({AlarmKind::cleared, pi2.axis[i], pi2.bus[i], v});
    }
  }
  return ev;
}

// axis positions where the series crosses from positive to negative, linearly interpolated
inline std::vector<double> sign_flips(const IndexSeries& s) {
  std::vector<double> out;
  for (std::size_t i = 1; i < s.size(); ++i) {
    const double a = s.value[i - 1], b = s.value[i];
    if (a > 0.0 && b < 0.0) out.push_back(s.axis[i - 1] + (s.axis[i] - s.axis[i - 1]) * a / (a - b));
  }
  return out;
}

inline void write_alarms(std::ostream& os, const std::vector<AlarmEvent>& ev) {
  os << "axis,bus,kind,pi2\n";
  for (const auto& e : ev)
    os << csv::num(e.axis_value) << ',' << e.bus << ',' << to_string(e.kind) << ',' << csv::num(e.pi2_value) << '\n';
}

}  // namespace vstab

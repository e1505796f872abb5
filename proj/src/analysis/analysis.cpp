// Copyright 2026 The arflow Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "arflow/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "arflow/ops.hpp"

namespace arflow {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw AnalysisError("cannot write " + path);
  out << std::setprecision(10);
  return out;
}

double population_variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  // Shifted by the first value so identical inputs give exactly 0.
  const double ref = v.front();
  double mean = 0.0;
  for (double x : v) mean += x - ref;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - ref - mean) * (x - ref - mean);
  return s / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> F0Contour::voiced() const {
  std::vector<double> v;
  for (double f : f0_hz)
    if (f > 0.0) v.push_back(f);
  return v;
}

double F0Contour::voiced_fraction() const {
  if (f0_hz.empty()) return 0.0;
  return static_cast<double>(voiced().size()) / static_cast<double>(f0_hz.size());
}

double F0Contour::median_voiced() const {
  auto v = voiced();
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

F0Contour yin_f0(const Waveform& wave, const YinConfig& cfg) {
  if (!(cfg.f_min > 0.0) || cfg.f_min >= cfg.f_max) throw AnalysisError("yin_f0: need 0 < f_min < f_max");
  const double sr = wave.sample_rate;
  const auto tau_min = static_cast<std::int64_t>(std::floor(sr / cfg.f_max));
  const auto tau_max = static_cast<std::int64_t>(std::ceil(sr / cfg.f_min));
  const std::int64_t window = cfg.frame_length - tau_max - 1;
  if (tau_min < 2 || window < tau_max) throw AnalysisError("yin_f0: frame too short for the F0 range");
  const auto n = static_cast<std::int64_t>(wave.samples.size());
  if (static_cast<double>(n) < 2.0 * sr / cfg.f_min) {
    throw AnalysisError("yin_f0: need at least " + std::to_string(static_cast<int>(2.0 * sr / cfg.f_min)) +
                        " samples, got " + std::to_string(n));
  }
  const std::int64_t pad = cfg.frame_length / 2;
  std::vector<double> x(static_cast<std::size_t>(n + 2 * pad));
  for (std::int64_t i = 0; i < n + 2 * pad; ++i) {
    std::int64_t src = i - pad;
    if (src < 0) src = -src;
    if (src >= n) src = 2 * (n - 1) - src;
    x[static_cast<std::size_t>(i)] = wave.samples[static_cast<std::size_t>(std::clamp<std::int64_t>(src, 0, n - 1))];
  }
  F0Contour out;
  out.hop_seconds = cfg.hop_length / sr;
  const std::int64_t frames = 1 + n / cfg.hop_length;
  std::vector<double> d(static_cast<std::size_t>(tau_max + 2)), cmnd(d.size());
  for (std::int64_t f = 0; f < frames; ++f) {
    const double* frame = x.data() + f * cfg.hop_length;
    double energy = 0.0;
    for (std::int64_t j = 0; j < window; ++j) energy += frame[j] * frame[j];
    for (std::int64_t tau = 1; tau <= tau_max + 1; ++tau) {
      double s = 0.0;
      for (std::int64_t j = 0; j < window; ++j) {
        const double e = frame[j] - frame[j + tau];
        s += e * e;
      }
      d[static_cast<std::size_t>(tau)] = s;
    }
    cmnd[0] = 1.0;
    double running = 0.0;
    for (std::int64_t tau = 1; tau <= tau_max + 1; ++tau) {
      running += d[static_cast<std::size_t>(tau)];
      cmnd[static_cast<std::size_t>(tau)] = running > 0.0 ? d[static_cast<std::size_t>(tau)] * tau / running : 1.0;
    }
    if (energy <= 1e-12) {
      out.f0_hz.push_back(0.0);
      out.harmonicity.push_back(1.0);
      continue;
    }
    std::int64_t best = -1;
    for (std::int64_t tau = tau_min; tau <= tau_max; ++tau) {
      if (cmnd[static_cast<std::size_t>(tau)] < cfg.harmonicity_threshold) {
        while (tau + 1 <= tau_max && cmnd[static_cast<std::size_t>(tau + 1)] < cmnd[static_cast<std::size_t>(tau)]) ++tau;
        best = tau;
        break;
      }
    }
    if (best < 0) {
      double mn = 1e300;
      for (std::int64_t tau = tau_min; tau <= tau_max; ++tau) mn = std::min(mn, cmnd[static_cast<std::size_t>(tau)]);
      out.f0_hz.push_back(0.0);
      out.harmonicity.push_back(mn);
      continue;
    }
    double refined = static_cast<double>(best);
    {
      const double a = d[static_cast<std::size_t>(best - 1)], b = d[static_cast<std::size_t>(best)],
                   c = d[static_cast<std::size_t>(best + 1)];
      const double denom = a - 2.0 * b + c;
      if (std::abs(denom) > 1e-12) refined += std::clamp(0.5 * (a - c) / denom, -1.0, 1.0);
    }
    const double f0 = sr / refined;
    if (f0 < cfg.f_min || f0 > cfg.f_max) {
      out.f0_hz.push_back(0.0);
    } else {
      out.f0_hz.push_back(f0);
    }
    out.harmonicity.push_back(cmnd[static_cast<std::size_t>(best)]);
  }
  return out;
}

DurationStats duration_stats(const std::vector<std::int64_t>& frame_counts, double hop_seconds) {
  if (frame_counts.empty()) throw AnalysisError("duration_stats: no samples");
  DurationStats s;
  for (auto f : frame_counts) s.seconds.push_back(static_cast<double>(f) * hop_seconds);
  s.mean = std::accumulate(s.seconds.begin(), s.seconds.end(), 0.0) / static_cast<double>(s.seconds.size());
  s.variance = population_variance(s.seconds);
  return s;
}

DurationStats duration_stats(const std::vector<MelSpectrogram>& samples) {
  if (samples.empty()) throw AnalysisError("duration_stats: no samples");
  std::vector<std::int64_t> frames;
  for (const auto& m : samples) frames.push_back(m.frames);
  return duration_stats(frames, samples[0].hop_seconds);
}

double f0_variance(const F0Contour& contour) { return population_variance(contour.voiced()); }

double f0_contour_variance(const std::vector<F0Contour>& contours) {
  std::int64_t longest = 0;
  for (const auto& c : contours) longest = std::max(longest, c.frames());
  double total = 0.0;
  std::int64_t used = 0;
  for (std::int64_t t = 0; t < longest; ++t) {
    std::vector<double> vals;
    for (const auto& c : contours) {
      if (t < c.frames() && c.f0_hz[static_cast<std::size_t>(t)] > 0.0) vals.push_back(c.f0_hz[static_cast<std::size_t>(t)]);
    }
    if (vals.size() < 2) continue;
    total += population_variance(vals);
    ++used;
  }
  return used ? total / static_cast<double>(used) : 0.0;
}

std::vector<RankedUtterance> f0_variance_rank(const std::vector<std::pair<std::string, F0Contour>>& contours) {
  std::vector<RankedUtterance> out;
  for (const auto& [id, c] : contours) {
    out.push_back({id, f0_variance(c), static_cast<std::int64_t>(c.voiced().size())});
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedUtterance& a, const RankedUtterance& b) {
    const bool av = a.voiced_frames > 0, bv = b.voiced_frames > 0;
    if (av != bv) return av;
    return a.f0_variance > b.f0_variance;
  });
  return out;
}

std::vector<RankedUtterance> top_f0_variance(const std::vector<std::pair<std::string, F0Contour>>& contours,
                                             std::size_t n) {
  auto ranked = f0_variance_rank(contours);
  ranked.resize(std::min(n, ranked.size()));
  return ranked;
}

std::int64_t AssignmentReport::dominant(std::size_t row) const {
  const auto& r = mean.at(row);
  return static_cast<std::int64_t>(std::max_element(r.begin(), r.end()) - r.begin());
}

template <typename T>
AssignmentReport assignment_report(const FlowModel<T>& model, const std::vector<LabeledUtterance>& utterances) {
  const auto& cfg = model.config();
  if (!cfg.prior.is_mixture()) throw AnalysisError("assignment_report: model has a spherical prior");
  if (utterances.empty()) throw AnalysisError("assignment_report: no utterances");
  NoGradGuard guard;
  const auto k = cfg.prior.components, d = cfg.n_mel;
  std::map<std::int64_t, std::pair<std::vector<double>, std::int64_t>> groups;
  for (const auto& u : utterances) {
    auto batch = make_batch<T>({u.mel}, {u.tokens});
    auto z = model.forward(batch).z;
    const MixtureParams mix =
        cfg.prior.mode == MixtureMode::kFixed ? model.mixture() : model.predict_mixture(*u.mel);
    std::vector<double> avg(static_cast<std::size_t>(k), 0.0);
    std::vector<double> frame(static_cast<std::size_t>(d));
    for (std::int64_t t = 0; t < u.mel->frames; ++t) {
      for (std::int64_t j = 0; j < d; ++j) frame[static_cast<std::size_t>(j)] = static_cast<double>(z.data()[t * d + j]);
      const auto g = responsibilities(frame, mix);
      for (std::int64_t c = 0; c < k; ++c) avg[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(c)];
    }
    auto& [sum, count] = groups[u.group];
    sum.resize(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t c = 0; c < k; ++c) sum[static_cast<std::size_t>(c)] += avg[static_cast<std::size_t>(c)] / static_cast<double>(u.mel->frames);
    ++count;
  }
  AssignmentReport report;
  for (auto& [spk, entry] : groups) {
    report.speakers.push_back(spk);
    for (auto& v : entry.first) v /= static_cast<double>(entry.second);
    report.mean.push_back(entry.first);
    report.counts.push_back(entry.second);
  }
  return report;
}

template AssignmentReport assignment_report<float>(const FlowModel<float>&, const std::vector<LabeledUtterance>&);
template AssignmentReport assignment_report<double>(const FlowModel<double>&, const std::vector<LabeledUtterance>&);

void write_f0_csv(const std::string& path, const std::vector<std::pair<std::string, F0Contour>>& contours) {
  auto out = open_out(path);
  out << "sample_id,frame,f0_hz,harmonicity\n";
  for (const auto& [id, c] : contours) {
    for (std::int64_t t = 0; t < c.frames(); ++t) {
      out << id << ',' << t << ',' << c.f0_hz[static_cast<std::size_t>(t)] << ','
          << c.harmonicity[static_cast<std::size_t>(t)] << '\n';
    }
  }
}

void write_durations_csv(const std::string& path, const std::vector<DurationRow>& rows) {
  auto out = open_out(path);
  out << "sample_id,seconds,sigma2\n";
  for (const auto& r : rows) out << r.sample_id << ',' << r.seconds << ',' << r.sigma2 << '\n';
}

void write_assignments_csv(const std::string& path, const AssignmentReport& report) {
  auto out = open_out(path);
  out << "speaker,component,mean_responsibility\n";
  for (std::size_t i = 0; i < report.speakers.size(); ++i) {
    for (std::size_t c = 0; c < report.mean[i].size(); ++c) {
      out << report.speakers[i] << ',' << c << ',' << report.mean[i][c] << '\n';
    }
  }
}

void write_scatter_svg(const std::string& path, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<ScatterSeries>& series) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double w = 640, h = 420, left = 70, right = 150, top = 40, bottom = 60;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
  auto py = [&](double y) { return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom); };
  auto out = open_out(path);
  out << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
      << "\" stroke=\"black\"/>\n";
  out << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">" << x_label
      << "</text>\n";
  out << "<text x=\"18\" y=\"" << h / 2 << "\" transform=\"rotate(-90 18 " << h / 2 << ")\" text-anchor=\"middle\">"
      << y_label << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4, yv = y0 + (y1 - y0) * i / 4;
    out << "<text x=\"" << px(xv) << "\" y=\"" << h - bottom + 18 << "\" text-anchor=\"middle\" font-size=\"11\">" << xv
        << "</text>\n";
    out << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << yv
        << "</text>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = colors[s % 6];
    for (auto [x, y] : series[s].points) {
      out << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color
          << "\" fill-opacity=\"0.7\"/>\n";
    }
    out << "<circle cx=\"" << w - right + 15 << "\" cy=\"" << top + 10 + 18 * s << "\" r=\"4\" fill=\"" << color
        << "\"/>\n";
    out << "<text x=\"" << w - right + 25 << "\" y=\"" << top + 14 + 18 * s << "\" font-size=\"12\">"
        << series[s].name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace arflow

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
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "arflow/audio.hpp"
#include "arflow/mel.hpp"
#include "arflow/model.hpp"

namespace arflow {

struct YinConfig {
  double f_min = 80.0;
  double f_max = 400.0;
  double harmonicity_threshold = 0.3;
  int frame_length = 1024;  // aligned with the mel frames
  int hop_length = 256;
};

/// Per-frame F0 in Hz (0 = unvoiced) and the CMNDF value at the chosen lag.
struct F0Contour {
  std::vector<double> f0_hz;
  std::vector<double> harmonicity;
  double hop_seconds = 256.0 / kSampleRate;

  std::int64_t frames() const { return static_cast<std::int64_t>(f0_hz.size()); }
  std::vector<double> voiced() const;
  double voiced_fraction() const;
  double median_voiced() const;  // 0 when nothing is voiced
};

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// YIN: cumulative-mean-normalized difference, first dip below the
/// threshold (followed to its local minimum), parabolic refinement. Frames
/// are centered with reflect padding so frame t matches mel frame t.
F0Contour yin_f0(const Waveform& wave, const YinConfig& config = {});

struct DurationStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  std::vector<double> seconds;
};

DurationStats duration_stats(const std::vector<MelSpectrogram>& samples);
DurationStats duration_stats(const std::vector<std::int64_t>& frame_counts, double hop_seconds);

/// Population variance of a contour's voiced values; 0 when none are voiced.
double f0_variance(const F0Contour& contour);

/// Variation across samples: for each frame index, the variance of F0 over
/// the samples voiced at that frame (at least two), averaged over frames.
/// Identical contours give 0.
double f0_contour_variance(const std::vector<F0Contour>& contours);

struct RankedUtterance {
  std::string id;
  double f0_variance = 0.0;
  std::int64_t voiced_frames = 0;
};

/// Descending F0 variance; all-unvoiced utterances go last with variance 0.
/// Ties keep input order.
std::vector<RankedUtterance> f0_variance_rank(const std::vector<std::pair<std::string, F0Contour>>& contours);
std::vector<RankedUtterance> top_f0_variance(const std::vector<std::pair<std::string, F0Contour>>& contours,
                                             std::size_t n);

struct AssignmentReport {
  std::vector<std::int64_t> speakers;     // row labels
  std::vector<std::vector<double>> mean;  // speakers x K
  std::vector<std::int64_t> counts;       // utterances per row

  std::int64_t dominant(std::size_t row) const;
};

struct LabeledUtterance {
  const MelSpectrogram* mel;
  TokenSequence tokens;  // tokens.speaker is used for conditioning
  std::int64_t group;    // reporting label (usually the true speaker)
};

/// Forward pass per utterance, per-frame responsibilities averaged over
/// time, then over utterances of each group.
template <typename T>
AssignmentReport assignment_report(const FlowModel<T>& model, const std::vector<LabeledUtterance>& utterances);

void write_f0_csv(const std::string& path, const std::vector<std::pair<std::string, F0Contour>>& contours);
struct DurationRow {
  std::string sample_id;
  double seconds;
  double sigma2;
};
void write_durations_csv(const std::string& path, const std::vector<DurationRow>& rows);
void write_assignments_csv(const std::string& path, const AssignmentReport& report);

struct ScatterSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};
/// Minimal standalone SVG scatter plot.
void write_scatter_svg(const std::string& path, const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<ScatterSeries>& series);

}  // namespace arflow

// Copyright (c) 2026 The evc Authors
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

// Objective metrics (DTW-aligned MCD, voiced-duration difference),
// embedding-cluster statistics and SVG figures.

#ifndef EVC_EVALUATION_H_
#define EVC_EVALUATION_H_

#include <string>
#include <utility>
#include <vector>

#include "evc/corpus.h"
#include "evc/inference.h"
#include "evc/model.h"
#include "evc/signal.h"

namespace evc::evaluation {

struct DtwPath {
  std::vector<std::pair<int, int>> steps;
  double cost = 0.0;  // sum of local distances along the path

  // Starts at (0,0), ends at (ta-1, tb-1), steps in {(1,0),(0,1),(1,1)}.
  void Validate(int ta, int tb) const;
};

// Minimal cumulative Euclidean distance between rows of a and b. Ties go
// to the diagonal step, then to (1,0), then to (0,1).
DtwPath DtwAlignFrames(const Matrix& a, const Matrix& b);
// Aligns on c_1..c_D; the energy term is ignored, so MCD stays invariant
// to gain offsets.
DtwPath DtwAlign(const signal::McepSequence& a, const signal::McepSequence& b);

// Per-frame distortion (10 / ln 10) * sqrt(2 * sum_{d>=1} diff_d^2).
double FrameMcd(const RowVector& a, const RowVector& b);
// Mean frame distortion over the DTW path.
double McdScore(const signal::McepSequence& a, const signal::McepSequence& b);

// |voiced duration(a) - voiced duration(b)| in seconds.
double DdurScore(const signal::Waveform& a, const signal::Waveform& b,
                 const signal::AudioConfig& cfg);

// Mean silhouette with cosine distance. Needs >= 2 classes with >= 2 points
// each. Points with a = b = 0 score 0.
double Silhouette(const std::vector<RowVector>& points, const std::vector<int>& labels);

struct TsneConfig {
  double perplexity = 30.0;  // clamped to (n - 1) / 3
  int iterations = 1000;
  int exaggeration_iterations = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  uint64_t seed = 1;
};

// Exact t-SNE to two dimensions; n x 2.
Matrix Tsne(const std::vector<RowVector>& points, const TsneConfig& cfg);

// Writes an SVG scatter (one colour per class, with legend) and a CSV
// sidecar next to it (same stem, .csv) with the projected coordinates.
// Needs >= 2 classes with >= 3 points each. Refuses to replace an existing
// figure unless overwrite is set.
struct EmbeddingMapResult {
  Matrix coordinates;
  std::string svg_path;
  std::string csv_path;
};
EmbeddingMapResult PlotEmbeddingMap(const std::vector<RowVector>& points,
                                    const std::vector<int>& labels,
                                    const std::vector<std::string>& class_names,
                                    const TsneConfig& cfg, const std::string& svg_path,
                                    bool overwrite = false);

// Heatmap of decoder steps (rows) against encoder positions (columns). Each
// cell carries its unmodified weight in a data attribute.
void PlotAttention(const model::AttentionMatrix& attention, const std::string& title,
                   const std::string& svg_path, bool overwrite = false);

// ---------------------------------------------------------------------------
// Batch scoring of a conversion report against parallel target utterances.

struct PairScore {
  std::string source_id;
  std::string target_id;
  std::string source_emotion;
  std::string target_emotion;
  double mcd_converted = 0.0;   // converted vs target
  double mcd_source = 0.0;      // source vs target
  double ddur_converted = 0.0;
  double ddur_source = 0.0;
};

struct AggregateScore {
  std::string source_emotion;
  std::string target_emotion;
  int pairs = 0;
  double mcd_converted = 0.0;
  double mcd_source = 0.0;
  double ddur_converted = 0.0;
  double ddur_source = 0.0;
};

struct ScoreReport {
  std::vector<PairScore> pairs;
  std::vector<AggregateScore> aggregates;  // per emotion pair, then "all"
  // Report rows that failed conversion or had no parallel target.
  std::vector<std::string> skipped;
};

struct ScoreOptions {
  int mcep_order = 24;
  double alpha = 0.42;
};

// Targets are matched by (speaker, text, target emotion).
ScoreReport ScoreConversions(const std::vector<inference::ConversionRecord>& report,
                             const std::vector<corpus::UtteranceRecord>& targets,
                             const std::string& target_manifest_path,
                             const signal::AudioConfig& audio, const ScoreOptions& opts);
void WriteScores(const std::string& path, const ScoreReport& scores);

}  // namespace evc::evaluation

#endif  // EVC_EVALUATION_H_

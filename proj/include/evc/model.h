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

// The conversion network: text encoder, sequence-to-sequence recognition
// encoder, style (emotion) encoder, linguistic classifier and attention
// decoder.
//
// Each component has a graph-level builder used by training (it records on
// an ad::Tape so losses can be differentiated) and a value-level function
// for inference. The value-level functions run the same builders on a
// throwaway tape, so there is exactly one implementation of every forward
// pass.
//
// Both attention modules use forward attention with a transition agent: the
// alignment at step t is the previous alignment, optionally advanced by one
// position with probability u, reweighted by content scores. Alignments are
// therefore monotone, and the transition probability (conditioned on the
// style embedding in the acoustic decoder) is what sets output duration.

#ifndef EVC_MODEL_H_
#define EVC_MODEL_H_

#include <optional>
#include <string>
#include <vector>

#include "evc/autodiff.h"
#include "evc/common.h"
#include "evc/corpus.h"
#include "evc/signal.h"

namespace evc::model {

struct ModelConfig {
  int phoneme_vocab = 16;
  int n_mels = 80;
  int d_embed = 32;
  int d_hidden = 64;
  int d_linguistic = 32;
  int d_style = 16;
  int d_classifier = 32;
  int d_prenet = 32;
  int d_decoder = 64;
  int d_attention = 32;
  // Labels: speakers in stage 1, emotions in stage 2.
  int num_classes = 2;
  int reduction_factor = 2;
  int max_decode_steps = 400;
  int max_recognizer_steps = 64;
  // Log-mel floor of the feature config; fixes the internal normalisation.
  double log_floor = -11.512925464970229;

  void Validate() const;
  std::string Fingerprint() const;
};

enum class Source { kText, kAudio };

struct LinguisticEmbeddingSequence {
  Matrix vectors;  // L x d_linguistic
  Source source = Source::kText;
  Eigen::Index length() const { return vectors.rows(); }
};

struct EmotionEmbedding {
  RowVector h;  // d_style
};

struct ClassifierPosterior {
  Matrix probs;  // N x R, rows stochastic
};

struct AttentionMatrix {
  Matrix weights;  // decoder steps x encoder positions, rows stochastic
};

struct DecoderOutput {
  Matrix mel;          // (S * reduction_factor) x n_mels
  Vector stop_probs;   // S
  AttentionMatrix attention;
  bool truncated = false;
  Eigen::Index steps() const { return stop_probs.size(); }
};

struct ModelState {
  ModelConfig config;
  ad::ParameterSet params;
  int stage = 1;

  // Digest of config, stage and every parameter value.
  std::string Fingerprint() const;
  // Throws unless every expected array exists with the configured shape.
  void ValidateShapes() const;
};

// Names of the arrays whose first dimension depends on num_classes; these
// are the heads replaced between stages.
std::vector<std::string> HeadParameterNames();
// Parameters updated by the classifier optimizer.
bool IsClassifierParameter(const std::string& name);

// Expected shape of every array for a config.
std::map<std::string, std::pair<int, int>> ParameterShapes(const ModelConfig& cfg);
// Xavier-uniform weights and zero biases.
Matrix InitArray(const std::string& name, int rows, int cols, Rng* rng);
ModelState InitModel(const ModelConfig& cfg, uint64_t seed);

enum class Mode { kInference, kTraining };

struct ForwardOptions {
  Mode mode = Mode::kInference;
  // Required in training mode (prenet dropout masks).
  Rng* rng = nullptr;
  double prenet_dropout = 0.5;
};

// ---------------------------------------------------------------------------
// Graph-level builders

// Maps log-mel values into the network's working range.
Matrix NormalizeMel(const Matrix& mel, double log_floor);

ad::Var TextEncoderGraph(ad::Graph& g, const ModelConfig& cfg,
                         const corpus::PhonemeSequence& phonemes);

ad::Var ListenerGraph(ad::Graph& g, const ModelConfig& cfg, const Matrix& mel);

struct RecognizerGraphOut {
  ad::Var embeddings;  // L x d_linguistic
  ad::Var stop_probs;  // L x 1
  ad::Var attention;   // L x listener length
  bool truncated = false;
};

// With a teacher (L x d_linguistic) the recognizer runs exactly L steps and
// is fed teacher row n-1 at step n; otherwise it feeds back its own output
// and stops when stop_prob > 0.5 or after max_steps.
RecognizerGraphOut RecognizerGraph(ad::Graph& g, const ModelConfig& cfg,
                                   const ad::Var& memory,
                                   const std::optional<ad::Var>& teacher,
                                   int max_steps);

// 1 x d_style: mean over time of the final encoder layer.
ad::Var StyleEncoderGraph(ad::Graph& g, const ModelConfig& cfg, const Matrix& mel);
// 1 x R: (V h)^T.
ad::Var EmotionLogitsGraph(ad::Graph& g, const ad::Var& h);
// L x R softmax posteriors.
ad::Var ClassifierGraph(ad::Graph& g, const ad::Var& embeddings);

struct DecoderGraphOut {
  ad::Var mel;         // (S*r) x n_mels, log-mel units
  ad::Var stop_probs;  // S x 1
  ad::Var attention;   // S x L
  bool truncated = false;
};

DecoderGraphOut DecoderGraph(ad::Graph& g, const ModelConfig& cfg,
                             const ad::Var& memory, const ad::Var& style,
                             const Matrix* teacher, const ForwardOptions& opts);

// ---------------------------------------------------------------------------
// Value-level operations

LinguisticEmbeddingSequence TextEncode(const corpus::PhonemeSequence& p,
                                       const ModelState& s);
LinguisticEmbeddingSequence AsrEncode(const signal::MelSpectrogram& m,
                                      const ModelState& s);
EmotionEmbedding EmotionEncode(const signal::MelSpectrogram& m,
                               const ModelState& s);
ClassifierPosterior ClassifyLinguistic(const LinguisticEmbeddingSequence& e,
                                       const ModelState& s);
RowVector EmotionLogits(const EmotionEmbedding& h, const ModelState& s);
DecoderOutput Decode(const LinguisticEmbeddingSequence& e,
                     const EmotionEmbedding& h, const ModelState& s,
                     const signal::MelSpectrogram* teacher = nullptr);

}  // namespace evc::model

#endif  // EVC_MODEL_H_

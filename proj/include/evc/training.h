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

// Two-stage training: style initialization on a multi-speaker corpus, then
// emotion training with re-initialized heads.
//
// Every step is two alternating updates. The classifier is first fitted to
// the labels from the (frozen) linguistic embeddings; then everything else is
// updated against reconstruction, stop, consistency, guided attention,
// emotion supervision and the adversarial uniformity term, with the
// classifier frozen.

#ifndef EVC_TRAINING_H_
#define EVC_TRAINING_H_

#include <functional>
#include <string>
#include <vector>

#include "evc/autodiff.h"
#include "evc/corpus.h"
#include "evc/model.h"
#include "evc/objectives.h"
#include "evc/signal.h"
#include "json.hpp"

namespace evc::training {

struct Example {
  std::string id;
  corpus::PhonemeSequence phonemes;
  Matrix mel;  // T x n_mels log-mel
  int label = 0;
};

// Reads audio, extracts mels and transcribes text for every record.
std::vector<Example> LoadExamples(
    const std::vector<corpus::UtteranceRecord>& records,
    const std::string& manifest_path, const corpus::Lexicon& lexicon,
    const signal::AudioConfig& audio,
    const std::function<int(const corpus::UtteranceRecord&)>& label_of);

struct TrainConfig {
  int stage = 1;
  int batch_size = 8;
  int max_steps = 2000;
  double learning_rate = 1e-3;
  double classifier_learning_rate = 1e-3;
  int warmup_steps = 100;
  double grad_clip = 1.0;
  double prenet_dropout = 0.5;
  uint64_t seed = 1;
  int validate_every = 100;
  objectives::LossWeights weights;
  // Line-delimited metrics; empty disables the file (records are still
  // returned).
  std::string metrics_path;

  void Validate() const;
  // Excludes output paths.
  std::string Fingerprint() const;
};

nlohmann::json ToJson(const TrainConfig& c);
TrainConfig TrainConfigFromJson(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json ToJson(const model::ModelConfig& c);
model::ModelConfig ModelConfigFromJson(const nlohmann::json& j,
                                       model::ModelConfig base = {});

struct AdamState {
  ad::ParameterSet m;
  ad::ParameterSet v;
  int64_t t = 0;
};

// One Adam update of the arrays named in grads.
void AdamUpdate(const ad::ParameterSet& grads, double lr, AdamState* state,
                ad::ParameterSet* params);
// Scales grads in place so their joint L2 norm is at most max_norm; returns
// the norm before clipping.
double ClipGradients(ad::ParameterSet* grads, double max_norm);
double LearningRate(double base, int warmup_steps, int64_t step);

struct OptimizerState {
  AdamState main;
  AdamState classifier;
};

struct Checkpoint {
  model::ModelState model;
  OptimizerState optimizer;
  int64_t step = 0;
  std::string train_config_fingerprint;
  std::vector<std::string> metric_tail;
  // Free-form caller data (label names, audio config) stored verbatim.
  nlohmann::json annotations = nlohmann::json::object();
};

void SaveCheckpoint(const std::string& path, const Checkpoint& ck);
// Validates every array shape against the stored config.
Checkpoint LoadCheckpoint(const std::string& path);

struct LossVars {
  ad::Var l_c;
  ad::Var l_adv;
  ad::Var l_ec;
  ad::Var l_recon;
  ad::Var l_stop;
  ad::Var l_consist;
  ad::Var l_align;
};

// Linguistic embeddings of both paths stacked row-wise (text rows first);
// this is what the classifier sees.
ad::Var LinguisticRows(ad::Graph& g, const model::ModelConfig& cfg,
                       const Example& ex);

// Every loss term for one example, teacher forced. The recognizer is fed the
// text embeddings, so its output positions correspond one-to-one to text
// positions and the consistency alignment is the identity.
LossVars BuildExampleLosses(ad::Graph& g, const model::ModelConfig& cfg,
                            const Example& ex, const model::ForwardOptions& opts);

struct PhaseResult {
  ad::ParameterSet grads;
  objectives::LossComponents components;  // batch means
};

// Phase (a): gradient of the batch-mean L_c with respect to the classifier
// arrays only.
PhaseResult ClassifierPhase(const std::vector<const Example*>& batch,
                            const model::ModelState& state);
// Phase (b): gradient of the weighted non-classifier objective with respect
// to every non-classifier array.
PhaseResult EncoderPhase(const std::vector<const Example*>& batch,
                         const model::ModelState& state, const TrainConfig& cfg,
                         Rng* dropout_rng);

// Runs both phases with optimizer updates; returns the step's breakdown.
// Throws DivergenceError on a non-finite loss or gradient.
objectives::LossBreakdown AdversarialStep(const std::vector<const Example*>& batch,
                                          const TrainConfig& cfg, int64_t step,
                                          Rng* dropout_rng, model::ModelState* state,
                                          OptimizerState* opt);

struct ValidationMetrics {
  double l_recon = 0;
  double l_stop = 0;
  double score() const { return l_recon + l_stop; }
};

// Teacher-forced, inference-mode losses averaged over both decoding paths.
ValidationMetrics Validate(const std::vector<Example>& examples,
                           const model::ModelState& state);

struct TrainResult {
  Checkpoint best;
  model::ModelState final_state;
  std::vector<std::string> metrics;  // one JSON record per line
  ValidationMetrics final_validation;
  ValidationMetrics best_validation;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> validation;
  int num_classes = 0;
};

// Fresh stage-1 state sized for the dataset's label count.
model::ModelState InitStage1(const model::ModelConfig& base, int num_classes,
                             uint64_t seed);

TrainResult TrainStage1(const Dataset& data, const TrainConfig& cfg,
                        const model::ModelState& init);
TrainResult TrainStage2(const Dataset& data, const TrainConfig& cfg,
                        const model::ModelState& init);

// Copies every array except the heads, which are freshly drawn for
// num_emotions classes; the result is tagged stage 2.
model::ModelState ReinitForStage2(const Checkpoint& ck, int num_emotions,
                                  uint64_t seed);

}  // namespace evc::training

#endif  // EVC_TRAINING_H_

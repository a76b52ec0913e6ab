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

// Training losses. Every loss has a graph form (differentiable, used by the
// trainer) and a value form; the value forms evaluate the graph forms on
// constants.

#ifndef EVC_OBJECTIVES_H_
#define EVC_OBJECTIVES_H_

#include "evc/autodiff.h"
#include "evc/corpus.h"
#include "evc/model.h"

namespace evc::objectives {

// Probabilities are clamped here before any log.
constexpr double kProbabilityClamp = 1e-12;
// Tolerance band of the guided-attention penalty, in normalized positions.
constexpr double kGuidedAttentionWidth = 0.2;

struct UniformTarget {
  RowVector alpha;
  static UniformTarget Make(int num_classes);
};

struct LossWeights {
  double recon = 1.0;
  double stop = 1.0;
  double consist = 1.0;
  double classifier = 1.0;    // classifier optimizer only
  double adversarial = 0.02;  // encoder optimizer only
  double emotion = 1.0;
  double align = 1.0;  // guided attention; 0 disables it

  void Validate() const;
};

struct LossComponents {
  double l_c = 0;
  double l_adv = 0;
  double l_ec = 0;
  double l_recon = 0;
  double l_stop = 0;
  double l_consist = 0;
  double l_align = 0;
};

struct LossBreakdown {
  LossComponents components;
  double weighted_total = 0;
  LossWeights weights;
};

// Value forms.
double ClassifierLoss(const model::ClassifierPosterior& posterior,
                      const corpus::EmotionLabel& label);
double AdversarialUniformLoss(const model::ClassifierPosterior& posterior);
double EmotionSupervisionLoss(const model::EmotionEmbedding& h,
                              const corpus::EmotionLabel& label,
                              const model::ModelState& s);

struct ReconstructionLosses {
  double l_recon = 0;
  double l_stop = 0;
};
ReconstructionLosses ReconstructionLoss(const model::DecoderOutput& predicted,
                                        const signal::MelSpectrogram& target);
double ConsistencyLoss(const model::LinguisticEmbeddingSequence& e_text,
                       const model::LinguisticEmbeddingSequence& e_audio,
                       const model::AttentionMatrix& alignment);
// Per-row sum of A .* W averaged over rows, with
// W(n, l) = 1 - exp(-(n/N - l/L)^2 / (2 width^2)) at cell centres. In [0, 1)
// for row-stochastic A; near zero for a diagonal alignment.
double GuidedAttentionLoss(const model::AttentionMatrix& attention,
                           double width = kGuidedAttentionWidth);
LossBreakdown TotalLoss(const LossComponents& components, int stage,
                        const LossWeights& weights);

// Graph forms.
ad::Var ClassifierLossGraph(const ad::Var& posterior, int label);
ad::Var AdversarialLossGraph(const ad::Var& posterior);
// Cross entropy of softmax(logits) against the label.
ad::Var SoftmaxCrossEntropyGraph(const ad::Var& logits, int label);
// Mean absolute error over the first target.rows() predicted frames.
ad::Var ReconstructionGraph(const ad::Var& predicted, const Matrix& target,
                            int reduction_factor);
// Binary cross entropy against a target that is 1 only on the last row.
ad::Var StopGraph(const ad::Var& stop_probs);
ad::Var ConsistencyGraph(const ad::Var& e_text, const ad::Var& e_audio,
                         const ad::Var& alignment);
ad::Var GuidedAttentionGraph(const ad::Var& attention,
                             double width = kGuidedAttentionWidth);

}  // namespace evc::objectives

#endif  // EVC_OBJECTIVES_H_

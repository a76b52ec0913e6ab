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

#include "evc/objectives.h"

#include <cmath>

namespace evc::objectives {

using ad::Var;

namespace {

void Require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

void CheckStochastic(const Matrix& p, const std::string& who) {
  Require(p.rows() >= 1 && p.cols() >= 2, who + ": posterior must be N x R, R >= 2");
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    Require((p.row(i).array() >= 0).all() && std::abs(p.row(i).sum() - 1.0) <= 1e-5,
            who + ": posterior row " + std::to_string(i) + " is not stochastic");
  }
}

}  // namespace

UniformTarget UniformTarget::Make(int num_classes) {
  Require(num_classes >= 1, "uniform target: needs at least one class");
  return {RowVector::Constant(num_classes, 1.0 / num_classes)};
}

void LossWeights::Validate() const {
  for (double w : {recon, stop, consist, classifier, adversarial, emotion, align}) {
    Require(std::isfinite(w) && w >= 0, "loss weights must be finite and non-negative");
  }
}

Var ClassifierLossGraph(const Var& posterior, int label) {
  Require(label >= 0 && label < posterior.cols(),
          "classifier_loss: label " + std::to_string(label) + " outside " +
              std::to_string(posterior.cols()) + " classes");
  return Scale(Mean(Log(SliceCols(posterior, label, 1), kProbabilityClamp)), -1.0);
}

Var AdversarialLossGraph(const Var& posterior) {
  const double a = 1.0 / static_cast<double>(posterior.cols());
  Var diff = AddScalar(posterior, -a);
  return Scale(Sum(Square(diff)), 1.0 / static_cast<double>(posterior.rows()));
}

Var SoftmaxCrossEntropyGraph(const Var& logits, int label) {
  return ClassifierLossGraph(SoftmaxRows(logits), label);
}

Var ReconstructionGraph(const Var& predicted, const Matrix& target,
                        int reduction_factor) {
  const Eigen::Index t = target.rows();
  Require(predicted.cols() == target.cols(), "reconstruction_loss: mel width mismatch");
  Require(t >= 1 && predicted.rows() >= t && predicted.rows() < t + reduction_factor,
          "reconstruction_loss: predicted " + std::to_string(predicted.rows()) +
              " frames cannot be a padded form of " + std::to_string(t) +
              " target frames");
  Var valid = SliceRows(predicted, 0, t);
  return Mean(Abs(Sub(valid, predicted.tape()->Constant(target))));
}

Var StopGraph(const Var& stop_probs) {
  const Eigen::Index s = stop_probs.rows();
  Require(s >= 1 && stop_probs.cols() == 1, "stop loss: expected S x 1 probabilities");
  Matrix target = Matrix::Zero(s, 1);
  target(s - 1, 0) = 1.0;
  ad::Tape& tape = *stop_probs.tape();
  Var y = tape.Constant(target);
  Var not_y = tape.Constant(Matrix::Ones(s, 1) - target);
  Var log_p = Log(stop_probs, kProbabilityClamp);
  Var log_q = Log(AddScalar(Scale(stop_probs, -1.0), 1.0), kProbabilityClamp);
  return Scale(Mean(Add(Mul(y, log_p), Mul(not_y, log_q))), -1.0);
}

Var ConsistencyGraph(const Var& e_text, const Var& e_audio, const Var& alignment) {
  Require(alignment.rows() == e_text.rows() && alignment.cols() == e_audio.rows(),
          "consistency_loss: alignment must be L_text x L_audio");
  Require(e_text.cols() == e_audio.cols(), "consistency_loss: embedding width mismatch");
  return Mean(Square(Sub(e_text, MatMul(alignment, e_audio))));
}

double ClassifierLoss(const model::ClassifierPosterior& posterior,
                      const corpus::EmotionLabel& label) {
  CheckStochastic(posterior.probs, "classifier_loss");
  Require(label.num_classes == posterior.probs.cols(),
          "classifier_loss: label has " + std::to_string(label.num_classes) +
              " classes, posterior has " + std::to_string(posterior.probs.cols()));
  ad::Tape tape;
  return ClassifierLossGraph(tape.Constant(posterior.probs), label.index).scalar();
}

double AdversarialUniformLoss(const model::ClassifierPosterior& posterior) {
  CheckStochastic(posterior.probs, "adversarial_uniform_loss");
  ad::Tape tape;
  return AdversarialLossGraph(tape.Constant(posterior.probs)).scalar();
}

double EmotionSupervisionLoss(const model::EmotionEmbedding& h,
                              const corpus::EmotionLabel& label,
                              const model::ModelState& s) {
  const auto it = s.params.find("style.head");
  Require(it != s.params.end(), "emotion_supervision_loss: state has no V");
  Require(it->second.rows() == label.num_classes,
          "emotion_supervision_loss: V has " + std::to_string(it->second.rows()) +
              " rows, label has " + std::to_string(label.num_classes) + " classes");
  const RowVector logits = model::EmotionLogits(h, s);
  ad::Tape tape;
  return SoftmaxCrossEntropyGraph(tape.Constant(logits), label.index).scalar();
}

ReconstructionLosses ReconstructionLoss(const model::DecoderOutput& predicted,
                                        const signal::MelSpectrogram& target) {
  const Eigen::Index s = predicted.stop_probs.size();
  Require(s >= 1 && predicted.mel.rows() % s == 0,
          "reconstruction_loss: mel rows are not a multiple of the step count");
  const int r = static_cast<int>(predicted.mel.rows() / s);
  ad::Tape tape;
  ReconstructionLosses out;
  out.l_recon = ReconstructionGraph(tape.Constant(predicted.mel), target.frames, r).scalar();
  out.l_stop = StopGraph(tape.Constant(predicted.stop_probs)).scalar();
  return out;
}

double ConsistencyLoss(const model::LinguisticEmbeddingSequence& e_text,
                       const model::LinguisticEmbeddingSequence& e_audio,
                       const model::AttentionMatrix& alignment) {
  ad::Tape tape;
  return ConsistencyGraph(tape.Constant(e_text.vectors), tape.Constant(e_audio.vectors),
                          tape.Constant(alignment.weights))
      .scalar();
}

Var GuidedAttentionGraph(const Var& attention, double width) {
  Require(attention.rows() >= 1 && attention.cols() >= 1, "guided_attention: empty attention");
  Require(width > 0, "guided_attention: width must be positive");
  const Eigen::Index n = attention.rows(), l = attention.cols();
  Matrix w(n, l);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < l; ++j) {
      const double d = (i + 0.5) / n - (j + 0.5) / l;
      w(i, j) = 1.0 - std::exp(-d * d / (2 * width * width));
    }
  }
  return Scale(Sum(Mul(attention, attention.tape()->Constant(std::move(w)))),
               1.0 / static_cast<double>(n));
}

double GuidedAttentionLoss(const model::AttentionMatrix& attention, double width) {
  ad::Tape tape;
  return GuidedAttentionGraph(tape.Constant(attention.weights), width).scalar();
}

LossBreakdown TotalLoss(const LossComponents& c, int stage, const LossWeights& w) {
  Require(stage == 1 || stage == 2, "total_loss: stage must be 1 or 2");
  w.Validate();
  LossBreakdown b;
  b.components = c;
  b.weights = w;
  // Both stages use every term; only the label set differs.
  b.weighted_total = w.classifier * c.l_c + w.adversarial * c.l_adv +
                     w.emotion * c.l_ec + w.recon * c.l_recon + w.stop * c.l_stop +
                     w.consist * c.l_consist + w.align * c.l_align;
  return b;
}

}  // namespace evc::objectives

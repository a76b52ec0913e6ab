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

#include <cmath>

#include "doctest.h"
#include "evc/objectives.h"

namespace evc::objectives {
namespace {

using corpus::EmotionLabel;
using model::ClassifierPosterior;

ClassifierPosterior Rows(std::initializer_list<std::initializer_list<double>> rows) {
  ClassifierPosterior p;
  p.probs.resize(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) p.probs(i, j++) = v;
    ++i;
  }
  return p;
}

model::ModelState StateWithLogits(const RowVector& logits) {
  // d_style = 1 and h = [1], so V h is the single column of V.
  model::ModelConfig c;
  c.num_classes = static_cast<int>(logits.size());
  c.d_style = 1;
  model::ModelState s;
  s.config = c;
  s.params["style.head"] = logits.transpose();
  return s;
}

TEST_CASE("classifier loss worked examples") {
  CHECK(ClassifierLoss(Rows({{1, 0, 0, 0}, {1, 0, 0, 0}}), EmotionLabel::Make(0, 4)) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(ClassifierLoss(Rows({{0.25, 0.25, 0.25, 0.25}}), EmotionLabel::Make(2, 4)) -
                 1.386294) < 1e-6);
  CHECK(std::abs(ClassifierLoss(Rows({{1, 0, 0, 0}, {0.5, 0.5, 0, 0}}),
                                EmotionLabel::Make(0, 4)) -
                 0.346574) < 1e-6);
  // A zero probability is clamped, not infinite.
  CHECK(ClassifierLoss(Rows({{0, 1}}), EmotionLabel::Make(0, 2)) ==
        doctest::Approx(-std::log(kProbabilityClamp)));
  CHECK_THROWS_AS(ClassifierLoss(Rows({{0.5, 0.5}}), EmotionLabel::Make(0, 4)),
                  ValidationError);
}

TEST_CASE("adversarial loss worked examples") {
  CHECK(AdversarialUniformLoss(Rows({{0.25, 0.25, 0.25, 0.25}})) == doctest::Approx(0.0));
  CHECK(std::abs(AdversarialUniformLoss(Rows({{1, 0, 0, 0}})) - 0.75) < 1e-12);
  CHECK(std::abs(AdversarialUniformLoss(Rows({{0.25, 0.25, 0.25, 0.25}, {1, 0, 0, 0}})) -
                 0.375) < 1e-12);
  const UniformTarget u = UniformTarget::Make(4);
  CHECK(u.alpha.sum() == doctest::Approx(1.0));
  CHECK(u.alpha(3) == 0.25);
}

TEST_CASE("adversarial loss peaks at the simplex vertices") {
  for (int r = 2; r <= 8; ++r) {
    const double bound = static_cast<double>(r - 1) / r;
    for (int k = 0; k < r; ++k) {
      ClassifierPosterior p;
      p.probs = Matrix::Zero(1, r);
      p.probs(0, k) = 1.0;
      CHECK(AdversarialUniformLoss(p) == doctest::Approx(bound).epsilon(1e-12));
    }
    // Interior points stay below the bound.
    Rng rng(static_cast<uint64_t>(r));
    for (int trial = 0; trial < 50; ++trial) {
      ClassifierPosterior p;
      p.probs.resize(1, r);
      for (int j = 0; j < r; ++j) p.probs(0, j) = rng.Uniform() + 1e-3;
      p.probs /= p.probs.sum();
      const double l = AdversarialUniformLoss(p);
      CHECK(l >= 0.0);
      CHECK(l < bound);
    }
  }
}

TEST_CASE("classifier and adversarial losses are antagonistic at the vertices") {
  for (int k = 0; k < 4; ++k) {
    ClassifierPosterior p;
    p.probs = Matrix::Zero(1, 4);
    p.probs(0, k) = 1.0;
    const double lc = ClassifierLoss(p, EmotionLabel::Make(0, 4));
    const double la = AdversarialUniformLoss(p);
    if (k == 0) {
      CHECK(lc == doctest::Approx(0.0));
      CHECK(la == doctest::Approx(0.75));
    } else {
      CHECK(lc > 27.0);  // clamped -ln(1e-12)
    }
  }
}

TEST_CASE("emotion supervision loss worked examples") {
  const model::EmotionEmbedding h{RowVector::Ones(1)};
  RowVector logits = RowVector::Zero(4);
  CHECK(std::abs(EmotionSupervisionLoss(h, EmotionLabel::Make(0, 4),
                                        StateWithLogits(logits)) -
                 1.386294) < 1e-6);
  logits << 10, 0, 0, 0;
  const double expected_small = -std::log(std::exp(10.0) / (std::exp(10.0) + 3.0));
  const double small = EmotionSupervisionLoss(h, EmotionLabel::Make(0, 4), StateWithLogits(logits));
  CHECK(std::abs(small - expected_small) < 1e-9);
  CHECK(std::abs(small - 1.362e-4) < 1e-6);
  logits << 0, 10, 0, 0;
  CHECK(std::abs(EmotionSupervisionLoss(h, EmotionLabel::Make(0, 4), StateWithLogits(logits)) -
                 10.000136) < 1e-6);
  CHECK_THROWS_AS(EmotionSupervisionLoss(h, EmotionLabel::Make(0, 5), StateWithLogits(logits)),
                  ValidationError);
}

TEST_CASE("reconstruction and stop losses") {
  model::DecoderOutput d;
  d.mel = Matrix::Random(6, 3);
  d.stop_probs = Vector::Zero(3);
  d.stop_probs(2) = 1.0;
  signal::MelSpectrogram target{d.mel, ""};
  auto l = ReconstructionLoss(d, target);
  CHECK(l.l_recon == 0.0);
  CHECK(l.l_stop == doctest::Approx(0.0).epsilon(1e-12));

  target.frames = d.mel.array() - 1.0;
  CHECK(ReconstructionLoss(d, target).l_recon == doctest::Approx(1.0));

  // Padding: 5 target frames fit 3 steps of 2; the pad row is ignored.
  target.frames = d.mel.topRows(5);
  d.mel(5, 0) = 1e6;
  CHECK(ReconstructionLoss(d, target).l_recon == 0.0);
  target.frames = d.mel.topRows(3);
  CHECK_THROWS_AS(ReconstructionLoss(d, target), ValidationError);

  d.stop_probs.setConstant(0.5);
  CHECK(ReconstructionLoss(d, signal::MelSpectrogram{d.mel, ""}).l_stop ==
        doctest::Approx(std::log(2.0)));
}

TEST_CASE("consistency loss fixtures") {
  model::LinguisticEmbeddingSequence text, audio;
  text.vectors = Matrix::Random(4, 3);
  audio.vectors = text.vectors;
  model::AttentionMatrix eye{Matrix::Identity(4, 4)};
  CHECK(ConsistencyLoss(text, audio, eye) == 0.0);

  // Zero text against unit-norm aligned rows: 1/d.
  text.vectors = Matrix::Zero(2, 4);
  audio.vectors = Matrix::Zero(3, 4);
  audio.vectors(0, 1) = 1.0;
  audio.vectors(2, 3) = -1.0;
  model::AttentionMatrix pick{Matrix::Zero(2, 3)};
  pick.weights(0, 0) = 1.0;
  pick.weights(1, 2) = 1.0;
  CHECK(ConsistencyLoss(text, audio, pick) == doctest::Approx(0.25));

  Rng rng(3);
  text.vectors = Matrix::Random(2, 4);
  audio.vectors = Matrix::Random(3, 4);
  pick.weights << 0.2, 0.5, 0.3, 0.1, 0.1, 0.8;
  const double base = ConsistencyLoss(text, audio, pick);
  text.vectors *= 2;
  audio.vectors *= 2;
  CHECK(ConsistencyLoss(text, audio, pick) == doctest::Approx(4 * base));
  CHECK_THROWS_AS(ConsistencyLoss(text, audio, model::AttentionMatrix{Matrix::Zero(3, 3)}),
                  ValidationError);
}

TEST_CASE("guided attention penalizes off-diagonal mass") {
  CHECK(GuidedAttentionLoss({Matrix::Ones(1, 1)}) == 0.0);
  CHECK(GuidedAttentionLoss({Matrix::Identity(2, 2)}) == 0.0);
  Matrix anti(2, 2);
  anti << 0, 1, 1, 0;
  // Both cells sit 0.5 off the diagonal: 1 - exp(-0.25 / 0.08).
  CHECK(std::abs(GuidedAttentionLoss({anti}) - 0.9560631) < 1e-6);

  // A monotone alignment over a longer memory beats a stuck one.
  Matrix diag = Matrix::Zero(6, 12), stuck = Matrix::Zero(6, 12);
  for (int i = 0; i < 6; ++i) {
    diag(i, 2 * i) = 0.5;
    diag(i, 2 * i + 1) = 0.5;
    stuck(i, 0) = 1.0;
  }
  CHECK(GuidedAttentionLoss({diag}) < 0.05);
  CHECK(GuidedAttentionLoss({stuck}) > 0.5);
  CHECK(GuidedAttentionLoss({stuck}, 10.0) < GuidedAttentionLoss({stuck}));
  CHECK_THROWS_AS(GuidedAttentionLoss({stuck}, 0.0), ValidationError);
}

TEST_CASE("total loss is the weighted sum") {
  LossComponents c{0.3, 0.7, 1.1, 2.5, 0.4, 0.2, 0.05};
  LossWeights zero{0, 0, 0, 0, 0, 0, 0};
  CHECK(TotalLoss(c, 1, zero).weighted_total == 0.0);
  LossWeights only = zero;
  only.recon = 1.0;
  CHECK(TotalLoss(c, 2, only).weighted_total == doctest::Approx(2.5));
  const LossWeights w;
  const double oracle =
      1.0 * 2.5 + 1.0 * 0.4 + 1.0 * 0.2 + 1.0 * 0.3 + 0.02 * 0.7 + 1.0 * 1.1 + 1.0 * 0.05;
  CHECK(std::abs(TotalLoss(c, 1, w).weighted_total - oracle) < 1e-6);
  LossWeights neg;
  neg.stop = -1;
  CHECK_THROWS_AS(TotalLoss(c, 1, neg), ValidationError);
  CHECK_THROWS_AS(TotalLoss(c, 3, w), ValidationError);
}

}  // namespace
}  // namespace evc::objectives

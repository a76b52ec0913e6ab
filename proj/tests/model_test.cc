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

#include "doctest.h"
#include "evc/model.h"
#include "test_util.h"

namespace evc::model {
namespace {

ModelConfig SmallConfig() {
  ModelConfig c;
  c.phoneme_vocab = 12;
  c.n_mels = 10;
  c.d_embed = 6;
  c.d_hidden = 8;
  c.d_linguistic = 6;
  c.d_style = 5;
  c.d_classifier = 7;
  c.d_prenet = 6;
  c.d_decoder = 8;
  c.d_attention = 5;
  c.num_classes = 4;
  c.max_decode_steps = 30;
  return c;
}

signal::MelSpectrogram RandomMel(Rng* rng, int frames, int bins) {
  signal::MelSpectrogram m;
  m.frames.resize(frames, bins);
  for (Eigen::Index i = 0; i < m.frames.size(); ++i) m.frames(i) = rng->Uniform(-11, 2);
  return m;
}

corpus::PhonemeSequence Phonemes(std::vector<int> ids) { return {std::move(ids)}; }

TEST_CASE("text encoder shape, determinism and sensitivity") {
  const ModelState s = InitModel(SmallConfig(), 3);
  const auto p = Phonemes({2, 3, 4, 1, 5, 6, 0});
  const auto e = TextEncode(p, s);
  CHECK(e.length() == 7);
  CHECK(e.vectors.cols() == 6);
  CHECK(e.source == Source::kText);
  CHECK(TextEncode(p, s).vectors == e.vectors);
  auto q = p;
  q.ids[3] = 7;
  CHECK(TextEncode(q, s).vectors != e.vectors);
  CHECK_THROWS_AS(TextEncode(Phonemes({2, 12}), s), ValidationError);
  CHECK_THROWS_AS(TextEncode(Phonemes({}), s), ValidationError);
}

TEST_CASE("recognition encoder shape, determinism and sensitivity") {
  const ModelState s = InitModel(SmallConfig(), 4);
  Rng rng(1);
  const auto mel = RandomMel(&rng, 23, 10);
  const auto e = AsrEncode(mel, s);
  CHECK(e.length() >= 1);
  CHECK(e.length() <= 23);
  CHECK(e.vectors.cols() == 6);
  CHECK(e.source == Source::kAudio);
  CHECK(AsrEncode(mel, s).vectors == e.vectors);
  auto other = mel;
  other.frames(5, 3) += 1.0;
  const auto e2 = AsrEncode(other, s);
  CHECK((e2.length() != e.length() || e2.vectors != e.vectors));
  CHECK_THROWS_AS(AsrEncode(RandomMel(&rng, 5, 9), s), ValidationError);
  // A one-frame input still satisfies L <= T.
  CHECK(AsrEncode(RandomMel(&rng, 1, 10), s).length() == 1);
}

TEST_CASE("emotion encoder returns one finite vector") {
  const ModelState s = InitModel(SmallConfig(), 5);
  Rng rng(2);
  const auto mel = RandomMel(&rng, 17, 10);
  const auto h = EmotionEncode(mel, s);
  CHECK(h.h.size() == 5);
  CHECK(AllFinite(h.h));
  auto reversed = mel;
  reversed.frames = mel.frames.colwise().reverse();
  CHECK(AllFinite(EmotionEncode(reversed, s).h));
  CHECK_THROWS_AS(EmotionEncode(RandomMel(&rng, 4, 11), s), ValidationError);
}

TEST_CASE("classifier posteriors are strictly inside the simplex") {
  const ModelState s = InitModel(SmallConfig(), 6);
  Rng rng(3);
  LinguisticEmbeddingSequence e;
  e.vectors = Matrix::Random(5, 6);
  const auto p = ClassifyLinguistic(e, s);
  REQUIRE(p.probs.rows() == 5);
  REQUIRE(p.probs.cols() == 4);
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(p.probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((p.probs.row(i).array() > 0).all());
    CHECK((p.probs.row(i).array() < 1).all());
  }
  CHECK(ClassifyLinguistic(e, s).probs == p.probs);
  e.vectors = Matrix::Random(5, 7);
  CHECK_THROWS_AS(ClassifyLinguistic(e, s), ValidationError);
}

TEST_CASE("emotion logits are V times h") {
  ModelState s = InitModel(SmallConfig(), 7);
  Matrix& v = s.params.at("style.head");
  v.setZero();
  v.topLeftCorner(4, 4).setIdentity();
  EmotionEmbedding h{RowVector::Zero(5)};
  h.h(0) = 1.0;
  const RowVector logits = EmotionLogits(h, s);
  CHECK(logits(0) == 1.0);
  CHECK(logits.tail(3).isZero());

  v.setZero();
  CHECK(EmotionLogits(h, s).isZero());

  Rng rng(4);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.Normal();
  for (Eigen::Index i = 0; i < h.h.size(); ++i) h.h(i) = rng.Normal();
  const RowVector got = EmotionLogits(h, s);
  for (int r = 0; r < 4; ++r) {
    double expected = 0.0;
    for (int c = 0; c < 5; ++c) expected += v(r, c) * h.h(c);
    CHECK(got(r) == doctest::Approx(expected).epsilon(1e-12));
  }
  CHECK_THROWS_AS(EmotionLogits(EmotionEmbedding{RowVector::Zero(4)}, s), ValidationError);
}

TEST_CASE("teacher-forced and free-running decode contracts") {
  const ModelState s = InitModel(SmallConfig(), 8);
  Rng rng(5);
  LinguisticEmbeddingSequence e;
  e.vectors = Matrix::Random(7, 6);
  const EmotionEmbedding h{RowVector::Random(5)};
  const auto teacher = RandomMel(&rng, 80, 10);
  const auto tf = Decode(e, h, s, &teacher);
  CHECK(tf.steps() == 40);
  CHECK(tf.mel.rows() == 80);
  CHECK(tf.mel.cols() == 10);
  CHECK_FALSE(tf.truncated);
  const auto odd = RandomMel(&rng, 9, 10);
  CHECK(Decode(e, h, s, &odd).steps() == 5);

  const auto fr = Decode(e, h, s);
  CHECK(fr.steps() >= 1);
  CHECK(fr.steps() <= 30);
  CHECK(fr.mel.rows() == 2 * fr.steps());
  if (fr.steps() < 30) CHECK(fr.stop_probs(fr.steps() - 1) > 0.5);
  for (const auto* d : {&tf, &fr}) {
    CHECK(d->attention.weights.cols() == 7);
    for (Eigen::Index i = 0; i < d->attention.weights.rows(); ++i) {
      CHECK(std::abs(d->attention.weights.row(i).sum() - 1.0) < 1e-5);
      CHECK((d->attention.weights.row(i).array() >= 0).all());
    }
    CHECK((d->stop_probs.array() >= 0).all());
    CHECK((d->stop_probs.array() <= 1).all());
  }
  CHECK(Decode(e, h, s).mel == fr.mel);
}

TEST_CASE("a decoder that never stops is flagged, not thrown") {
  ModelState s = InitModel(SmallConfig(), 9);
  s.params.at("dec.stop.b")(0, 0) = -50.0;
  s.params.at("dec.trans.b")(0, 0) = 50.0;
  LinguisticEmbeddingSequence e;
  e.vectors = Matrix::Random(40, 6);
  const auto out = Decode(e, EmotionEmbedding{RowVector::Zero(5)}, s);
  CHECK(out.truncated);
  CHECK(out.steps() == 30);
}

TEST_CASE("a stalled alignment is pushed on and ends the decode") {
  ModelConfig c = SmallConfig();
  c.max_decode_steps = 200;
  ModelState s = InitModel(c, 9);
  s.params.at("dec.stop.b")(0, 0) = -50.0;
  s.params.at("dec.trans.b")(0, 0) = -50.0;  // never move on by itself
  LinguisticEmbeddingSequence e;
  e.vectors = Matrix::Random(3, 6);
  const auto out = Decode(e, EmotionEmbedding{RowVector::Zero(5)}, s);
  CHECK_FALSE(out.truncated);
  CHECK(out.steps() < 100);
  Eigen::Index last = 0;
  for (Eigen::Index i = 0; i < out.attention.weights.rows(); ++i) {
    Eigen::Index at = 0;
    out.attention.weights.row(i).maxCoeff(&at);
    CHECK(at >= last);
    last = at;
  }
  CHECK(last == 2);

  // Teacher forcing is never altered.
  const signal::MelSpectrogram teacher{Matrix::Constant(2 * 150, c.n_mels, -5.0), ""};
  CHECK(Decode(e, EmotionEmbedding{RowVector::Zero(5)}, s, &teacher).steps() == 150);
}

TEST_CASE("attention advances monotonically") {
  ModelState s = InitModel(SmallConfig(), 10);
  s.params.at("dec.stop.b")(0, 0) = -50.0;
  s.params.at("dec.trans.b")(0, 0) = 50.0;  // always move on
  LinguisticEmbeddingSequence e;
  e.vectors = Matrix::Random(4, 6);
  const auto out = Decode(e, EmotionEmbedding{RowVector::Zero(5)}, s);
  Eigen::Index last = 0;
  for (Eigen::Index t = 0; t < out.attention.weights.rows(); ++t) {
    Eigen::Index arg;
    out.attention.weights.row(t).maxCoeff(&arg);
    CHECK(arg >= last);
    last = arg;
  }
  CHECK(last == 3);
}

TEST_CASE("shape validation catches mismatched arrays") {
  ModelState s = InitModel(SmallConfig(), 11);
  CHECK_NOTHROW(s.ValidateShapes());
  s.params.at("style.head") = Matrix::Zero(3, 5);
  CHECK_THROWS_AS(s.ValidateShapes(), ValidationError);
  s = InitModel(SmallConfig(), 11);
  s.params.erase("dec.out.w");
  CHECK_THROWS_AS(s.ValidateShapes(), ValidationError);
  ModelConfig bad = SmallConfig();
  bad.num_classes = 1;
  CHECK_THROWS_AS(InitModel(bad, 1), ValidationError);
}

TEST_CASE("init and fingerprint are deterministic in the seed") {
  const ModelState a = InitModel(SmallConfig(), 12);
  const ModelState b = InitModel(SmallConfig(), 12);
  const ModelState c = InitModel(SmallConfig(), 13);
  CHECK(a.Fingerprint() == b.Fingerprint());
  CHECK(a.Fingerprint() != c.Fingerprint());
  CHECK(a.params.at("style.head").rows() == 4);
  CHECK(a.params.at("style.head").cols() == 5);
}

TEST_CASE("shape contracts hold over random configs") {
  Rng rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    ModelConfig c;
    c.phoneme_vocab = 3 + static_cast<int>(rng.Below(10));
    c.n_mels = 1 + static_cast<int>(rng.Below(12));
    c.d_embed = 1 + static_cast<int>(rng.Below(8));
    c.d_hidden = 1 + static_cast<int>(rng.Below(8));
    c.d_linguistic = 1 + static_cast<int>(rng.Below(8));
    c.d_style = 1 + static_cast<int>(rng.Below(8));
    c.d_classifier = 1 + static_cast<int>(rng.Below(8));
    c.d_prenet = 1 + static_cast<int>(rng.Below(8));
    c.d_decoder = 1 + static_cast<int>(rng.Below(8));
    c.d_attention = 1 + static_cast<int>(rng.Below(8));
    c.num_classes = 2 + static_cast<int>(rng.Below(6));
    c.reduction_factor = 1 + static_cast<int>(rng.Below(4));
    c.max_decode_steps = 1 + static_cast<int>(rng.Below(20));
    const ModelState s = InitModel(c, trial);
    const int t = 1 + static_cast<int>(rng.Below(30));
    const auto mel = RandomMel(&rng, t, c.n_mels);
    CAPTURE(trial);
    const auto e = AsrEncode(mel, s);
    CHECK(e.length() <= t);
    const auto d = Decode(e, EmotionEncode(mel, s), s, &mel);
    CHECK(d.steps() == (t + c.reduction_factor - 1) / c.reduction_factor);
    CHECK(ClassifyLinguistic(e, s).probs.cols() == c.num_classes);
    const auto f = Decode(e, EmotionEncode(mel, s), s);
    CHECK(f.steps() <= c.max_decode_steps);
  }
}

}  // namespace
}  // namespace evc::model

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

#include <filesystem>

#include "doctest.h"
#include "evc/inference.h"
#include "test_util.h"

namespace evc::inference {
namespace {

namespace fs = std::filesystem;

signal::AudioConfig SmallAudio() {
  signal::AudioConfig a;
  a.n_fft = 512;
  a.win_length = 400;
  a.hop_length = 100;
  a.n_mels = 12;
  return a;
}

model::ModelState Stage2Model(uint64_t seed) {
  model::ModelConfig c;
  c.n_mels = 12;
  c.d_embed = 8;
  c.d_hidden = 8;
  c.d_linguistic = 6;
  c.d_style = 5;
  c.d_classifier = 6;
  c.d_prenet = 6;
  c.d_decoder = 8;
  c.d_attention = 6;
  c.num_classes = 3;
  c.max_decode_steps = 15;
  model::ModelState s = model::InitModel(c, seed);
  s.stage = 2;
  return s;
}

std::vector<signal::MelSpectrogram> ToneMels(int n, const signal::AudioConfig& audio) {
  std::vector<signal::MelSpectrogram> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(signal::ExtractMel(
        test::Tone(120.0 + 10.0 * i, 0.1 + 0.01 * i, audio.sample_rate, 0.4), audio));
  }
  return out;
}

TEST_CASE("average embedding is the arithmetic mean") {
  const auto audio = SmallAudio();
  const auto s = Stage2Model(1);
  const auto refs = ToneMels(30, audio);
  CHECK(AverageEmotionEmbedding({refs[0]}, s).h == model::EmotionEncode(refs[0], s).h);
  const RowVector u = model::EmotionEncode(refs[0], s).h;
  const RowVector v = model::EmotionEncode(refs[1], s).h;
  CHECK((AverageEmotionEmbedding({refs[0], refs[1]}, s).h - (u + v) / 2).cwiseAbs().maxCoeff() <
        1e-6);

  RowVector oracle = RowVector::Zero(5);
  for (const auto& m : refs) oracle += model::EmotionEncode(m, s).h;
  oracle /= 30.0;
  const RowVector avg = AverageEmotionEmbedding(refs, s).h;
  CHECK((avg - oracle).cwiseAbs().maxCoeff() < 1e-6);

  auto reversed = refs;
  std::reverse(reversed.begin(), reversed.end());
  CHECK((AverageEmotionEmbedding(reversed, s).h - avg).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(AverageEmotionEmbedding({}, s), ValidationError);
}

TEST_CASE("embedding table caches by checkpoint and reference set") {
  const auto audio = SmallAudio();
  const auto s = Stage2Model(2);
  const auto refs = ToneMels(4, audio);
  EmbeddingTable t(s.Fingerprint());
  const RowVector first = t.Ensure("happy", refs, s).h;
  t.Ensure("happy", refs, s);
  CHECK(t.computed() == 1);
  t.Ensure("happy", {refs[0], refs[1]}, s);
  CHECK(t.computed() == 2);
  CHECK(t.Resolve("happy").h != first);
  CHECK_THROWS_AS(t.Resolve("sad"), ValidationError);
  CHECK_THROWS_AS(t.Ensure("happy", refs, Stage2Model(3)), ValidationError);

  const std::string dir = test::ScratchDir("embedding_cache");
  t.Save(dir + "/cache.json");
  EmbeddingTable reopened = OpenEmbeddingCache(dir + "/cache.json", s);
  CHECK(reopened.Resolve("happy").h == t.Resolve("happy").h);
  reopened.Ensure("happy", {refs[0], refs[1]}, s);
  CHECK(reopened.computed() == 0);
  // A cache from another checkpoint is ignored.
  CHECK_FALSE(OpenEmbeddingCache(dir + "/cache.json", Stage2Model(3)).Contains("happy"));
  fs::remove_all(dir);
}

TEST_CASE("conversion pipeline contracts") {
  const auto audio = SmallAudio();
  const auto s = Stage2Model(4);
  EmbeddingTable t(s.Fingerprint());
  t.Ensure("happy", ToneMels(3, audio), s);
  const auto src = test::Tone(180.0, 0.25, audio.sample_rate, 0.4);
  VocoderSelection gl;
  gl.griffin_lim_iterations = 4;
  const auto a = Convert(src, "happy", t, s, gl, audio, 9);
  const auto b = Convert(src, "happy", t, s, gl, audio, 9);
  CHECK(a.audio.samples == b.audio.samples);
  CHECK(a.frames_in == audio.NumFrames(src.samples.size()));
  CHECK(a.audio.samples.size() ==
        static_cast<size_t>(a.decoder.mel.rows() * audio.hop_length));
  CHECK(a.mel.frames.minCoeff() >= audio.log_floor);
  CHECK(a.decoder.steps() <= 15);
  CHECK_THROWS_AS(Convert(src, "sad", t, s, gl, audio, 9), ValidationError);

  auto stage1 = s;
  stage1.stage = 1;
  CHECK_THROWS_AS(Convert(src, t.Resolve("happy"), stage1, gl, audio, 9), ValidationError);
  CHECK_THROWS_AS(Convert(src, model::EmotionEmbedding{RowVector::Zero(4)}, s, gl, audio, 9),
                  ValidationError);
}

TEST_CASE("batch conversion records every attempt") {
  const auto audio = SmallAudio();
  const auto s = Stage2Model(5);
  EmbeddingTable t(s.Fingerprint());
  t.Ensure("happy", ToneMels(2, audio), s);
  t.Ensure("sad", ToneMels(3, audio), s);
  const std::string dir = test::ScratchDir("batch_convert");
  VocoderSelection gl;
  gl.griffin_lim_iterations = 2;
  CHECK(BatchConvert({}, t, s, gl, audio, dir + "/out", 1).empty());

  std::vector<ConversionRequest> reqs;
  for (int i = 0; i < 3; ++i) {
    corpus::UtteranceRecord r;
    r.id = "src" + std::to_string(i);
    r.speaker = "spk";
    r.text = "ma";
    r.emotion = "neutral";
    const std::string path = dir + "/" + r.id + ".wav";
    if (i != 1) signal::WriteWav(path, test::Tone(150.0 + 20 * i, 0.2, audio.sample_rate, 0.3));
    for (const char* emo : {"happy", "sad", "angry"}) reqs.push_back({r, path, emo});
  }
  const auto report = BatchConvert(reqs, t, s, gl, audio, dir + "/out", 1);
  REQUIRE(report.size() == 9);
  int ok = 0;
  for (const auto& r : report) {
    if (r.ok) {
      ++ok;
      CHECK(fs::exists(r.output_path));
      CHECK(fs::exists(r.decoder_path));
      std::string id;
      const auto d = LoadDecoderOutput(r.decoder_path, &id);
      CHECK(id == r.source_id);
      CHECK(d.mel.rows() == r.frames_out);
    } else {
      CHECK_FALSE(r.error.empty());
    }
  }
  // Missing source audio (src1) and the unknown emotion (angry) fail alone.
  CHECK(ok == 4);

  WriteReport(dir + "/report.jsonl", report);
  const auto back = ReadReport(dir + "/report.jsonl");
  REQUIRE(back.size() == report.size());
  for (size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].source_id == report[i].source_id);
    CHECK(back[i].target_emotion == report[i].target_emotion);
    CHECK(back[i].frames_out == report[i].frames_out);
    CHECK(back[i].truncated == report[i].truncated);
    CHECK(back[i].ok == report[i].ok);
    CHECK(back[i].error == report[i].error);
  }
  fs::remove_all(dir);
}

}  // namespace
}  // namespace evc::inference

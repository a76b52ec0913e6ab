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
#include <filesystem>

#include "doctest.h"
#include "evc/vocoder.h"
#include "test_util.h"

namespace evc::vocoder {
namespace {

signal::AudioConfig SmallAudio() {
  signal::AudioConfig a;
  a.n_fft = 512;
  a.win_length = 400;
  a.hop_length = 100;
  a.n_mels = 20;
  return a;
}

// Tone with a silent tail, so the model also sees silence frames.
signal::Waveform ToneThenSilence(double hz, double seconds, int rate) {
  signal::Waveform w = test::Tone(hz, seconds, rate, 0.5);
  w.samples.resize(w.samples.size() + static_cast<size_t>(rate / 10), 0.0);
  return w;
}

VocoderCorpus ToneCorpus(const signal::AudioConfig& audio) {
  VocoderCorpus c;
  for (double hz : {150.0, 200.0, 250.0, 300.0, 350.0, 400.0}) {
    c.train.push_back(MakeVocoderExample(ToneThenSilence(hz, 0.4, audio.sample_rate), audio));
  }
  c.heldout.push_back(MakeVocoderExample(ToneThenSilence(275.0, 0.3, audio.sample_rate), audio));
  return c;
}

VocoderConfig FastConfig(int steps) {
  VocoderConfig c;
  c.max_steps = steps;
  c.batch_samples = 256;
  c.d_hidden = 32;
  c.validate_every = 50;
  c.heldout_positions = 500;
  return c;
}

// Frequency of the largest DFT magnitude, skipping DC.
double PeakHz(const signal::Waveform& w) {
  const size_t n = w.samples.size();
  double best = -1.0, best_hz = 0.0;
  for (size_t k = 1; k < n / 2; ++k) {
    double re = 0, im = 0;
    for (size_t t = 0; t < n; ++t) {
      const double ph = 2.0 * M_PI * static_cast<double>(k * t % n) / static_cast<double>(n);
      re += w.samples[t] * std::cos(ph);
      im -= w.samples[t] * std::sin(ph);
    }
    const double mag = re * re + im * im;
    if (mag > best) {
      best = mag;
      best_hz = static_cast<double>(k) * w.sample_rate / static_cast<double>(n);
    }
  }
  return best_hz;
}

TEST_CASE("mu-law companding matches the closed form") {
  CHECK(MuLawCompress(0.0) == 0.0);
  CHECK(MuLawCompress(1.0) == doctest::Approx(1.0));
  CHECK(MuLawCompress(-1.0) == doctest::Approx(-1.0));
  CHECK(MuLawCompress(0.5) == doctest::Approx(std::log(128.5) / std::log(256.0)));
  CHECK(MuLawCompress(-0.25) == doctest::Approx(-std::log(64.75) / std::log(256.0)));
  CHECK(MuLawEncode(-1.0) == 0);
  CHECK(MuLawEncode(1.0) == 255);
  CHECK(MuLawEncode(2.0) == 255);  // clipped
  CHECK_THROWS_AS(MuLawDecode(256), ValidationError);
  for (int q = 0; q < kMuLawClasses; ++q) CHECK(MuLawEncode(MuLawDecode(q)) == q);
}

TEST_CASE("mu-law round trip error over a grid") {
  double worst_companded = 0.0, worst_small = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double x = -1.0 + 2.0 * i / 1000.0;
    CHECK(MuLawExpand(MuLawCompress(x)) == doctest::Approx(x).epsilon(1e-12));
    const double back = MuLawDecode(MuLawEncode(x));
    worst_companded =
        std::max(worst_companded, std::abs(MuLawCompress(back) - MuLawCompress(x)));
    if (std::abs(x) <= 0.25) worst_small = std::max(worst_small, std::abs(back - x));
  }
  // Half a quantization level in the companded domain.
  CHECK(worst_companded <= 1.0 / 255.0 + 1e-12);
  // Near zero the signal-domain step is fine as well.
  CHECK(worst_small < 1.0 / 128.0);
}

TEST_CASE("provenance names and vocoder kinds") {
  for (auto p : {Provenance::kScratch, Provenance::kPretrained, Provenance::kFineTuned}) {
    CHECK(ProvenanceFromName(ProvenanceName(p)) == p);
  }
  CHECK_THROWS_AS(ProvenanceFromName("borrowed"), ValidationError);
  CHECK(VocoderKindFromName("griffin-lim") == VocoderKind::kGriffinLim);
  CHECK(VocoderKindFromName("neural") == VocoderKind::kNeural);
  CHECK_THROWS_AS(VocoderKindFromName("wavenet"), ValidationError);
}

TEST_CASE("zero-step training and fine-tune preconditions") {
  const auto audio = SmallAudio();
  const VocoderCorpus data = ToneCorpus(audio);
  const auto zero = PretrainVocoder(data, FastConfig(0), audio);
  CHECK(zero.state.provenance == Provenance::kScratch);
  CHECK(zero.state.params == InitVocoder(FastConfig(0), audio).params);
  CHECK_THROWS_AS(FineTuneVocoder(zero.state, data, FastConfig(5), audio), ValidationError);

  const auto pre = PretrainVocoder(data, FastConfig(3), audio);
  CHECK(pre.state.provenance == Provenance::kPretrained);
  const auto same = FineTuneVocoder(pre.state, data, FastConfig(0), audio);
  CHECK(same.state.provenance == Provenance::kPretrained);
  CHECK(same.state.params == pre.state.params);
  CHECK(FineTuneVocoder(pre.state, data, FastConfig(2), audio).state.provenance ==
        Provenance::kFineTuned);

  // Mels from another audio config are rejected.
  auto other = SmallAudio();
  other.n_mels = 24;
  CHECK_THROWS_AS(FineTuneVocoder(pre.state, ToneCorpus(other), FastConfig(2), audio),
                  ValidationError);
  CHECK_THROWS_AS(FineTuneVocoder(pre.state, data, FastConfig(2), other), ValidationError);
}

TEST_CASE("training is deterministic and lowers held-out nll") {
  const auto audio = SmallAudio();
  const VocoderCorpus data = ToneCorpus(audio);
  const auto a = PretrainVocoder(data, FastConfig(300), audio);
  const auto b = PretrainVocoder(data, FastConfig(300), audio);
  CHECK(a.state.params == b.state.params);
  CHECK(a.metrics == b.metrics);
  CHECK(a.metrics.size() == 300);
  CHECK(a.final_nll < a.initial_nll - 1.0);
}

TEST_CASE("archive round trip and synthesis contracts") {
  const auto audio = SmallAudio();
  const VocoderCorpus data = ToneCorpus(audio);
  const auto trained = PretrainVocoder(data, FastConfig(20), audio).state;
  const std::string dir = test::ScratchDir("vocoder_archive");
  const std::string path = dir + "/v.evc";
  SaveVocoder(path, trained);
  const VocoderState back = LoadVocoder(path);
  CHECK(back.params == trained.params);
  CHECK(back.Fingerprint() == trained.Fingerprint());
  CHECK(back.provenance == Provenance::kPretrained);

  signal::MelSpectrogram mel = data.train[0].mel;
  mel.frames = mel.frames.topRows(9).eval();
  const auto w1 = Synthesize(mel, VocoderKind::kNeural, &back, audio, 5);
  CHECK(w1.samples.size() == 900);
  for (double s : w1.samples) CHECK(std::abs(s) <= 1.0);
  CHECK(Synthesize(mel, VocoderKind::kNeural, &back, audio, 5).samples == w1.samples);
  CHECK(Synthesize(mel, VocoderKind::kNeural, &back, audio, 6).samples != w1.samples);
  CHECK(Synthesize(mel, VocoderKind::kGriffinLim, nullptr, audio, 5, 4).samples.size() == 900);
  CHECK_THROWS_AS(Synthesize(mel, VocoderKind::kNeural, nullptr, audio, 5), ValidationError);

  mel.fingerprint = "feedface";
  CHECK_THROWS_AS(SynthesizeNeural(mel, back, audio, 5), ValidationError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("a trained vocoder follows its conditioning") {
  const auto audio = SmallAudio();
  auto cfg = FastConfig(1500);
  cfg.batch_samples = 512;
  const auto trained = PretrainVocoder(ToneCorpus(audio), cfg, audio).state;

  auto peak = [&](double hz) {
    const auto mel = signal::ExtractMel(test::Tone(hz, 0.3, audio.sample_rate, 0.5), audio);
    return PeakHz(SynthesizeNeural(mel, trained, audio, 3));
  };
  const double low = peak(200.0);
  const double high = peak(350.0);
  CAPTURE(low);
  CAPTURE(high);
  CHECK(low < 400.0);
  CHECK(high > low);

  signal::MelSpectrogram silent{Matrix::Constant(20, audio.n_mels, audio.log_floor),
                                audio.Fingerprint()};
  const auto quiet = SynthesizeNeural(silent, trained, audio, 4);
  double sq = 0.0;
  for (double s : quiet.samples) sq += s * s;
  CHECK(std::sqrt(sq / static_cast<double>(quiet.samples.size())) < 0.05);
}

}  // namespace
}  // namespace evc::vocoder

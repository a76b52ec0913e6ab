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

// Waveform generation: Griffin-Lim, or a small autoregressive sample model
// over 8-bit mu-law classes.
//
// The neural model predicts p(q_t | q_{t-k..t-1}, mel frame) with one hidden
// layer. Its input holds the k previous companded samples, a projection c of
// the (nearest) mel frame, and their outer product; the bilinear block lets
// the frame steer the linear-prediction coefficients, which is what a
// pitch-following oscillator needs. Training is teacher forced over randomly
// drawn sample positions, so a step is a handful of dense matrix products.

#ifndef EVC_VOCODER_H_
#define EVC_VOCODER_H_

#include <string>
#include <vector>

#include "evc/autodiff.h"
#include "evc/signal.h"

namespace evc::vocoder {

constexpr int kMuLawClasses = 256;

// Continuous companding of x in [-1, 1] and its inverse.
double MuLawCompress(double x);
double MuLawExpand(double y);
// Quantized forms: class index in [0, 256) and back to a sample.
int MuLawEncode(double x);
double MuLawDecode(int q);
// Companded value of a class index, in [-1, 1].
double MuLawLevel(int q);

enum class Provenance { kScratch, kPretrained, kFineTuned };
std::string ProvenanceName(Provenance p);
Provenance ProvenanceFromName(const std::string& name);

struct VocoderConfig {
  int context = 4;     // previous samples seen
  int d_cond = 8;      // mel projection width
  int d_hidden = 64;
  int batch_samples = 1024;
  int max_steps = 2000;
  double learning_rate = 2e-3;
  int warmup_steps = 50;
  double grad_clip = 1.0;
  uint64_t seed = 1;
  int validate_every = 100;
  // Positions drawn from each held-out utterance for the NLL estimate.
  int heldout_positions = 2000;
  std::string metrics_path;

  void Validate() const;
  std::string Fingerprint() const;
};

struct VocoderState {
  ad::ParameterSet params;
  std::string audio_fingerprint;
  Provenance provenance = Provenance::kScratch;
  int n_mels = 80;
  int context = 4;
  int d_cond = 8;
  int d_hidden = 64;

  std::string Fingerprint() const;
  void ValidateShapes() const;
};

struct VocoderExample {
  std::vector<double> samples;
  signal::MelSpectrogram mel;
};

struct VocoderCorpus {
  std::vector<VocoderExample> train;
  std::vector<VocoderExample> heldout;
};

VocoderExample MakeVocoderExample(const signal::Waveform& w,
                                  const signal::AudioConfig& audio);

VocoderState InitVocoder(const VocoderConfig& cfg, const signal::AudioConfig& audio);

// Mean negative log likelihood (nats per sample) over fixed positions of
// every held-out utterance.
double HeldoutNll(const VocoderState& state, const std::vector<VocoderExample>& data,
                  const signal::AudioConfig& audio, int positions, uint64_t seed);

struct VocoderTrainResult {
  VocoderState state;
  std::vector<std::string> metrics;
  double initial_nll = 0;
  double final_nll = 0;
};

// Starts from a fresh state; provenance becomes pretrained once any step
// runs.
VocoderTrainResult PretrainVocoder(const VocoderCorpus& data, const VocoderConfig& cfg,
                                   const signal::AudioConfig& audio);
// Continues training on emotional audio only. Requires a pretrained or
// fine-tuned state.
VocoderTrainResult FineTuneVocoder(const VocoderState& state, const VocoderCorpus& data,
                                   const VocoderConfig& cfg,
                                   const signal::AudioConfig& audio);

void SaveVocoder(const std::string& path, const VocoderState& state);
VocoderState LoadVocoder(const std::string& path);

// Neural synthesis: autoregressive sampling at temperature 1 with the given
// seed. Output length is T * hop_length.
signal::Waveform SynthesizeNeural(const signal::MelSpectrogram& mel,
                                  const VocoderState& state,
                                  const signal::AudioConfig& audio, uint64_t seed);

enum class VocoderKind { kGriffinLim, kNeural };
VocoderKind VocoderKindFromName(const std::string& name);

// Dispatches on kind; `neural` must be set for kNeural.
signal::Waveform Synthesize(const signal::MelSpectrogram& mel, VocoderKind kind,
                            const VocoderState* neural,
                            const signal::AudioConfig& audio, uint64_t seed,
                            int griffin_lim_iterations = 60);

}  // namespace evc::vocoder

#endif  // EVC_VOCODER_H_

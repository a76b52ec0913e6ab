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

// Deterministic signal processing: framing, log-mel analysis, Griffin-Lim
// inversion, mel-cepstral analysis and autocorrelation voicing.
//
// Framing is centred: frame t covers samples [t*hop - n_fft/2, t*hop + n_fft/2)
// of the zero-padded signal, so a signal of N samples yields 1 + N/hop frames.
// Every analysis below shares this framing, which is what lets MCEP and
// voicing frames line up with mel frames.

#ifndef EVC_SIGNAL_H_
#define EVC_SIGNAL_H_

#include <complex>
#include <string>
#include <vector>

#include "evc/common.h"

namespace evc::signal {

struct AudioConfig {
  int sample_rate = 16000;
  int n_fft = 1024;
  int win_length = 800;
  int hop_length = 200;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  double log_floor = -11.512925464970229;  // ln(1e-5)

  void Validate() const;
  // Stable digest of every field; embedded in mel files and checkpoints.
  std::string Fingerprint() const;
  int num_bins() const { return n_fft / 2 + 1; }
  // Frames produced by centred framing for a signal of num_samples.
  int NumFrames(size_t num_samples) const {
    return 1 + static_cast<int>(num_samples / hop_length);
  }
};

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  // Non-empty, finite, within [-1, 1].
  void Validate() const;
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct MelSpectrogram {
  Matrix frames;            // T x n_mels, natural-log magnitudes
  std::string fingerprint;  // AudioConfig::Fingerprint of the producer

  Eigen::Index num_frames() const { return frames.rows(); }
};

struct McepSequence {
  Matrix frames;  // T x (order + 1); column 0 is the energy term
  int order() const { return static_cast<int>(frames.cols()) - 1; }
};

struct VoicingConfig {
  double f0_min = 50.0;
  double f0_max = 500.0;
  double threshold = 0.3;
  // A frame is a silence candidate below this fraction of the loudest
  // frame's RMS, or below abs_gate.
  double relative_gate = 0.05;
  double abs_gate = 1e-4;
};

struct VoicingTrack {
  std::vector<bool> voiced;
  std::vector<double> f0;  // Hz, 0 where unvoiced
  int hop_length = 200;
  int sample_rate = 16000;

  size_t num_voiced() const;
  double voiced_duration_s() const {
    return static_cast<double>(num_voiced()) * hop_length / sample_rate;
  }
};

// 16-bit PCM mono RIFF files.
Waveform ReadWav(const std::string& path);
void WriteWav(const std::string& path, const Waveform& wav);

// n_mels x (n_fft/2+1) triangular filters on the HTK mel scale.
Matrix MelFilterbank(const AudioConfig& cfg);
std::vector<double> MelCenterFrequencies(const AudioConfig& cfg);
double HzToMel(double hz);
double MelToHz(double mel);

// Hann window of win_length, zero padded (centred) to n_fft.
std::vector<double> AnalysisWindow(const AudioConfig& cfg);

// T x (n_fft/2+1) complex spectrum.
Eigen::MatrixXcd Stft(const std::vector<double>& samples, const AudioConfig& cfg);
// Weighted overlap-add inverse of Stft, trimmed to num_samples.
std::vector<double> Istft(const Eigen::MatrixXcd& spec, const AudioConfig& cfg,
                          size_t num_samples);

MelSpectrogram ExtractMel(const Waveform& w, const AudioConfig& cfg);

// Output length is T * hop_length. Initial phase is uniform with the given
// seed.
Waveform GriffinLimInvert(const MelSpectrogram& mel, const AudioConfig& cfg,
                          int iterations, uint64_t seed = 0);

// Lifter length of the cepstral envelope; requested MCEP orders must stay
// below it.
int EnvelopeOrder(const AudioConfig& cfg);
McepSequence ExtractMcep(const Waveform& w, int order, const AudioConfig& cfg,
                         double alpha = 0.42);
// Frequency warping of a cepstrum (c1 of any length) to order m2.
std::vector<double> FrequencyTransform(const std::vector<double>& c1, int m2,
                                       double alpha);

VoicingTrack DetectVoicing(const Waveform& w, const AudioConfig& cfg,
                           const VoicingConfig& vcfg = {});

// Header + matrix layout with the fingerprint embedded.
void WriteMel(const std::string& path, const MelSpectrogram& mel);
MelSpectrogram ReadMel(const std::string& path);

}  // namespace evc::signal

#endif  // EVC_SIGNAL_H_

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

#include "evc/signal.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

#include <unsupported/Eigen/FFT>

#include "evc/binary_io.h"

namespace evc::signal {

namespace {

using Complex = std::complex<double>;

constexpr char kMelMagic[8] = {'E', 'V', 'C', 'M', 'E', 'L', '1', '\0'};
constexpr uint32_t kMelVersion = 1;

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    fft_.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  }
  void Forward(const std::vector<double>& in, std::vector<Complex>* out) {
    fft_.fwd(*out, in);
  }
  void Inverse(const std::vector<Complex>& in, std::vector<double>* out) {
    fft_.inv(*out, in, n_);
  }

 private:
  int n_;
  Eigen::FFT<double> fft_;
};

std::vector<double> CenterPad(const std::vector<double>& x, int pad) {
  std::vector<double> out(x.size() + 2 * static_cast<size_t>(pad), 0.0);
  std::copy(x.begin(), x.end(), out.begin() + pad);
  return out;
}

}  // namespace

void AudioConfig::Validate() const {
  if (sample_rate <= 0) throw ValidationError("sample_rate must be positive");
  if (hop_length < 1 || hop_length > win_length || win_length > n_fft) {
    throw ValidationError("require 1 <= hop_length <= win_length <= n_fft");
  }
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw ValidationError("require 0 <= fmin < fmax <= sample_rate/2");
  }
  if (n_mels < 1) throw ValidationError("n_mels must be >= 1");
  if (!std::isfinite(log_floor)) throw ValidationError("log_floor must be finite");
}

std::string AudioConfig::Fingerprint() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "sr=%d;nfft=%d;win=%d;hop=%d;mels=%d;fmin=%.17g;fmax=%.17g;"
                "floor=%.17g",
                sample_rate, n_fft, win_length, hop_length, n_mels, fmin, fmax,
                log_floor);
  return HexDigest(Fnv1a(buf));
}

void Waveform::Validate() const {
  if (samples.empty()) throw ValidationError("waveform is empty");
  if (sample_rate <= 0) throw ValidationError("waveform sample rate invalid");
  for (double s : samples) {
    if (!std::isfinite(s) || s < -1.0 || s > 1.0) {
      throw ValidationError("waveform samples must be finite and in [-1, 1]");
    }
  }
}

size_t VoicingTrack::num_voiced() const {
  return static_cast<size_t>(std::count(voiced.begin(), voiced.end(), true));
}

// ---------------------------------------------------------------------------
// WAV

namespace {

void PutU16(std::string* s, uint16_t v) {
  s->push_back(static_cast<char>(v & 0xff));
  s->push_back(static_cast<char>((v >> 8) & 0xff));
}

void PutU32(std::string* s, uint32_t v) {
  for (int i = 0; i < 4; ++i) s->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t GetU32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[off + i]);
  return v;
}

uint16_t GetU16(const std::string& s, size_t off) {
  return static_cast<uint16_t>(static_cast<unsigned char>(s[off]) |
                               (static_cast<unsigned char>(s[off + 1]) << 8));
}

}  // namespace

void WriteWav(const std::string& path, const Waveform& wav) {
  const uint32_t n = static_cast<uint32_t>(wav.samples.size());
  std::string out;
  out.reserve(44 + 2 * n);
  out += "RIFF";
  PutU32(&out, 36 + 2 * n);
  out += "WAVEfmt ";
  PutU32(&out, 16);
  PutU16(&out, 1);  // PCM
  PutU16(&out, 1);  // mono
  PutU32(&out, static_cast<uint32_t>(wav.sample_rate));
  PutU32(&out, static_cast<uint32_t>(wav.sample_rate) * 2);
  PutU16(&out, 2);
  PutU16(&out, 16);
  out += "data";
  PutU32(&out, 2 * n);
  for (double x : wav.samples) {
    const double c = std::clamp(x, -1.0, 1.0);
    const long q = std::lround(c * 32767.0);
    PutU16(&out, static_cast<uint16_t>(static_cast<int16_t>(q)));
  }
  std::ofstream os = io::OpenForWrite(path);
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw IoError("write failed for '" + path + "'");
}

Waveform ReadWav(const std::string& path) {
  const std::string data = io::ReadText(path);
  if (data.size() < 12 || data.compare(0, 4, "RIFF") != 0 ||
      data.compare(8, 4, "WAVE") != 0) {
    throw ValidationError("'" + path + "' is not a RIFF/WAVE file");
  }
  size_t off = 12;
  bool have_fmt = false;
  int rate = 0;
  Waveform w;
  while (off + 8 <= data.size()) {
    const std::string id = data.substr(off, 4);
    const uint32_t size = GetU32(data, off + 4);
    const size_t body = off + 8;
    if (body + size > data.size()) {
      throw ValidationError("'" + path + "': truncated chunk " + id);
    }
    if (id == "fmt ") {
      if (size < 16) throw ValidationError("'" + path + "': short fmt chunk");
      const uint16_t format = GetU16(data, body);
      const uint16_t channels = GetU16(data, body + 2);
      rate = static_cast<int>(GetU32(data, body + 4));
      const uint16_t bits = GetU16(data, body + 14);
      if (format != 1 || channels != 1 || bits != 16) {
        throw ValidationError("'" + path + "': only mono 16-bit PCM is supported");
      }
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ValidationError("'" + path + "': data before fmt");
      const size_t n = size / 2;
      w.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const int16_t q = static_cast<int16_t>(GetU16(data, body + 2 * i));
        w.samples[i] = static_cast<double>(q) / 32767.0;
        if (w.samples[i] < -1.0) w.samples[i] = -1.0;
      }
      w.sample_rate = rate;
      return w;
    }
    off = body + size + (size & 1);
  }
  throw ValidationError("'" + path + "': no data chunk");
}

// ---------------------------------------------------------------------------
// Spectral analysis

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> MelEdges(const AudioConfig& cfg) {
  const double lo = HzToMel(cfg.fmin), hi = HzToMel(cfg.fmax);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    edges[i] = MelToHz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  }
  return edges;
}

}  // namespace

std::vector<double> MelCenterFrequencies(const AudioConfig& cfg) {
  const std::vector<double> edges = MelEdges(cfg);
  return std::vector<double>(edges.begin() + 1, edges.end() - 1);
}

Matrix MelFilterbank(const AudioConfig& cfg) {
  cfg.Validate();
  const std::vector<double> edges = MelEdges(cfg);
  const int bins = cfg.num_bins();
  Matrix fb = Matrix::Zero(cfg.n_mels, bins);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

std::vector<double> AnalysisWindow(const AudioConfig& cfg) {
  std::vector<double> w(cfg.n_fft, 0.0);
  const int offset = (cfg.n_fft - cfg.win_length) / 2;
  for (int i = 0; i < cfg.win_length; ++i) {
    // Periodic Hann.
    w[offset + i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / cfg.win_length);
  }
  return w;
}

Eigen::MatrixXcd Stft(const std::vector<double>& samples,
                      const AudioConfig& cfg) {
  cfg.Validate();
  const int frames = cfg.NumFrames(samples.size());
  const std::vector<double> padded = CenterPad(samples, cfg.n_fft / 2);
  const std::vector<double> window = AnalysisWindow(cfg);
  RealFft fft(cfg.n_fft);
  Eigen::MatrixXcd spec(frames, cfg.num_bins());
  std::vector<double> buf(cfg.n_fft);
  std::vector<Complex> out;
  for (int t = 0; t < frames; ++t) {
    const size_t start = static_cast<size_t>(t) * cfg.hop_length;
    for (int i = 0; i < cfg.n_fft; ++i) buf[i] = padded[start + i] * window[i];
    fft.Forward(buf, &out);
    for (int k = 0; k < cfg.num_bins(); ++k) spec(t, k) = out[k];
  }
  return spec;
}

std::vector<double> Istft(const Eigen::MatrixXcd& spec, const AudioConfig& cfg,
                          size_t num_samples) {
  const int frames = static_cast<int>(spec.rows());
  const std::vector<double> window = AnalysisWindow(cfg);
  const size_t total =
      static_cast<size_t>(std::max(frames - 1, 0)) * cfg.hop_length + cfg.n_fft;
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  RealFft fft(cfg.n_fft);
  std::vector<Complex> in(cfg.num_bins());
  std::vector<double> frame;
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < cfg.num_bins(); ++k) in[k] = spec(t, k);
    fft.Inverse(in, &frame);
    const size_t start = static_cast<size_t>(t) * cfg.hop_length;
    for (int i = 0; i < cfg.n_fft; ++i) {
      acc[start + i] += frame[i] * window[i];
      norm[start + i] += window[i] * window[i];
    }
  }
  std::vector<double> out(num_samples, 0.0);
  const size_t pad = cfg.n_fft / 2;
  for (size_t i = 0; i < num_samples && i + pad < total; ++i) {
    const double n = norm[i + pad];
    out[i] = n > 1e-8 ? acc[i + pad] / n : 0.0;
  }
  return out;
}

MelSpectrogram ExtractMel(const Waveform& w, const AudioConfig& cfg) {
  cfg.Validate();
  if (w.sample_rate != cfg.sample_rate) {
    throw ValidationError("sample rate mismatch: waveform " +
                          std::to_string(w.sample_rate) + " Hz vs config " +
                          std::to_string(cfg.sample_rate) + " Hz");
  }
  const Eigen::MatrixXcd spec = Stft(w.samples, cfg);
  const Matrix mag = spec.cwiseAbs();
  const Matrix fb = MelFilterbank(cfg);
  const double floor = std::exp(cfg.log_floor);
  MelSpectrogram mel;
  mel.frames = (mag * fb.transpose()).unaryExpr(
      [floor](double x) { return std::log(std::max(x, floor)); });
  mel.fingerprint = cfg.Fingerprint();
  return mel;
}

Waveform GriffinLimInvert(const MelSpectrogram& mel, const AudioConfig& cfg,
                          int iterations, uint64_t seed) {
  cfg.Validate();
  if (mel.fingerprint != cfg.Fingerprint()) {
    throw ValidationError("mel fingerprint " + mel.fingerprint +
                          " does not match audio config " + cfg.Fingerprint());
  }
  if (iterations < 1) throw ValidationError("iterations must be >= 1");
  if (mel.frames.cols() != cfg.n_mels || mel.frames.rows() < 1) {
    throw ValidationError("mel shape does not match the audio config");
  }
  const Matrix fb = MelFilterbank(cfg);
  const Matrix pinv = fb.completeOrthogonalDecomposition().pseudoInverse();
  const double silent = cfg.log_floor + 1e-9;
  const Matrix mel_lin =
      mel.frames.unaryExpr([silent](double x) { return x <= silent ? 0.0 : std::exp(x); });
  const Matrix magnitude = (mel_lin * pinv.transpose()).cwiseMax(0.0);

  const int frames = static_cast<int>(magnitude.rows());
  const size_t length = static_cast<size_t>(frames) * cfg.hop_length;
  Rng rng(seed);
  Eigen::MatrixXcd spec(frames, cfg.num_bins());
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < cfg.num_bins(); ++k) {
      spec(t, k) = std::polar(magnitude(t, k), 2.0 * M_PI * rng.Uniform());
    }
  }
  std::vector<double> y = Istft(spec, cfg, length);
  for (int it = 0; it < iterations; ++it) {
    const Eigen::MatrixXcd est = Stft(y, cfg);
    for (int t = 0; t < frames; ++t) {
      for (int k = 0; k < cfg.num_bins(); ++k) {
        const double a = std::abs(est(t, k));
        const Complex phase = a > 1e-12 ? est(t, k) / a : Complex(1.0, 0.0);
        spec(t, k) = magnitude(t, k) * phase;
      }
    }
    y = Istft(spec, cfg, length);
  }
  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples.resize(length);
  for (size_t i = 0; i < length; ++i) w.samples[i] = std::clamp(y[i], -1.0, 1.0);
  return w;
}

// ---------------------------------------------------------------------------
// Mel-cepstrum

int EnvelopeOrder(const AudioConfig& cfg) {
  // Quefrencies below the shortest pitch period of the voicing search band.
  return std::max(2, cfg.sample_rate / 500);
}

std::vector<double> FrequencyTransform(const std::vector<double>& c1, int m2,
                                       double alpha) {
  const int m1 = static_cast<int>(c1.size()) - 1;
  const double beta = 1.0 - alpha * alpha;
  std::vector<double> c2(m2 + 1, 0.0), prev(m2 + 1, 0.0);
  for (int i = -m1; i <= 0; ++i) {
    prev = c2;
    c2[0] = c1[-i] + alpha * prev[0];
    if (m2 >= 1) c2[1] = beta * prev[0] + alpha * prev[1];
    for (int j = 2; j <= m2; ++j) c2[j] = prev[j - 1] + alpha * (prev[j] - c2[j - 1]);
  }
  return c2;
}

McepSequence ExtractMcep(const Waveform& w, int order, const AudioConfig& cfg,
                         double alpha) {
  cfg.Validate();
  if (order < 1) throw ValidationError("mcep order must be >= 1");
  const int env = EnvelopeOrder(cfg);
  if (order >= env) {
    throw ValidationError("mcep order " + std::to_string(order) +
                          " must be below the envelope resolution " +
                          std::to_string(env));
  }
  if (w.sample_rate != cfg.sample_rate) {
    throw ValidationError("sample rate mismatch in mcep analysis");
  }
  const Eigen::MatrixXcd spec = Stft(w.samples, cfg);
  RealFft fft(cfg.n_fft);
  McepSequence out;
  out.frames.resize(spec.rows(), order + 1);
  std::vector<Complex> logspec(cfg.num_bins());
  std::vector<double> cep;
  std::vector<double> lifted(env);
  for (Eigen::Index t = 0; t < spec.rows(); ++t) {
    for (int k = 0; k < cfg.num_bins(); ++k) {
      logspec[k] = Complex(std::log(std::max(std::abs(spec(t, k)), 1e-5)), 0.0);
    }
    fft.Inverse(logspec, &cep);
    // One-sided convention: log H = c0 + sum_{m>0} c_m z^-m.
    lifted[0] = cep[0];
    for (int m = 1; m < env; ++m) lifted[m] = 2.0 * cep[m];
    const std::vector<double> mc = FrequencyTransform(lifted, order, alpha);
    for (int d = 0; d <= order; ++d) out.frames(t, d) = mc[d];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Voicing

VoicingTrack DetectVoicing(const Waveform& w, const AudioConfig& cfg,
                           const VoicingConfig& vcfg) {
  VoicingTrack track;
  track.hop_length = cfg.hop_length;
  track.sample_rate = w.sample_rate;
  const int frames = cfg.NumFrames(w.samples.size());
  track.voiced.assign(frames, false);
  track.f0.assign(frames, 0.0);
  if (w.samples.empty()) return track;

  const int win = cfg.win_length;
  const int min_lag = std::max(2, static_cast<int>(std::floor(w.sample_rate / vcfg.f0_max)));
  const int max_lag = std::min(win - 2, static_cast<int>(std::ceil(w.sample_rate / vcfg.f0_min)));
  const std::vector<double> padded = CenterPad(w.samples, win / 2);

  std::vector<double> rms(frames);
  std::vector<std::vector<double>> segs(frames);
  double loudest = 0.0;
  for (int t = 0; t < frames; ++t) {
    const size_t start = static_cast<size_t>(t) * cfg.hop_length;
    std::vector<double> x(padded.begin() + start, padded.begin() + start + win);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= win;
    double e = 0.0;
    for (double& v : x) {
      v -= mean;
      e += v * v;
    }
    rms[t] = std::sqrt(e / win);
    loudest = std::max(loudest, rms[t]);
    segs[t] = std::move(x);
  }
  const double gate = std::max(vcfg.abs_gate, vcfg.relative_gate * loudest);
  std::vector<double> nac(max_lag + 2, 0.0);
  for (int t = 0; t < frames; ++t) {
    if (rms[t] < gate) continue;
    const std::vector<double>& x = segs[t];
    double best = -1.0;
    for (int lag = min_lag; lag <= max_lag; ++lag) {
      double num = 0.0, e0 = 0.0, e1 = 0.0;
      for (int n = 0; n + lag < win; ++n) {
        num += x[n] * x[n + lag];
        e0 += x[n] * x[n];
        e1 += x[n + lag] * x[n + lag];
      }
      nac[lag] = (e0 > 0 && e1 > 0) ? num / std::sqrt(e0 * e1) : 0.0;
      best = std::max(best, nac[lag]);
    }
    if (best < vcfg.threshold) continue;
    // Earliest local peak close to the global maximum avoids octave-down
    // errors from multiples of the period.
    int chosen = -1;
    for (int lag = min_lag; lag <= max_lag; ++lag) {
      const bool peak = (lag == min_lag || nac[lag] >= nac[lag - 1]) &&
                        (lag == max_lag || nac[lag] >= nac[lag + 1]);
      if (peak && nac[lag] >= 0.85 * best) {
        chosen = lag;
        break;
      }
    }
    if (chosen < 0 || nac[chosen] < vcfg.threshold) continue;
    double lag = chosen;
    if (chosen > min_lag && chosen < max_lag) {
      const double a = nac[chosen - 1], b = nac[chosen], c = nac[chosen + 1];
      const double denom = a - 2.0 * b + c;
      if (std::abs(denom) > 1e-12) lag += std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);
    }
    const double f0 = w.sample_rate / lag;
    if (f0 < vcfg.f0_min || f0 > vcfg.f0_max) continue;
    track.voiced[t] = true;
    track.f0[t] = f0;
  }
  return track;
}

// ---------------------------------------------------------------------------
// Mel files

void WriteMel(const std::string& path, const MelSpectrogram& mel) {
  std::ofstream os = io::OpenForWrite(path);
  os.write(kMelMagic, sizeof(kMelMagic));
  io::WriteU32(os, kMelVersion);
  io::WriteString(os, mel.fingerprint);
  io::WriteMatrix(os, mel.frames);
  if (!os) throw IoError("write failed for '" + path + "'");
}

MelSpectrogram ReadMel(const std::string& path) {
  std::ifstream is = io::OpenForRead(path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kMelMagic, 8) != 0) {
    throw ValidationError("'" + path + "' is not a mel file");
  }
  const uint32_t version = io::ReadU32(is, path);
  if (version != kMelVersion) {
    throw ValidationError("'" + path + "': unsupported mel version " +
                          std::to_string(version));
  }
  MelSpectrogram mel;
  mel.fingerprint = io::ReadString(is, path);
  mel.frames = io::ReadMatrix(is, path);
  return mel;
}

}  // namespace evc::signal

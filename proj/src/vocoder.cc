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

#include "evc/vocoder.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "evc/archive.h"
#include "evc/model.h"
#include "json.hpp"

namespace evc::vocoder {

using ad::Var;
using nlohmann::json;

namespace {

constexpr double kMu = kMuLawClasses - 1;
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void Require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

int InputWidth(int context, int d_cond) { return context + d_cond + context * d_cond; }

// Nearest analysis frame for a sample; frame f is centred on sample f * hop.
Eigen::Index FrameOf(Eigen::Index t, const signal::AudioConfig& audio, Eigen::Index frames) {
  const Eigen::Index f = (t + audio.hop_length / 2) / audio.hop_length;
  return std::min(f, frames - 1);
}

void CheckFingerprint(const std::string& got, const std::string& want,
                      const std::string& who) {
  Require(got == want, who + ": audio config fingerprint " + got +
                           " does not match " + want);
}

// Teacher-forced minibatch: features are built from quantized history.
struct Batch {
  Matrix history;  // N x context, companded values of previous samples
  Matrix mel;      // N x n_mels, normalized
  std::vector<int> targets;
};

Batch MakeBatch(const std::vector<const VocoderExample*>& utts,
                const std::vector<std::pair<size_t, Eigen::Index>>& positions,
                int context, const signal::AudioConfig& audio, double log_floor) {
  Batch b;
  const Eigen::Index n = static_cast<Eigen::Index>(positions.size());
  b.history = Matrix::Zero(n, context);
  b.mel.resize(n, audio.n_mels);
  b.targets.resize(positions.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& [u, t] = positions[static_cast<size_t>(i)];
    const VocoderExample& ex = *utts[u];
    for (int k = 1; k <= context; ++k) {
      if (t - k >= 0) {
        b.history(i, k - 1) = MuLawDecode(MuLawEncode(ex.samples[static_cast<size_t>(t - k)]));
      }
    }
    const Eigen::Index f = FrameOf(t, audio, ex.mel.frames.rows());
    b.mel.row(i) = model::NormalizeMel(ex.mel.frames.row(f), log_floor);
    b.targets[static_cast<size_t>(i)] = MuLawEncode(ex.samples[static_cast<size_t>(t)]);
  }
  return b;
}

// Logits for a batch, N x 256.
Var LogitsGraph(ad::Graph& g, const Batch& b, int context) {
  ad::Tape& tape = g.tape();
  Var c = Tanh(AddRow(MatMul(tape.Constant(b.mel), g.Param("cond.w")), g.Param("cond.b")));
  std::vector<Var> parts = {tape.Constant(b.history), c};
  const Eigen::Index d_cond = c.cols();
  for (int k = 0; k < context; ++k) {
    Matrix rep = b.history.col(k).replicate(1, d_cond);
    parts.push_back(Mul(c, tape.Constant(std::move(rep))));
  }
  Var x = ad::ConcatCols(parts);
  Var h = Tanh(AddRow(MatMul(x, g.Param("in.w")), g.Param("in.b")));
  return AddRow(MatMul(h, g.Param("out.w")), g.Param("out.b"));
}

Var NllGraph(const Var& logits, const std::vector<int>& targets) {
  Matrix onehot = Matrix::Zero(logits.rows(), logits.cols());
  for (size_t i = 0; i < targets.size(); ++i) onehot(static_cast<Eigen::Index>(i), targets[i]) = 1.0;
  Var logp = Log(SoftmaxRows(logits), 1e-12);
  return Scale(Sum(Mul(logp, logits.tape()->Constant(std::move(onehot)))),
               -1.0 / static_cast<double>(targets.size()));
}

double LogFloor(const signal::AudioConfig& audio) { return audio.log_floor; }

std::vector<std::pair<size_t, Eigen::Index>> DrawPositions(
    const std::vector<const VocoderExample*>& utts, int count, Rng* rng) {
  // Uniform over all samples of all utterances.
  std::vector<Eigen::Index> cumulative;
  Eigen::Index total = 0;
  for (const auto* u : utts) {
    total += static_cast<Eigen::Index>(u->samples.size());
    cumulative.push_back(total);
  }
  std::vector<std::pair<size_t, Eigen::Index>> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const Eigen::Index pick = static_cast<Eigen::Index>(rng->Below(static_cast<uint64_t>(total)));
    const size_t u = static_cast<size_t>(
        std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
    const Eigen::Index start = u == 0 ? 0 : cumulative[u - 1];
    out.emplace_back(u, pick - start);
  }
  return out;
}

void Adam(const ad::ParameterSet& grads, double lr, int64_t t, ad::ParameterSet* m,
          ad::ParameterSet* v, ad::ParameterSet* params) {
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
  for (const auto& [name, g] : grads) {
    Matrix& mm = m->try_emplace(name, Matrix::Zero(g.rows(), g.cols())).first->second;
    Matrix& vv = v->try_emplace(name, Matrix::Zero(g.rows(), g.cols())).first->second;
    mm = kBeta1 * mm + (1 - kBeta1) * g;
    vv = kBeta2 * vv + (1 - kBeta2) * g.cwiseProduct(g);
    params->at(name).array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + kAdamEps);
  }
}

void CheckCorpus(const VocoderCorpus& data, const signal::AudioConfig& audio, int n_mels,
                 const std::string& who) {
  Require(!data.train.empty(), who + ": empty training audio");
  for (const auto* set : {&data.train, &data.heldout}) {
    for (const auto& ex : *set) {
      CheckFingerprint(ex.mel.fingerprint, audio.Fingerprint(), who);
      Require(ex.mel.frames.cols() == n_mels, who + ": mel width mismatch");
      Require(!ex.samples.empty(), who + ": empty waveform");
    }
  }
}

VocoderTrainResult Train(VocoderState state, const VocoderCorpus& data,
                         const VocoderConfig& cfg, const signal::AudioConfig& audio,
                         Provenance after, const std::string& who) {
  cfg.Validate();
  state.ValidateShapes();
  CheckFingerprint(state.audio_fingerprint, audio.Fingerprint(), who);
  CheckCorpus(data, audio, state.n_mels, who);
  VocoderTrainResult result;
  const uint64_t nll_seed = DeriveSeed(cfg.seed, "heldout");
  result.initial_nll = data.heldout.empty()
                           ? 0.0
                           : HeldoutNll(state, data.heldout, audio, cfg.heldout_positions, nll_seed);
  result.final_nll = result.initial_nll;
  if (cfg.max_steps == 0) {
    result.state = std::move(state);
    return result;
  }
  std::ofstream log;
  if (!cfg.metrics_path.empty()) {
    log.open(cfg.metrics_path, std::ios::trunc);
    if (!log) throw IoError("cannot open metrics log " + cfg.metrics_path);
  }
  std::vector<const VocoderExample*> utts;
  for (const auto& ex : data.train) utts.push_back(&ex);
  Rng rng(DeriveSeed(cfg.seed, "vocoder-batches"));
  ad::ParameterSet m, v;
  for (int64_t step = 0; step < cfg.max_steps; ++step) {
    const Batch b = MakeBatch(utts, DrawPositions(utts, cfg.batch_samples, &rng),
                              state.context, audio, LogFloor(audio));
    ad::Tape tape;
    ad::Graph g(&tape, &state.params);
    Var loss = NllGraph(LogitsGraph(g, b, state.context), b.targets);
    if (!std::isfinite(loss.scalar())) {
      throw DivergenceError(who + ": step " + std::to_string(step) + ": non-finite loss");
    }
    tape.Backward(loss);
    ad::ParameterSet grads = g.Gradients();
    double sq = 0;
    for (const auto& [name, gr] : grads) sq += gr.squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) {
      throw DivergenceError(who + ": step " + std::to_string(step) + ": non-finite gradient");
    }
    if (norm > cfg.grad_clip) {
      for (auto& [name, gr] : grads) gr *= cfg.grad_clip / norm;
    }
    const double lr = cfg.learning_rate *
                      (cfg.warmup_steps > 0
                           ? std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps)
                           : 1.0);
    Adam(grads, lr, step + 1, &m, &v, &state.params);
    json record = {{"step", step + 1}, {"nll", loss.scalar()}, {"lr", lr}};
    const bool validate = (step + 1) % cfg.validate_every == 0 || step + 1 == cfg.max_steps;
    if (validate && !data.heldout.empty()) {
      result.final_nll =
          HeldoutNll(state, data.heldout, audio, cfg.heldout_positions, nll_seed);
      record["heldout_nll"] = result.final_nll;
    }
    const std::string line = record.dump();
    result.metrics.push_back(line);
    if (log.is_open()) log << line << '\n' << std::flush;
  }
  state.provenance = after;
  result.state = std::move(state);
  return result;
}

}  // namespace

double MuLawCompress(double x) {
  x = std::clamp(x, -1.0, 1.0);
  return std::copysign(std::log1p(kMu * std::abs(x)) / std::log1p(kMu), x);
}

double MuLawExpand(double y) {
  y = std::clamp(y, -1.0, 1.0);
  return std::copysign(std::expm1(std::abs(y) * std::log1p(kMu)) / kMu, y);
}

int MuLawEncode(double x) {
  const double y = MuLawCompress(x);
  return std::clamp(static_cast<int>(std::lround((y + 1.0) * 0.5 * kMu)), 0,
                    kMuLawClasses - 1);
}

double MuLawLevel(int q) { return 2.0 * q / kMu - 1.0; }

double MuLawDecode(int q) {
  Require(q >= 0 && q < kMuLawClasses, "mu-law class out of range");
  return MuLawExpand(MuLawLevel(q));
}

std::string ProvenanceName(Provenance p) {
  switch (p) {
    case Provenance::kScratch: return "scratch";
    case Provenance::kPretrained: return "pretrained";
    case Provenance::kFineTuned: return "fine-tuned";
  }
  return "scratch";
}

Provenance ProvenanceFromName(const std::string& name) {
  if (name == "scratch") return Provenance::kScratch;
  if (name == "pretrained") return Provenance::kPretrained;
  if (name == "fine-tuned") return Provenance::kFineTuned;
  throw ValidationError("unknown vocoder provenance '" + name + "'");
}

void VocoderConfig::Validate() const {
  Require(context >= 1 && d_cond >= 1 && d_hidden >= 1,
          "vocoder config: widths must be >= 1");
  Require(batch_samples >= 1, "vocoder config: batch_samples must be >= 1");
  Require(max_steps >= 0, "vocoder config: max_steps must be >= 0");
  Require(learning_rate > 0, "vocoder config: learning_rate must be positive");
  Require(grad_clip > 0, "vocoder config: grad_clip must be positive");
  Require(validate_every >= 1 && heldout_positions >= 1,
          "vocoder config: validation settings must be >= 1");
}

std::string VocoderConfig::Fingerprint() const {
  const json j = {{"context", context},         {"d_cond", d_cond},
                  {"d_hidden", d_hidden},       {"batch_samples", batch_samples},
                  {"max_steps", max_steps},     {"learning_rate", learning_rate},
                  {"warmup_steps", warmup_steps}, {"grad_clip", grad_clip},
                  {"seed", seed},               {"validate_every", validate_every},
                  {"heldout_positions", heldout_positions}};
  return HexDigest(Fnv1a(j.dump()));
}

std::string VocoderState::Fingerprint() const {
  uint64_t h = Fnv1a(audio_fingerprint + "/" + ProvenanceName(provenance));
  for (const auto& [name, m] : params) h = HashMatrix(m, Fnv1a(name, h));
  return HexDigest(h);
}

void VocoderState::ValidateShapes() const {
  const std::map<std::string, std::pair<int, int>> shapes = {
      {"cond.w", {n_mels, d_cond}},
      {"cond.b", {1, d_cond}},
      {"in.w", {InputWidth(context, d_cond), d_hidden}},
      {"in.b", {1, d_hidden}},
      {"out.w", {d_hidden, kMuLawClasses}},
      {"out.b", {1, kMuLawClasses}}};
  Require(params.size() == shapes.size(), "vocoder state: unexpected array set");
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    Require(it != params.end(), "vocoder state: missing array '" + name + "'");
    Require(it->second.rows() == shape.first && it->second.cols() == shape.second,
            "vocoder state: array '" + name + "' has the wrong shape");
  }
}

VocoderExample MakeVocoderExample(const signal::Waveform& w,
                                  const signal::AudioConfig& audio) {
  return {w.samples, signal::ExtractMel(w, audio)};
}

VocoderState InitVocoder(const VocoderConfig& cfg, const signal::AudioConfig& audio) {
  cfg.Validate();
  audio.Validate();
  VocoderState s;
  s.audio_fingerprint = audio.Fingerprint();
  s.n_mels = audio.n_mels;
  s.context = cfg.context;
  s.d_cond = cfg.d_cond;
  s.d_hidden = cfg.d_hidden;
  const std::vector<std::pair<std::string, std::pair<int, int>>> shapes = {
      {"cond.w", {s.n_mels, s.d_cond}},
      {"cond.b", {1, s.d_cond}},
      {"in.w", {InputWidth(s.context, s.d_cond), s.d_hidden}},
      {"in.b", {1, s.d_hidden}},
      {"out.w", {s.d_hidden, kMuLawClasses}},
      {"out.b", {1, kMuLawClasses}}};
  for (const auto& [name, shape] : shapes) {
    Rng rng(DeriveSeed(cfg.seed, "vocoder/" + name));
    s.params[name] = model::InitArray(name, shape.first, shape.second, &rng);
  }
  return s;
}

double HeldoutNll(const VocoderState& state, const std::vector<VocoderExample>& data,
                  const signal::AudioConfig& audio, int positions, uint64_t seed) {
  Require(!data.empty(), "heldout nll: no held-out audio");
  double total = 0.0;
  size_t count = 0;
  for (size_t u = 0; u < data.size(); ++u) {
    std::vector<const VocoderExample*> one = {&data[u]};
    Rng rng(DeriveSeed(seed, std::to_string(u)));
    const Batch b = MakeBatch(one, DrawPositions(one, positions, &rng), state.context,
                              audio, LogFloor(audio));
    ad::Tape tape;
    ad::Graph g(&tape, &state.params);
    g.SetTrainable([](const std::string&) { return false; });
    total += NllGraph(LogitsGraph(g, b, state.context), b.targets).scalar() *
             static_cast<double>(b.targets.size());
    count += b.targets.size();
  }
  return total / static_cast<double>(count);
}

VocoderTrainResult PretrainVocoder(const VocoderCorpus& data, const VocoderConfig& cfg,
                                   const signal::AudioConfig& audio) {
  return Train(InitVocoder(cfg, audio), data, cfg, audio, Provenance::kPretrained,
               "pretrain_vocoder");
}

VocoderTrainResult FineTuneVocoder(const VocoderState& state, const VocoderCorpus& data,
                                   const VocoderConfig& cfg,
                                   const signal::AudioConfig& audio) {
  Require(state.provenance != Provenance::kScratch,
          "fine_tune_vocoder: the vocoder must be pretrained first");
  return Train(state, data, cfg, audio, Provenance::kFineTuned, "fine_tune_vocoder");
}

void SaveVocoder(const std::string& path, const VocoderState& state) {
  io::Archive a;
  a.kind = "vocoder";
  a.meta = {{"audio_fingerprint", state.audio_fingerprint},
            {"provenance", ProvenanceName(state.provenance)},
            {"n_mels", state.n_mels},
            {"context", state.context},
            {"d_cond", state.d_cond},
            {"d_hidden", state.d_hidden}};
  a.groups["params"] = state.params;
  io::SaveArchive(path, a);
}

VocoderState LoadVocoder(const std::string& path) {
  io::Archive a = io::LoadArchive(path, "vocoder");
  VocoderState s;
  try {
    s.audio_fingerprint = a.meta.at("audio_fingerprint").get<std::string>();
    s.provenance = ProvenanceFromName(a.meta.at("provenance").get<std::string>());
    s.n_mels = a.meta.at("n_mels").get<int>();
    s.context = a.meta.at("context").get<int>();
    s.d_cond = a.meta.at("d_cond").get<int>();
    s.d_hidden = a.meta.at("d_hidden").get<int>();
  } catch (const json::exception& e) {
    throw ValidationError(path + ": bad vocoder metadata: " + e.what());
  }
  s.params = std::move(a.groups["params"]);
  s.ValidateShapes();
  return s;
}

signal::Waveform SynthesizeNeural(const signal::MelSpectrogram& mel,
                                  const VocoderState& state,
                                  const signal::AudioConfig& audio, uint64_t seed) {
  CheckFingerprint(mel.fingerprint, audio.Fingerprint(), "synthesize");
  CheckFingerprint(state.audio_fingerprint, audio.Fingerprint(), "synthesize");
  state.ValidateShapes();
  Require(mel.frames.rows() >= 1 && mel.frames.cols() == state.n_mels,
          "synthesize: mel shape does not match the vocoder");
  const Eigen::Index frames = mel.frames.rows();
  const int k = state.context;
  const int dc = state.d_cond;
  const Matrix& in_w = state.params.at("in.w");
  const RowVector in_b = state.params.at("in.b");
  const Matrix& out_w = state.params.at("out.w");
  const RowVector out_b = state.params.at("out.b");

  // Per-frame conditioning and its contribution to the hidden layer.
  const Matrix norm = model::NormalizeMel(mel.frames, audio.log_floor);
  const Matrix cond = ((norm * state.params.at("cond.w")).rowwise() +
                       RowVector(state.params.at("cond.b")))
                          .array()
                          .tanh()
                          .matrix();
  const Matrix frame_bias =
      (cond * in_w.middleRows(k, dc)).rowwise() + in_b;

  signal::Waveform out;
  out.sample_rate = audio.sample_rate;
  const Eigen::Index n = frames * audio.hop_length;
  out.samples.resize(static_cast<size_t>(n));
  std::vector<double> history(static_cast<size_t>(k), 0.0);  // companded, newest first
  Rng rng(DeriveSeed(seed, "vocoder-sampling"));
  RowVector hidden(state.d_hidden), logits(kMuLawClasses);
  Eigen::Index cached_frame = -1;
  Matrix bilinear_w;  // k x d_hidden: effective history weights for this frame
  for (Eigen::Index t = 0; t < n; ++t) {
    const Eigen::Index f = FrameOf(t, audio, frames);
    if (f != cached_frame) {
      // History j enters directly and through c * history_j.
      bilinear_w = in_w.topRows(k);
      for (int j = 0; j < k; ++j) {
        bilinear_w.row(j) += cond.row(f) * in_w.middleRows(k + dc + j * dc, dc);
      }
      cached_frame = f;
    }
    hidden = frame_bias.row(f);
    for (int j = 0; j < k; ++j) hidden += history[static_cast<size_t>(j)] * bilinear_w.row(j);
    hidden = hidden.array().tanh();
    logits = hidden * out_w + out_b;
    const double mx = logits.maxCoeff();
    double z = 0.0;
    for (int c = 0; c < kMuLawClasses; ++c) z += std::exp(logits(c) - mx);
    double u = rng.Uniform() * z;
    int q = kMuLawClasses - 1;
    for (int c = 0; c < kMuLawClasses; ++c) {
      u -= std::exp(logits(c) - mx);
      if (u <= 0) {
        q = c;
        break;
      }
    }
    out.samples[static_cast<size_t>(t)] = MuLawDecode(q);
    for (int j = k - 1; j > 0; --j) history[static_cast<size_t>(j)] = history[static_cast<size_t>(j - 1)];
    history[0] = out.samples[static_cast<size_t>(t)];
  }
  return out;
}

VocoderKind VocoderKindFromName(const std::string& name) {
  if (name == "griffin-lim") return VocoderKind::kGriffinLim;
  if (name == "neural") return VocoderKind::kNeural;
  throw ValidationError("unknown vocoder '" + name + "' (expected griffin-lim or neural)");
}

signal::Waveform Synthesize(const signal::MelSpectrogram& mel, VocoderKind kind,
                            const VocoderState* neural, const signal::AudioConfig& audio,
                            uint64_t seed, int griffin_lim_iterations) {
  if (kind == VocoderKind::kGriffinLim) {
    return signal::GriffinLimInvert(mel, audio, griffin_lim_iterations, seed);
  }
  Require(neural != nullptr, "synthesize: neural vocoder selected but none loaded");
  return SynthesizeNeural(mel, *neural, audio, seed);
}

}  // namespace evc::vocoder

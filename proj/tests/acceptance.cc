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

// Acceptance runner: one PASS/FAIL line per criterion.
//
//   1  loss worked examples          6  pretraining benefit
//   2  gradient checks               7  duration conversion
//   3  structural invariants         8  metric oracles
//   4  stage-2 re-initialization     9  signal round trips
//   5  toy disentanglement          10  CLI determinism
//
// Criteria 5 to 7 share one toy experiment (synthetic corpora, a stage-1
// run and five stage-2 runs); it dominates the runtime.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "evc/evaluation.h"
#include "evc/inference.h"
#include "evc/objectives.h"
#include "evc/training.h"
#include "evc/vocoder.h"
#include "gradcheck.h"
#include "json.hpp"
#include "test_util.h"

namespace {

namespace fs = std::filesystem;
using namespace evc;
using nlohmann::json;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss.precision(precision);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. Loss worked examples

model::ClassifierPosterior Rows(std::vector<std::vector<double>> rows) {
  model::ClassifierPosterior p;
  p.probs.resize(static_cast<Eigen::Index>(rows.size()),
                 static_cast<Eigen::Index>(rows[0].size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j) p.probs(i, j) = rows[i][j];
  }
  return p;
}

// d_style = 1 with h = [1]: V h is V's only column.
double SupervisionWithLogits(std::vector<double> logits, int label) {
  model::ModelState s;
  s.config.num_classes = static_cast<int>(logits.size());
  s.config.d_style = 1;
  s.params["style.head"] = Eigen::Map<Matrix>(logits.data(), logits.size(), 1);
  return objectives::EmotionSupervisionLoss({RowVector::Ones(1)},
                                            corpus::EmotionLabel::Make(label, 4), s);
}

Outcome LossExamples() {
  using corpus::EmotionLabel;
  const double ln4 = std::log(4.0);
  const std::vector<std::pair<double, double>> cases = {
      {objectives::ClassifierLoss(Rows({{1, 0, 0, 0}, {1, 0, 0, 0}}), EmotionLabel::Make(0, 4)), 0.0},
      {objectives::ClassifierLoss(Rows({{.25, .25, .25, .25}}), EmotionLabel::Make(1, 4)), ln4},
      {objectives::ClassifierLoss(Rows({{1, 0, 0, 0}, {.5, .5, 0, 0}}), EmotionLabel::Make(0, 4)),
       std::log(2.0) / 2},
      {objectives::AdversarialUniformLoss(Rows({{.25, .25, .25, .25}})), 0.0},
      {objectives::AdversarialUniformLoss(Rows({{1, 0, 0, 0}})), 0.75},
      {objectives::AdversarialUniformLoss(Rows({{.25, .25, .25, .25}, {1, 0, 0, 0}})), 0.375},
      {SupervisionWithLogits({0, 0, 0, 0}, 0), ln4},
      {SupervisionWithLogits({10, 0, 0, 0}, 0), -std::log(std::exp(10.0) / (std::exp(10.0) + 3))},
      {SupervisionWithLogits({0, 10, 0, 0}, 0), 10.0 + std::log1p(3 * std::exp(-10.0))},
  };
  double worst = 0;
  for (const auto& [got, want] : cases) worst = std::max(worst, std::abs(got - want));
  return {worst < 1e-6, std::to_string(cases.size()) + " examples, max |error| " + Fmt(worst)};
}

// ---------------------------------------------------------------------------
// 2. Gradient checks

Outcome GradientChecks() {
  const auto entries = test::RunGradCheck(21);
  const test::GradCheckEntry* worst = &entries.front();
  for (const auto& e : entries) {
    if (e.rel_error > worst->rel_error) worst = &e;
  }
  const auto c = test::TinyConfig();
  const bool tiny = c.d_embed <= 8 && c.d_hidden <= 8 && c.num_classes == 4 &&
                    test::TinyExample(1).phonemes.ids.size() <= 6;
  return {tiny && worst->rel_error < 1e-4,
          std::to_string(entries.size()) + " (loss, array) pairs, worst " + worst->loss + "/" +
              worst->param + " " + Fmt(worst->rel_error)};
}

// ---------------------------------------------------------------------------
// 3. Structural invariants over random configs

Outcome StructuralInvariants() {
  Rng rng(2024);
  double attention_err = 0, posterior_err = 0;
  int shape_failures = 0;
  auto dim = [&](int hi) { return 1 + static_cast<int>(rng.Below(hi)); };
  for (int trial = 0; trial < 100; ++trial) {
    model::ModelConfig c;
    c.phoneme_vocab = 2 + dim(12);
    c.n_mels = dim(16);
    c.d_embed = dim(8);
    c.d_hidden = dim(8);
    c.d_linguistic = dim(8);
    c.d_style = dim(8);
    c.d_classifier = dim(8);
    c.d_prenet = dim(8);
    c.d_decoder = dim(8);
    c.d_attention = dim(8);
    c.num_classes = 1 + dim(6);
    c.reduction_factor = dim(4);
    c.max_decode_steps = dim(25);
    c.max_recognizer_steps = dim(20);
    const auto s = model::InitModel(c, static_cast<uint64_t>(trial));
    signal::MelSpectrogram mel;
    mel.frames.resize(dim(40), c.n_mels);
    for (Eigen::Index i = 0; i < mel.frames.size(); ++i) mel.frames(i) = rng.Uniform(-11, 2);
    corpus::PhonemeSequence p;
    for (int i = 0, n = dim(10); i < n; ++i) p.ids.push_back(static_cast<int>(rng.Below(c.phoneme_vocab)));

    const auto h = model::EmotionEncode(mel, s);
    for (const auto& e : {model::TextEncode(p, s), model::AsrEncode(mel, s)}) {
      const auto post = model::ClassifyLinguistic(e, s).probs;
      posterior_err = std::max(posterior_err, (post.rowwise().sum().array() - 1).abs().maxCoeff());
      if (post.minCoeff() < 0) posterior_err = std::max(posterior_err, 1.0);
      const auto tf = model::Decode(e, h, s, &mel);
      const auto free = model::Decode(e, h, s);
      const Eigen::Index want = (mel.frames.rows() + c.reduction_factor - 1) / c.reduction_factor;
      if (tf.steps() != want || tf.mel.rows() != want * c.reduction_factor ||
          free.steps() > c.max_decode_steps) {
        ++shape_failures;
      }
      for (const auto* d : {&tf, &free}) {
        attention_err = std::max(
            attention_err, (d->attention.weights.rowwise().sum().array() - 1).abs().maxCoeff());
      }
    }
  }
  return {attention_err <= 1e-5 && posterior_err <= 1e-9 && shape_failures == 0,
          "100 configs: attention row error " + Fmt(attention_err) + ", posterior row error " +
              Fmt(posterior_err) + ", shape failures " + std::to_string(shape_failures)};
}

// ---------------------------------------------------------------------------
// 4. Stage-2 re-initialization

Outcome Reinit() {
  training::Checkpoint ck;
  ck.model = training::InitStage1(model::ModelConfig{}, 2, 5);
  const auto s = training::ReinitForStage2(ck, 5, 6);
  const auto heads = model::HeadParameterNames();
  int copied = 0, mismatched = 0;
  for (const auto& [name, m] : ck.model.params) {
    if (std::find(heads.begin(), heads.end(), name) != heads.end()) continue;
    ++copied;
    if (!(s.params.at(name) == m)) ++mismatched;
  }
  const Matrix& v = s.params.at("style.head");
  const bool shaped = v.rows() == 5 && v.cols() == ck.model.config.d_style &&
                      s.config.num_classes == 5 && s.stage == 2 &&
                      s.params.size() == ck.model.params.size();
  return {mismatched == 0 && shaped,
          std::to_string(copied) + " arrays copied, " + std::to_string(mismatched) +
              " differ; V is " + std::to_string(v.rows()) + "x" + std::to_string(v.cols())};
}

// ---------------------------------------------------------------------------
// 5 to 7. Toy experiment

struct ToyCorpus {
  std::string manifest;
  training::Dataset train;                          // validation = references
  std::vector<corpus::UtteranceRecord> reference;   // per emotion, held out
  std::vector<corpus::UtteranceRecord> evaluation;  // parallel across emotions
};

constexpr int kPerEmotion = 60;
constexpr int kTrainPerEmotion = 40;
constexpr int kReferencePerEmotion = 12;

struct Toy {
  signal::AudioConfig audio;
  corpus::EmotionInventory inventory = corpus::EmotionInventory::Default();
  training::Dataset stage1;
  ToyCorpus stage2;
  training::Checkpoint stage1_best;
  double stage1_seconds = 0;

  int stage1_steps = 1500;
  int stage2_steps = 1500;
  int pretrain_compare_steps = 300;
};

void BuildToy(Toy* toy, const std::string& dir) {
  const auto lexicon = corpus::Lexicon::Default();
  // Two speakers that share F0 and differ only in vocal-tract length.
  corpus::SyntheticCorpusSpec a;
  a.num_speakers = 2;
  a.voices = {{140.0, 0.88}, {140.0, 1.12}};
  a.emotions = {"neutral"};
  a.utterances_per_cell = kPerEmotion;
  a.parallel = false;
  a.seed = 11;
  a.id_prefix = "s1_";
  const auto ca = corpus::BuildSyntheticCorpus(a, dir + "/stage1");
  const auto ra = ca.records();
  const auto ea = training::LoadExamples(ra, dir + "/stage1/manifest.jsonl", lexicon, toy->audio,
                                         [](const corpus::UtteranceRecord& r) {
                                           return r.speaker == "spk00" ? 0 : 1;
                                         });
  toy->stage1.num_classes = 2;
  for (size_t i = 0; i < ea.size(); ++i) {
    (i % 10 == 0 ? toy->stage1.validation : toy->stage1.train).push_back(ea[i]);
  }

  corpus::SyntheticCorpusSpec b;
  b.num_speakers = 1;
  b.voices = {{150.0, 1.0}};
  b.emotions = toy->inventory.names();
  b.utterances_per_cell = kPerEmotion;
  b.seed = 12;
  b.id_prefix = "s2_";
  const auto cb = corpus::BuildSyntheticCorpus(b, dir + "/stage2");
  auto& t = toy->stage2;
  t.manifest = dir + "/stage2/manifest.jsonl";
  std::vector<corpus::UtteranceRecord> train;
  std::map<std::string, int> seen;
  for (const auto& r : cb.records()) {
    const int k = seen[*r.emotion]++;
    if (k < kTrainPerEmotion) {
      train.push_back(r);
    } else if (k < kTrainPerEmotion + kReferencePerEmotion) {
      t.reference.push_back(r);
    } else {
      t.evaluation.push_back(r);
    }
  }
  const auto inv = toy->inventory;
  auto label = [inv](const corpus::UtteranceRecord& r) { return inv.IndexOf(*r.emotion); };
  t.train.num_classes = inv.size();
  t.train.train = training::LoadExamples(train, t.manifest, lexicon, toy->audio, label);
  t.train.validation = training::LoadExamples(t.reference, t.manifest, lexicon, toy->audio, label);
}

void TrainToyStage1(Toy* toy) {
  training::TrainConfig cfg;
  cfg.max_steps = toy->stage1_steps;
  const auto t0 = std::chrono::steady_clock::now();
  toy->stage1_best =
      training::TrainStage1(toy->stage1, cfg, training::InitStage1(model::ModelConfig{}, 2, 1)).best;
  toy->stage1_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

training::TrainResult TrainToyStage2(const Toy& toy, uint64_t seed, int steps, bool from_scratch) {
  training::TrainConfig cfg;
  cfg.stage = 2;
  cfg.seed = seed;
  cfg.max_steps = steps;
  model::ModelState init;
  if (from_scratch) {
    init = training::InitStage1(toy.stage1_best.model.config, toy.inventory.size(), seed);
    init.stage = 2;
  } else {
    init = training::ReinitForStage2(toy.stage1_best, toy.inventory.size(), seed);
  }
  return training::TrainStage2(toy.stage2.train, cfg, init);
}

double ReferenceSilhouette(const Toy& toy, const model::ModelState& s) {
  std::vector<RowVector> points;
  std::vector<int> labels;
  for (const auto& ex : toy.stage2.train.validation) {
    points.push_back(model::EmotionEncode({ex.mel, ""}, s).h);
    labels.push_back(ex.label);
  }
  return evaluation::Silhouette(points, labels);
}

struct DurationStats {
  double ddur_converted = 0;
  double ddur_source = 0;
  int pairs = 0;
  bool lengths_differ = false;  // some source gets two different frame counts
};

// Converts every neutral evaluation source to each other emotion and scores
// against the parallel target.
DurationStats DurationRun(const Toy& toy, const model::ModelState& s) {
  const auto& t = toy.stage2;
  inference::EmbeddingTable table(s.Fingerprint());
  for (const auto& name : toy.inventory.names()) {
    std::vector<signal::MelSpectrogram> refs;
    for (size_t i = 0; i < t.reference.size(); ++i) {
      if (*t.reference[i].emotion == name) {
        refs.push_back({t.train.validation[i].mel, toy.audio.Fingerprint()});
      }
    }
    table.Ensure(name, refs, s);
  }
  std::map<std::string, std::map<std::string, const corpus::UtteranceRecord*>> by_text;
  for (const auto& r : t.evaluation) by_text[r.text][*r.emotion] = &r;

  DurationStats out;
  inference::VocoderSelection gl;
  for (const auto& [text, cell] : by_text) {
    if (!cell.count("neutral")) continue;
    const auto src = signal::ReadWav(corpus::ResolveAudioPath(t.manifest, *cell.at("neutral")));
    std::set<Eigen::Index> lengths;
    for (const auto& [emotion, rec] : cell) {
      if (emotion == "neutral") continue;
      const auto tgt = signal::ReadWav(corpus::ResolveAudioPath(t.manifest, *rec));
      const auto c = inference::Convert(src, emotion, table, s, gl, toy.audio, 1);
      lengths.insert(c.decoder.mel.rows());
      out.ddur_converted += evaluation::DdurScore(c.audio, tgt, toy.audio);
      out.ddur_source += evaluation::DdurScore(src, tgt, toy.audio);
      ++out.pairs;
    }
    out.lengths_differ |= lengths.size() > 1;
  }
  if (out.pairs > 0) {
    out.ddur_converted /= out.pairs;
    out.ddur_source /= out.pairs;
  }
  return out;
}

struct ToyOutcomes {
  Outcome disentangle, pretrain, duration;
  double seconds_5_7 = 0, seconds_6 = 0;
};

ToyOutcomes RunToy(const std::string& dir, bool want5, bool want6, bool want7,
                   json* report) {
  Toy toy;
  ToyOutcomes out;
  const auto t0 = std::chrono::steady_clock::now();
  BuildToy(&toy, dir);
  TrainToyStage1(&toy);
  (*report)["toy"]["stage1_seconds"] = toy.stage1_seconds;

  if (want5 || want7) {
    const int seeds = want7 ? 5 : 1;
    int ddur_wins = 0;
    bool any_lengths_differ = false;
    std::string per_seed;
    for (int seed = 1; seed <= seeds; ++seed) {
      const auto r = TrainToyStage2(toy, static_cast<uint64_t>(seed), toy.stage2_steps, false);
      json& js = (*report)["toy"]["stage2"][std::to_string(seed)];
      js["validation_l_recon"] = r.best_validation.l_recon;
      if (seed == 1) {
        const double before = ReferenceSilhouette(
            toy, training::ReinitForStage2(toy.stage1_best, toy.inventory.size(), 1));
        const double after = ReferenceSilhouette(toy, r.best.model);
        (*report)["toy"]["silhouette_stage1_encoder"] = before;
        (*report)["toy"]["silhouette_stage2"] = after;
        out.disentangle = {after >= 0.3 && before < 0.1,
                           "silhouette stage 2 " + Fmt(after, 3) + " (>= 0.3), stage-1 encoder " +
                               Fmt(before, 3) + " (< 0.1)"};
      }
      if (want7) {
        const auto d = DurationRun(toy, r.best.model);
        js["ddur_converted"] = d.ddur_converted;
        js["ddur_source"] = d.ddur_source;
        js["lengths_differ"] = d.lengths_differ;
        ddur_wins += d.ddur_converted < d.ddur_source;
        any_lengths_differ |= d.lengths_differ;
        per_seed += (seed > 1 ? ", " : "") + Fmt(d.ddur_converted, 3) + "/" +
                    Fmt(d.ddur_source, 3);
      }
    }
    if (want7) {
      out.duration = {any_lengths_differ && ddur_wins >= 3,
                      "DDUR converted/source per seed " + per_seed + "; " +
                          std::to_string(ddur_wins) + " of 5 seeds improve; frame counts " +
                          (any_lengths_differ ? "vary" : "do not vary") + " by emotion"};
    }
    out.seconds_5_7 = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  if (want6) {
    const auto t6 = std::chrono::steady_clock::now();
    int wins = 0;
    std::string per_seed;
    for (int seed = 1; seed <= 5; ++seed) {
      const auto init = TrainToyStage2(toy, 100 + seed, toy.pretrain_compare_steps, false);
      const auto scratch = TrainToyStage2(toy, 100 + seed, toy.pretrain_compare_steps, true);
      const double a = init.final_validation.l_recon, b = scratch.final_validation.l_recon;
      json& js = (*report)["toy"]["pretraining"][std::to_string(seed)];
      js["initialized"] = a;
      js["scratch"] = b;
      wins += b > a;
      per_seed += (seed > 1 ? ", " : "") + Fmt(b, 3) + ">" + Fmt(a, 3);
    }
    out.seconds_6 = std::chrono::duration<double>(std::chrono::steady_clock::now() - t6).count();
    out.pretrain = {wins >= 4, "scratch vs initialized l_recon at " +
                                   std::to_string(toy.pretrain_compare_steps) + " steps: " +
                                   per_seed + "; " + std::to_string(wins) + " of 5 seeds"};
  }
  return out;
}

// ---------------------------------------------------------------------------
// 8. Metric oracles

double ExhaustiveDtw(const Matrix& a, const Matrix& b) {
  double best = std::numeric_limits<double>::infinity();
  std::function<void(Eigen::Index, Eigen::Index, double)> walk = [&](Eigen::Index i,
                                                                     Eigen::Index j, double c) {
    c = (a.row(i) - b.row(j)).norm() + c;
    if (i == a.rows() - 1 && j == b.rows() - 1) {
      best = std::min(best, c);
      return;
    }
    if (i + 1 < a.rows() && j + 1 < b.rows()) walk(i + 1, j + 1, c);
    if (i + 1 < a.rows()) walk(i + 1, j, c);
    if (j + 1 < b.rows()) walk(i, j + 1, c);
  };
  walk(0, 0, 0.0);
  return best;
}

signal::Waveform Padded(const signal::Waveform& w, double before, double after) {
  signal::Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(static_cast<size_t>(before * w.sample_rate), 0.0);
  out.samples.insert(out.samples.end(), w.samples.begin(), w.samples.end());
  out.samples.resize(out.samples.size() + static_cast<size_t>(after * w.sample_rate), 0.0);
  return out;
}

Outcome MetricOracles() {
  Rng rng(8);
  int dtw_mismatch = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix a(1 + rng.Below(6), 3), b(1 + rng.Below(6), 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.Normal();
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.Normal();
    dtw_mismatch += evaluation::DtwAlignFrames(a, b).cost != ExhaustiveDtw(a, b);
  }
  Matrix z = Matrix::Zero(1, 4), one = Matrix::Zero(1, 4);
  one(0, 1) = 1.0;
  const double identity = evaluation::McdScore({z}, {z});
  const double single = evaluation::McdScore({z}, {one});
  const signal::AudioConfig cfg;
  const double ddur = evaluation::DdurScore(
      Padded(test::Sawtooth(150.0, 1.0, cfg.sample_rate, 0.5), 0.2, 0.2),
      Padded(test::Sawtooth(150.0, 0.6, cfg.sample_rate, 0.5), 0.2, 0.2), cfg);
  const double hop_s = static_cast<double>(cfg.hop_length) / cfg.sample_rate;
  const bool pass = dtw_mismatch == 0 && identity == 0.0 && std::abs(single - 6.1421) < 1e-3 &&
                    std::abs(ddur - 0.4) <= hop_s;
  return {pass, "DTW oracle mismatches " + std::to_string(dtw_mismatch) + "/50, MCD " +
                    Fmt(identity) + " and " + Fmt(single, 6) + " dB, DDUR " + Fmt(ddur) + " s"};
}

// ---------------------------------------------------------------------------
// 9. Signal round trips

Outcome SignalRoundTrips() {
  const signal::AudioConfig cfg;
  const auto w = test::Sawtooth(150.0, 0.6, cfg.sample_rate, 0.6);
  const auto mel = signal::ExtractMel(w, cfg);
  auto gl_error = [&](int iterations) {
    const auto y = signal::GriffinLimInvert(mel, cfg, iterations, 5);
    const Matrix back = signal::ExtractMel(y, cfg).frames.topRows(mel.num_frames());
    return (back - mel.frames).cwiseAbs().mean();
  };
  const double e1 = gl_error(1), e60 = gl_error(60);

  // The quantizer is uniform in the companded domain, so that is where the
  // bound applies.
  double mu_err = 0;
  for (int i = 0; i <= 65536; ++i) {
    const double x = -1.0 + 2.0 * i / 65536.0;
    const double back = vocoder::MuLawDecode(vocoder::MuLawEncode(x));
    mu_err = std::max(mu_err, std::abs(vocoder::MuLawCompress(back) - vocoder::MuLawCompress(x)));
  }

  int length_failures = 0;
  vocoder::VocoderConfig vc;
  vc.d_hidden = 8;
  const auto voc = vocoder::InitVocoder(vc, cfg);
  for (int frames : {1, 7, 40}) {
    signal::MelSpectrogram m;
    m.frames = Matrix::Constant(frames, cfg.n_mels, -4.0);
    m.fingerprint = cfg.Fingerprint();
    const size_t want = static_cast<size_t>(frames) * cfg.hop_length;
    length_failures += signal::GriffinLimInvert(m, cfg, 2, 1).samples.size() != want;
    length_failures += vocoder::SynthesizeNeural(m, voc, cfg, 1).samples.size() != want;
  }
  return {e60 < e1 && mu_err <= 1.0 / 128 && length_failures == 0,
          "Griffin-Lim log-mel error " + Fmt(e60) + " (60 it) vs " + Fmt(e1) +
              " (1 it); mu-law companded error " + Fmt(mu_err) + " (<= 1/128); length failures " +
              std::to_string(length_failures)};
}

// ---------------------------------------------------------------------------
// 10. CLI determinism

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every output file of `a` must exist byte-identically in `b`, snapshots
// excepted (their out field differs by construction).
int CompareTrees(const fs::path& a, const fs::path& b, std::string* first_diff) {
  int diffs = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    if (rel.filename() == "resolved_config.json") continue;
    if (!fs::exists(b / rel) || Slurp(e.path()) != Slurp(b / rel)) {
      if (diffs++ == 0) *first_diff = rel.string();
    }
  }
  return diffs;
}

Outcome CliDeterminism(const std::string& evc, const std::string& dir) {
  const std::string audio = " --n-fft 512 --win-length 400 --hop-length 100 --n-mels 20";
  const std::string model =
      " --d-embed 8 --d-hidden 8 --d-linguistic 6 --d-style 5 --d-classifier 6 --d-prenet 6"
      " --d-decoder 8 --d-attention 6 --max-decode-steps 40";
  const std::string d = dir + "/";
  struct Stage {
    std::string name, command, out;
  };
  const std::vector<Stage> stages = {
      {"synth-corpus", "synth-corpus --speakers 2 --per-cell 3 --seed 4", "corpus"},
      {"prepare", "prepare --manifest " + d + "corpus --train 1 --reference 1 --evaluation 1" + audio,
       "prepared"},
      {"train-stage1",
       "train-stage1 --data " + d + "corpus --steps 4 --batch-size 3 --validate-every 2" + audio +
           model,
       "stage1"},
      {"train-stage2",
       "train-stage2 --data " + d + "prepared --init " + d + "stage1/checkpoint.evc --steps 4"
       " --batch-size 3 --validate-every 2" + audio + model,
       "stage2"},
      {"vocoder-pretrain",
       "vocoder-pretrain --data " + d + "corpus --steps 6 --batch-samples 64 --d-hidden 8"
       " --validate-every 3 --heldout-positions 200" + audio,
       "vocoder"},
      {"vocoder-finetune",
       "vocoder-finetune --data " + d + "prepared --init " + d + "vocoder/vocoder.evc --steps 4"
       " --batch-samples 64 --d-hidden 8 --validate-every 2 --heldout-positions 200" + audio,
       "vocoder-ft"},
      {"convert",
       "convert --checkpoint " + d + "stage2/checkpoint.evc --data " + d + "prepared"
       " --gl-iterations 4 --vocoder neural --vocoder-checkpoint " + d + "vocoder-ft/vocoder.evc" +
           audio,
       "converted"},
      {"evaluate", "evaluate --report " + d + "converted/report.jsonl --data " + d + "prepared" + audio,
       "scores"},
  };
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::string failures;
  for (const auto& st : stages) {
    const std::string first = evc + " " + st.command + " --out " + d + st.out + " > " + d +
                              st.out + ".log 2>&1";
    const std::string again = evc + " " + st.name + " --config " + d + st.out +
                              "/resolved_config.json --out " + d + st.out + "-rerun > " + d +
                              st.out + "-rerun.log 2>&1";
    if (std::system(first.c_str()) != 0) return {false, st.name + " failed; see " + d + st.out + ".log"};
    if (std::system(again.c_str()) != 0) {
      return {false, st.name + " rerun failed; see " + d + st.out + "-rerun.log"};
    }
    std::string diff;
    if (CompareTrees(d + st.out, d + st.out + "-rerun", &diff) > 0) {
      failures += (failures.empty() ? "" : ", ") + st.name + " (" + diff + ")";
    }
  }
  return {failures.empty(), failures.empty()
                                ? std::to_string(stages.size()) +
                                      " stages rerun from their snapshots, outputs bit-identical"
                                : "differences in " + failures};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance runner"};
  std::string evc_path;
  std::string work = (fs::temp_directory_path() / "evc_acceptance").string();
  std::vector<int> only;
  std::string report_path;
  app.add_option("--evc", evc_path, "Path to the evc binary (criterion 10)")->required();
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--report", report_path, "Write a JSON report here");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int k) {
    return only.empty() || std::find(only.begin(), only.end(), k) != only.end();
  };
  fs::create_directories(work);
  json report = json::object();
  std::map<int, Outcome> outcomes;
  std::map<int, double> seconds;
  auto run = [&](int k, const std::function<Outcome()>& f) {
    if (!wanted(k)) return;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      outcomes[k] = f();
    } catch (const std::exception& e) {
      outcomes[k] = {false, std::string("exception: ") + e.what()};
    }
    seconds[k] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  run(1, LossExamples);
  run(2, GradientChecks);
  run(3, StructuralInvariants);
  run(4, Reinit);
  run(8, MetricOracles);
  run(9, SignalRoundTrips);
  run(10, [&] { return CliDeterminism(evc_path, work + "/cli"); });
  if (wanted(5) || wanted(6) || wanted(7)) {
    try {
      const auto toy = RunToy(work + "/toy", wanted(5), wanted(6), wanted(7), &report);
      if (wanted(5)) outcomes[5] = toy.disentangle, seconds[5] = toy.seconds_5_7;
      if (wanted(7)) outcomes[7] = toy.duration, seconds[7] = toy.seconds_5_7;
      if (wanted(6)) outcomes[6] = toy.pretrain, seconds[6] = toy.seconds_6;
    } catch (const std::exception& e) {
      for (int k : {5, 6, 7}) {
        if (wanted(k)) outcomes[k] = {false, std::string("exception: ") + e.what()};
      }
    }
  }

  // Runtime ceilings in seconds; 5 and 7 share one budget.
  const std::map<int, double> budget = {{1, 1},      {2, 120}, {3, 60}, {5, 1800},
                                        {6, 3600},   {7, 1800}, {8, 60}, {9, 120}};
  bool all = true;
  for (auto& [k, o] : outcomes) {
    auto b = budget.find(k);
    if (b != budget.end() && seconds[k] > b->second) {
      o.pass = false;
      o.detail += "; over the " + Fmt(b->second, 6) + " s budget";
    }
    all &= o.pass;
    std::cout << "criterion " << k << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail
              << "  [" << Fmt(seconds[k], 3) << " s]" << std::endl;
    report["criteria"][std::to_string(k)] = {
        {"pass", o.pass}, {"detail", o.detail}, {"seconds", seconds[k]}};
  }
  if (!report_path.empty()) std::ofstream(report_path) << report.dump(2) << "\n";
  return all ? 0 : 1;
}

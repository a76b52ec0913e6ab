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

#include "evc/training.h"

#include <cmath>
#include <fstream>
#include <numeric>

#include "evc/archive.h"
#include "evc/binary_io.h"

namespace evc::training {

using ad::Var;
using nlohmann::json;

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr size_t kMetricTail = 20;

void Require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

template <typename T>
void Read(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

json ComponentsJson(const objectives::LossComponents& c) {
  return {{"l_c", c.l_c},         {"l_adv", c.l_adv},   {"l_ec", c.l_ec},
          {"l_recon", c.l_recon}, {"l_stop", c.l_stop}, {"l_consist", c.l_consist},
          {"l_align", c.l_align}};
}

void CheckFiniteGrads(const ad::ParameterSet& grads, int64_t step) {
  for (const auto& [name, g] : grads) {
    if (!AllFinite(g)) {
      throw DivergenceError("step " + std::to_string(step) +
                            ": non-finite gradient for '" + name + "'");
    }
  }
}

void CheckFiniteLosses(const objectives::LossComponents& c, int64_t step) {
  for (auto [name, v] : {std::pair{"l_c", c.l_c}, {"l_adv", c.l_adv},
                         {"l_ec", c.l_ec}, {"l_recon", c.l_recon},
                         {"l_stop", c.l_stop}, {"l_consist", c.l_consist},
                         {"l_align", c.l_align}}) {
    if (!std::isfinite(v)) {
      throw DivergenceError("step " + std::to_string(step) + ": " + name +
                            " is not finite");
    }
  }
}

}  // namespace

std::vector<Example> LoadExamples(
    const std::vector<corpus::UtteranceRecord>& records,
    const std::string& manifest_path, const corpus::Lexicon& lexicon,
    const signal::AudioConfig& audio,
    const std::function<int(const corpus::UtteranceRecord&)>& label_of) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Example ex;
    ex.id = r.id;
    ex.phonemes = corpus::Transcribe(r.text, lexicon);
    const signal::Waveform w =
        signal::ReadWav(corpus::ResolveAudioPath(manifest_path, r));
    ex.mel = signal::ExtractMel(w, audio).frames;
    ex.label = label_of(r);
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configs

void TrainConfig::Validate() const {
  Require(stage == 1 || stage == 2, "train config: stage must be 1 or 2");
  Require(batch_size >= 1, "train config: batch_size must be >= 1");
  Require(max_steps >= 0, "train config: max_steps must be >= 0");
  Require(learning_rate > 0 && classifier_learning_rate > 0,
          "train config: learning rates must be positive");
  Require(warmup_steps >= 0, "train config: warmup_steps must be >= 0");
  Require(grad_clip > 0, "train config: grad_clip must be positive");
  Require(prenet_dropout >= 0 && prenet_dropout < 1,
          "train config: prenet_dropout must be in [0, 1)");
  Require(validate_every >= 1, "train config: validate_every must be >= 1");
  weights.Validate();
}

json ToJson(const TrainConfig& c) {
  return {{"stage", c.stage},
          {"batch_size", c.batch_size},
          {"max_steps", c.max_steps},
          {"learning_rate", c.learning_rate},
          {"classifier_learning_rate", c.classifier_learning_rate},
          {"warmup_steps", c.warmup_steps},
          {"grad_clip", c.grad_clip},
          {"prenet_dropout", c.prenet_dropout},
          {"seed", c.seed},
          {"validate_every", c.validate_every},
          {"weights",
           {{"recon", c.weights.recon},
            {"stop", c.weights.stop},
            {"consist", c.weights.consist},
            {"classifier", c.weights.classifier},
            {"adversarial", c.weights.adversarial},
            {"emotion", c.weights.emotion},
            {"align", c.weights.align}}}};
}

std::string TrainConfig::Fingerprint() const {
  return HexDigest(Fnv1a(ToJson(*this).dump()));
}

TrainConfig TrainConfigFromJson(const json& j, TrainConfig c) {
  try {
    Read(j, "stage", &c.stage);
    Read(j, "batch_size", &c.batch_size);
    Read(j, "max_steps", &c.max_steps);
    Read(j, "learning_rate", &c.learning_rate);
    Read(j, "classifier_learning_rate", &c.classifier_learning_rate);
    Read(j, "warmup_steps", &c.warmup_steps);
    Read(j, "grad_clip", &c.grad_clip);
    Read(j, "prenet_dropout", &c.prenet_dropout);
    Read(j, "seed", &c.seed);
    Read(j, "validate_every", &c.validate_every);
    if (j.contains("weights")) {
      const json& w = j.at("weights");
      Read(w, "recon", &c.weights.recon);
      Read(w, "stop", &c.weights.stop);
      Read(w, "consist", &c.weights.consist);
      Read(w, "classifier", &c.weights.classifier);
      Read(w, "adversarial", &c.weights.adversarial);
      Read(w, "emotion", &c.weights.emotion);
      Read(w, "align", &c.weights.align);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  return c;
}

json ToJson(const model::ModelConfig& c) {
  return {{"phoneme_vocab", c.phoneme_vocab},
          {"n_mels", c.n_mels},
          {"d_embed", c.d_embed},
          {"d_hidden", c.d_hidden},
          {"d_linguistic", c.d_linguistic},
          {"d_style", c.d_style},
          {"d_classifier", c.d_classifier},
          {"d_prenet", c.d_prenet},
          {"d_decoder", c.d_decoder},
          {"d_attention", c.d_attention},
          {"num_classes", c.num_classes},
          {"reduction_factor", c.reduction_factor},
          {"max_decode_steps", c.max_decode_steps},
          {"max_recognizer_steps", c.max_recognizer_steps},
          {"log_floor", c.log_floor}};
}

model::ModelConfig ModelConfigFromJson(const json& j, model::ModelConfig c) {
  try {
    Read(j, "phoneme_vocab", &c.phoneme_vocab);
    Read(j, "n_mels", &c.n_mels);
    Read(j, "d_embed", &c.d_embed);
    Read(j, "d_hidden", &c.d_hidden);
    Read(j, "d_linguistic", &c.d_linguistic);
    Read(j, "d_style", &c.d_style);
    Read(j, "d_classifier", &c.d_classifier);
    Read(j, "d_prenet", &c.d_prenet);
    Read(j, "d_decoder", &c.d_decoder);
    Read(j, "d_attention", &c.d_attention);
    Read(j, "num_classes", &c.num_classes);
    Read(j, "reduction_factor", &c.reduction_factor);
    Read(j, "max_decode_steps", &c.max_decode_steps);
    Read(j, "max_recognizer_steps", &c.max_recognizer_steps);
    Read(j, "log_floor", &c.log_floor);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("model config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Optimizer

void AdamUpdate(const ad::ParameterSet& grads, double lr, AdamState* s,
                ad::ParameterSet* params) {
  ++s->t;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(s->t));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(s->t));
  for (const auto& [name, g] : grads) {
    Matrix& p = params->at(name);
    auto [mit, m_new] = s->m.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    auto [vit, v_new] = s->v.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
    Matrix& m = mit->second;
    Matrix& v = vit->second;
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEps);
  }
}

double ClipGradients(ad::ParameterSet* grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : *grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : *grads) g *= scale;
  }
  return norm;
}

double LearningRate(double base, int warmup_steps, int64_t step) {
  if (warmup_steps <= 0) return base;
  return base * std::min(1.0, static_cast<double>(step + 1) / warmup_steps);
}

// ---------------------------------------------------------------------------
// Checkpoints

void SaveCheckpoint(const std::string& path, const Checkpoint& ck) {
  io::Archive a;
  a.kind = "model";
  a.meta = {{"config", ToJson(ck.model.config)},
            {"stage", ck.model.stage},
            {"step", ck.step},
            {"train_config_fingerprint", ck.train_config_fingerprint},
            {"metric_tail", ck.metric_tail},
            {"adam_main_t", ck.optimizer.main.t},
            {"adam_classifier_t", ck.optimizer.classifier.t},
            {"annotations", ck.annotations}};
  a.groups["params"] = ck.model.params;
  a.groups["adam.main.m"] = ck.optimizer.main.m;
  a.groups["adam.main.v"] = ck.optimizer.main.v;
  a.groups["adam.classifier.m"] = ck.optimizer.classifier.m;
  a.groups["adam.classifier.v"] = ck.optimizer.classifier.v;
  io::SaveArchive(path, a);
}

Checkpoint LoadCheckpoint(const std::string& path) {
  io::Archive a = io::LoadArchive(path, "model");
  Checkpoint ck;
  try {
    ck.model.config = ModelConfigFromJson(a.meta.at("config"));
    ck.model.stage = a.meta.at("stage").get<int>();
    ck.step = a.meta.at("step").get<int64_t>();
    ck.train_config_fingerprint = a.meta.at("train_config_fingerprint").get<std::string>();
    ck.metric_tail = a.meta.at("metric_tail").get<std::vector<std::string>>();
    ck.optimizer.main.t = a.meta.at("adam_main_t").get<int64_t>();
    ck.optimizer.classifier.t = a.meta.at("adam_classifier_t").get<int64_t>();
    ck.annotations = a.meta.value("annotations", json::object());
  } catch (const json::exception& e) {
    throw ValidationError(path + ": bad checkpoint metadata: " + e.what());
  }
  ck.model.params = std::move(a.groups["params"]);
  ck.optimizer.main.m = std::move(a.groups["adam.main.m"]);
  ck.optimizer.main.v = std::move(a.groups["adam.main.v"]);
  ck.optimizer.classifier.m = std::move(a.groups["adam.classifier.m"]);
  ck.optimizer.classifier.v = std::move(a.groups["adam.classifier.v"]);
  try {
    ck.model.ValidateShapes();
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Losses and the adversarial step

namespace {

struct Paths {
  Var e_text;
  model::RecognizerGraphOut rec;
};

Paths LinguisticPaths(ad::Graph& g, const model::ModelConfig& cfg, const Example& ex) {
  Paths p;
  p.e_text = model::TextEncoderGraph(g, cfg, ex.phonemes);
  Var memory = model::ListenerGraph(g, cfg, ex.mel);
  p.rec = model::RecognizerGraph(g, cfg, memory, p.e_text,
                                 static_cast<int>(ex.phonemes.size()));
  return p;
}

}  // namespace

Var LinguisticRows(ad::Graph& g, const model::ModelConfig& cfg, const Example& ex) {
  Paths p = LinguisticPaths(g, cfg, ex);
  return ad::ConcatRows({p.e_text, p.rec.embeddings});
}

LossVars BuildExampleLosses(ad::Graph& g, const model::ModelConfig& cfg,
                            const Example& ex, const model::ForwardOptions& opts) {
  Require(ex.label >= 0 && ex.label < cfg.num_classes,
          "example " + ex.id + ": label " + std::to_string(ex.label) +
              " outside " + std::to_string(cfg.num_classes) + " classes");
  Paths p = LinguisticPaths(g, cfg, ex);
  Var e_audio = p.rec.embeddings;
  Var h = model::StyleEncoderGraph(g, cfg, ex.mel);

  model::DecoderGraphOut from_text =
      model::DecoderGraph(g, cfg, p.e_text, h, &ex.mel, opts);
  model::DecoderGraphOut from_audio =
      model::DecoderGraph(g, cfg, e_audio, h, &ex.mel, opts);

  LossVars l;
  const int r = cfg.reduction_factor;
  l.l_recon = Scale(Add(objectives::ReconstructionGraph(from_text.mel, ex.mel, r),
                        objectives::ReconstructionGraph(from_audio.mel, ex.mel, r)),
                    0.5);
  // Stop terms of both decoders plus the recognizer's end-of-sequence stop.
  l.l_stop = Scale(Add(Add(objectives::StopGraph(from_text.stop_probs),
                           objectives::StopGraph(from_audio.stop_probs)),
                       objectives::StopGraph(p.rec.stop_probs)),
                   1.0 / 3.0);
  const Eigen::Index n = p.e_text.rows();
  l.l_consist = objectives::ConsistencyGraph(p.e_text, e_audio,
                                             g.Constant(Matrix::Identity(n, n)));
  l.l_align = Scale(Add(Add(objectives::GuidedAttentionGraph(from_text.attention),
                            objectives::GuidedAttentionGraph(from_audio.attention)),
                        objectives::GuidedAttentionGraph(p.rec.attention)),
                    1.0 / 3.0);
  Var posterior = model::ClassifierGraph(g, ad::ConcatRows({p.e_text, e_audio}));
  l.l_c = objectives::ClassifierLossGraph(posterior, ex.label);
  l.l_adv = objectives::AdversarialLossGraph(posterior);
  l.l_ec = objectives::SoftmaxCrossEntropyGraph(model::EmotionLogitsGraph(g, h), ex.label);
  return l;
}

PhaseResult ClassifierPhase(const std::vector<const Example*>& batch,
                            const model::ModelState& state) {
  Require(!batch.empty(), "classifier phase: empty batch");
  ad::Tape tape;
  ad::Graph g(&tape, &state.params);
  g.SetTrainable(model::IsClassifierParameter);
  std::vector<Var> losses;
  for (const Example* ex : batch) {
    Var rows = LinguisticRows(g, state.config, *ex);
    losses.push_back(objectives::ClassifierLossGraph(model::ClassifierGraph(g, rows),
                                                     ex->label));
  }
  Var total = Scale(Sum(ad::ConcatRows(losses)), 1.0 / static_cast<double>(batch.size()));
  tape.Backward(total);
  PhaseResult out;
  out.grads = g.Gradients();
  out.components.l_c = total.scalar();
  return out;
}

PhaseResult EncoderPhase(const std::vector<const Example*>& batch,
                         const model::ModelState& state, const TrainConfig& cfg,
                         Rng* dropout_rng) {
  Require(!batch.empty(), "encoder phase: empty batch");
  ad::Tape tape;
  ad::Graph g(&tape, &state.params);
  g.SetTrainable([](const std::string& n) { return !model::IsClassifierParameter(n); });
  model::ForwardOptions opts;
  opts.mode = model::Mode::kTraining;
  opts.rng = dropout_rng;
  opts.prenet_dropout = cfg.prenet_dropout;
  const auto& w = cfg.weights;
  std::vector<Var> objective;
  PhaseResult out;
  auto& c = out.components;
  for (const Example* ex : batch) {
    LossVars l = BuildExampleLosses(g, state.config, *ex, opts);
    objective.push_back(Add(
        Add(Add(Scale(l.l_recon, w.recon), Scale(l.l_stop, w.stop)),
            Add(Scale(l.l_consist, w.consist), Scale(l.l_ec, w.emotion))),
        Add(Scale(l.l_adv, w.adversarial), Scale(l.l_align, w.align))));
    c.l_c += l.l_c.scalar();
    c.l_adv += l.l_adv.scalar();
    c.l_ec += l.l_ec.scalar();
    c.l_recon += l.l_recon.scalar();
    c.l_stop += l.l_stop.scalar();
    c.l_consist += l.l_consist.scalar();
    c.l_align += l.l_align.scalar();
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  Var total = Scale(Sum(ad::ConcatRows(objective)), inv);
  tape.Backward(total);
  out.grads = g.Gradients();
  c.l_c *= inv;
  c.l_adv *= inv;
  c.l_ec *= inv;
  c.l_recon *= inv;
  c.l_stop *= inv;
  c.l_consist *= inv;
  c.l_align *= inv;
  return out;
}

objectives::LossBreakdown AdversarialStep(const std::vector<const Example*>& batch,
                                          const TrainConfig& cfg, int64_t step,
                                          Rng* dropout_rng, model::ModelState* state,
                                          OptimizerState* opt) {
  // Phase (a): classifier only.
  PhaseResult a = ClassifierPhase(batch, *state);
  if (!std::isfinite(a.components.l_c)) {
    throw DivergenceError("step " + std::to_string(step) + ": l_c is not finite");
  }
  CheckFiniteGrads(a.grads, step);
  ClipGradients(&a.grads, cfg.grad_clip);
  AdamUpdate(a.grads, LearningRate(cfg.classifier_learning_rate, cfg.warmup_steps, step),
             &opt->classifier, &state->params);

  // Phase (b): everything else, classifier frozen.
  PhaseResult b = EncoderPhase(batch, *state, cfg, dropout_rng);
  b.components.l_c = a.components.l_c;
  CheckFiniteLosses(b.components, step);
  CheckFiniteGrads(b.grads, step);
  ClipGradients(&b.grads, cfg.grad_clip);
  AdamUpdate(b.grads, LearningRate(cfg.learning_rate, cfg.warmup_steps, step),
             &opt->main, &state->params);
  return objectives::TotalLoss(b.components, cfg.stage, cfg.weights);
}

ValidationMetrics Validate(const std::vector<Example>& examples,
                           const model::ModelState& state) {
  ValidationMetrics m;
  if (examples.empty()) return m;
  for (const Example& ex : examples) {
    ad::Tape tape;
    ad::Graph g(&tape, &state.params);
    g.SetTrainable([](const std::string&) { return false; });
    LossVars l = BuildExampleLosses(g, state.config, ex, model::ForwardOptions{});
    m.l_recon += l.l_recon.scalar();
    m.l_stop += l.l_stop.scalar();
  }
  m.l_recon /= static_cast<double>(examples.size());
  m.l_stop /= static_cast<double>(examples.size());
  return m;
}

// ---------------------------------------------------------------------------
// Training loops

model::ModelState InitStage1(const model::ModelConfig& base, int num_classes,
                             uint64_t seed) {
  model::ModelConfig cfg = base;
  cfg.num_classes = num_classes;
  return model::InitModel(cfg, DeriveSeed(seed, "init"));
}

namespace {

TrainResult RunTraining(const Dataset& data, const TrainConfig& cfg,
                        const model::ModelState& init) {
  cfg.Validate();
  init.ValidateShapes();
  Require(cfg.stage == init.stage,
          "train: config is for stage " + std::to_string(cfg.stage) +
              " but the initial state is stage " + std::to_string(init.stage));
  Require(!data.train.empty(), "train: empty training corpus");
  Require(data.num_classes == init.config.num_classes,
          "train: dataset has " + std::to_string(data.num_classes) +
              " classes, model expects " + std::to_string(init.config.num_classes));
  for (const Example& ex : data.train) {
    Require(ex.label >= 0 && ex.label < data.num_classes,
            "train: example " + ex.id + " has an out-of-range label");
  }

  TrainResult result;
  result.final_state = init;
  result.best.model = init;
  result.best.train_config_fingerprint = cfg.Fingerprint();

  std::ofstream log;
  if (!cfg.metrics_path.empty()) {
    log.open(cfg.metrics_path, std::ios::trunc);
    if (!log) throw IoError("cannot open metrics log " + cfg.metrics_path);
  }
  auto emit = [&](const json& record) {
    const std::string line = record.dump();
    result.metrics.push_back(line);
    if (log.is_open()) log << line << '\n' << std::flush;
  };

  if (cfg.max_steps == 0) {
    result.final_validation = Validate(data.validation, init);
    result.best_validation = result.final_validation;
    return result;
  }

  model::ModelState state = init;
  OptimizerState opt;
  Rng batch_rng(DeriveSeed(cfg.seed, "batches"));
  Rng dropout_rng(DeriveSeed(cfg.seed, "dropout"));
  std::vector<size_t> order(data.train.size());
  size_t cursor = order.size();
  bool have_best = false;

  for (int64_t step = 0; step < cfg.max_steps; ++step) {
    std::vector<const Example*> batch;
    while (static_cast<int>(batch.size()) <
           std::min<int>(cfg.batch_size, static_cast<int>(data.train.size()))) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), size_t{0});
        batch_rng.Shuffle(&order);
        cursor = 0;
      }
      batch.push_back(&data.train[order[cursor++]]);
    }
    const objectives::LossBreakdown b =
        AdversarialStep(batch, cfg, step, &dropout_rng, &state, &opt);
    json record = {{"step", step + 1},
                   {"loss", ComponentsJson(b.components)},
                   {"weighted_total", b.weighted_total},
                   {"lr", LearningRate(cfg.learning_rate, cfg.warmup_steps, step)}};
    const bool validate = (step + 1) % cfg.validate_every == 0 || step + 1 == cfg.max_steps;
    if (validate && !data.validation.empty()) {
      const ValidationMetrics v = Validate(data.validation, state);
      record["validation"] = {{"l_recon", v.l_recon}, {"l_stop", v.l_stop}};
      result.final_validation = v;
      if (!have_best || v.score() < result.best_validation.score()) {
        have_best = true;
        result.best_validation = v;
        result.best.model = state;
        result.best.optimizer = opt;
        result.best.step = step + 1;
      }
    }
    emit(record);
  }
  if (!have_best) {
    // No validation slice: the final state is the only candidate.
    result.best.model = state;
    result.best.optimizer = opt;
    result.best.step = cfg.max_steps;
  }
  result.final_state = std::move(state);
  const size_t tail = std::min(kMetricTail, result.metrics.size());
  result.best.metric_tail.assign(result.metrics.end() - static_cast<long>(tail),
                                 result.metrics.end());
  return result;
}

}  // namespace

TrainResult TrainStage1(const Dataset& data, const TrainConfig& cfg,
                        const model::ModelState& init) {
  Require(cfg.stage == 1, "train_stage1: config stage must be 1");
  return RunTraining(data, cfg, init);
}

TrainResult TrainStage2(const Dataset& data, const TrainConfig& cfg,
                        const model::ModelState& init) {
  Require(cfg.stage == 2, "train_stage2: config stage must be 2");
  Require(init.stage == 2, "train_stage2: initial state must be a stage-2 state");
  return RunTraining(data, cfg, init);
}

model::ModelState ReinitForStage2(const Checkpoint& ck, int num_emotions,
                                  uint64_t seed) {
  Require(ck.model.stage == 1, "reinit_for_stage2: checkpoint is already stage 2");
  Require(num_emotions >= 2, "reinit_for_stage2: need at least 2 emotions");
  model::ModelState s = ck.model;
  s.config.num_classes = num_emotions;
  s.stage = 2;
  const auto shapes = model::ParameterShapes(s.config);
  for (const std::string& name : model::HeadParameterNames()) {
    const auto& [rows, cols] = shapes.at(name);
    Rng rng(DeriveSeed(seed, "stage2/" + name));
    s.params[name] = model::InitArray(name, rows, cols, &rng);
  }
  s.ValidateShapes();
  return s;
}

}  // namespace evc::training

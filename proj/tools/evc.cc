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

// evc: one entry point per pipeline stage.
//
// Option values resolve as built-in defaults < --config file < flags, with
// EVC_SEED standing in for the default seed. Every run writes the resolved
// values as JSON next to its outputs; passing that file back through
// --config repeats the run.
//
// Exit codes: 0 success, 1 bad input (flags, configs, data), 2 runtime
// failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evc/binary_io.h"
#include "evc/corpus.h"
#include "evc/evaluation.h"
#include "evc/inference.h"
#include "evc/model.h"
#include "evc/signal.h"
#include "evc/training.h"
#include "evc/vocoder.h"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace evc;

constexpr const char* kSnapshotName = "resolved_config.json";

// ---------------------------------------------------------------------------
// Option binding with config-file and environment fallbacks.

class Options {
 public:
  Options(CLI::App* app, std::string command) : app_(app), command_(std::move(command)) {
    app_->add_option("--config", config_path_,
                     "JSON file of option values (e.g. a resolved_config.json); "
                     "flags take precedence");
  }

  template <typename T>
  CLI::Option* Add(const std::string& name, T* target, const std::string& desc,
                   bool required = false) {
    CLI::Option* opt;
    if constexpr (std::is_same_v<T, bool>) {
      opt = app_->add_flag("--" + name + ",!--no-" + name, *target, desc);
    } else {
      opt = app_->add_option("--" + name, *target, desc)->capture_default_str();
      if constexpr (std::is_same_v<T, std::vector<std::string>>) opt->delimiter(',');
    }
    if (required) opt->description(desc + " (required)");
    bindings_.push_back({name, opt, required,
                         [target, name](const json& j) {
                           try {
                             *target = j.get<T>();
                           } catch (const json::exception&) {
                             throw ValidationError("config value for '" + name +
                                                   "' has the wrong type");
                           }
                         },
                         [target] { return json(*target); }});
    return opt;
  }

  // Fills options that were not given on the command line.
  void Resolve() {
    json config = json::object();
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw ValidationError("cannot open config file " + config_path_);
      try {
        config = json::parse(in);
      } catch (const json::exception& e) {
        throw ValidationError(config_path_ + ": " + e.what());
      }
      if (!config.is_object()) throw ValidationError(config_path_ + ": expected a JSON object");
      if (config.contains("command") && config["command"] != command_) {
        throw ValidationError(config_path_ + " is a snapshot of '" +
                              config["command"].get<std::string>() + "', not '" + command_ +
                              "'");
      }
      std::set<std::string> known = {"command"};
      for (const auto& b : bindings_) known.insert(b.name);
      for (const auto& [key, value] : config.items()) {
        if (!known.count(key)) {
          throw ValidationError(config_path_ + ": unknown option '" + key + "'");
        }
      }
    }
    for (auto& b : bindings_) {
      if (b.opt->count() > 0) continue;
      if (config.contains(b.name)) {
        b.set(config[b.name]);
      } else if (b.required) {
        throw ValidationError("--" + b.name + " is required");
      } else if (b.name == "seed") {
        if (const char* env = std::getenv("EVC_SEED")) {
          try {
            size_t used = 0;
            const unsigned long long v = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument(env);
            b.set(json(static_cast<uint64_t>(v)));
          } catch (const std::logic_error&) {
            throw ValidationError(std::string("EVC_SEED is not an unsigned integer: ") + env);
          }
        }
      }
    }
  }

  json Snapshot() const {
    json j = {{"command", command_}};
    for (const auto& b : bindings_) j[b.name] = b.get();
    return j;
  }

  void WriteSnapshot(const std::string& path) const {
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) io::EnsureDirectory(parent.string());
    io::AtomicWriteText(path, Snapshot().dump(2) + "\n");
  }

 private:
  struct Binding {
    std::string name;
    CLI::Option* opt;
    bool required;
    std::function<void(const json&)> set;
    std::function<json()> get;
  };
  CLI::App* app_;
  std::string command_;
  std::string config_path_;
  std::vector<Binding> bindings_;
};

void AddAudio(Options& o, signal::AudioConfig* a) {
  o.Add("sample-rate", &a->sample_rate, "Audio sample rate (Hz)");
  o.Add("n-fft", &a->n_fft, "FFT size");
  o.Add("win-length", &a->win_length, "Analysis window length (samples)");
  o.Add("hop-length", &a->hop_length, "Frame hop (samples)");
  o.Add("n-mels", &a->n_mels, "Mel bands");
  o.Add("fmin", &a->fmin, "Lowest mel filter edge (Hz)");
  o.Add("fmax", &a->fmax, "Highest mel filter edge (Hz)");
}

void AddModel(Options& o, model::ModelConfig* m) {
  o.Add("phoneme-vocab", &m->phoneme_vocab, "Phoneme vocabulary size");
  o.Add("d-embed", &m->d_embed, "Phoneme embedding width");
  o.Add("d-hidden", &m->d_hidden, "Encoder hidden width");
  o.Add("d-linguistic", &m->d_linguistic, "Linguistic embedding width");
  o.Add("d-style", &m->d_style, "Style embedding width");
  o.Add("d-classifier", &m->d_classifier, "Adversarial classifier width");
  o.Add("d-prenet", &m->d_prenet, "Decoder prenet width");
  o.Add("d-decoder", &m->d_decoder, "Decoder state width");
  o.Add("d-attention", &m->d_attention, "Attention width");
  o.Add("reduction-factor", &m->reduction_factor, "Frames emitted per decoder step");
  o.Add("max-decode-steps", &m->max_decode_steps, "Free-running decoder step limit");
  o.Add("max-recognizer-steps", &m->max_recognizer_steps, "Recognizer output limit");
}

void AddTrain(Options& o, training::TrainConfig* t) {
  o.Add("steps", &t->max_steps, "Optimizer steps");
  o.Add("batch-size", &t->batch_size, "Utterances per step");
  o.Add("lr", &t->learning_rate, "Main learning rate");
  o.Add("classifier-lr", &t->classifier_learning_rate, "Classifier learning rate");
  o.Add("warmup", &t->warmup_steps, "Linear warmup steps");
  o.Add("clip", &t->grad_clip, "Gradient norm clip");
  o.Add("dropout", &t->prenet_dropout, "Prenet dropout in training");
  o.Add("seed", &t->seed, "Random seed (EVC_SEED overrides the default)");
  o.Add("validate-every", &t->validate_every, "Validation cadence (steps)");
  o.Add("w-recon", &t->weights.recon, "Reconstruction loss weight");
  o.Add("w-stop", &t->weights.stop, "Stop-token loss weight");
  o.Add("w-consist", &t->weights.consist, "Consistency loss weight");
  o.Add("w-classifier", &t->weights.classifier, "Classifier loss weight");
  o.Add("w-adv", &t->weights.adversarial, "Adversarial loss weight");
  o.Add("w-emotion", &t->weights.emotion, "Emotion supervision loss weight");
  o.Add("w-align", &t->weights.align, "Guided attention loss weight (0 disables)");
}

void AddVocoder(Options& o, vocoder::VocoderConfig* v) {
  o.Add("steps", &v->max_steps, "Optimizer steps");
  o.Add("context", &v->context, "Previous samples seen by the model");
  o.Add("d-cond", &v->d_cond, "Mel conditioning width");
  o.Add("d-hidden", &v->d_hidden, "Hidden width");
  o.Add("batch-samples", &v->batch_samples, "Sample positions per step");
  o.Add("lr", &v->learning_rate, "Learning rate");
  o.Add("warmup", &v->warmup_steps, "Linear warmup steps");
  o.Add("clip", &v->grad_clip, "Gradient norm clip");
  o.Add("seed", &v->seed, "Random seed (EVC_SEED overrides the default)");
  o.Add("validate-every", &v->validate_every, "Held-out NLL cadence (steps)");
  o.Add("heldout-positions", &v->heldout_positions, "Positions per held-out utterance");
}

// ---------------------------------------------------------------------------
// Data helpers

std::string ManifestPath(const std::string& data) {
  if (data.empty()) throw ValidationError("--data is required");
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.jsonl").string();
  return data;
}

corpus::EmotionInventory Inventory(const std::vector<std::string>& names) {
  return names.empty() ? corpus::EmotionInventory::Default() : corpus::EmotionInventory(names);
}

struct Slices {
  std::vector<corpus::UtteranceRecord> train;
  std::vector<corpus::UtteranceRecord> validation;
};

// Uses the manifest's split field when present; otherwise every tenth
// record (at least one, given two or more) is held out.
Slices SliceRecords(const std::vector<corpus::UtteranceRecord>& records,
                    const std::string& train_split, const std::string& validation_split) {
  Slices s;
  const bool has_splits = std::any_of(records.begin(), records.end(),
                                      [](const auto& r) { return !r.split.empty(); });
  const size_t stride = std::min<size_t>(10, records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (has_splits) {
      if (r.split == train_split) s.train.push_back(r);
      if (r.split == validation_split) s.validation.push_back(r);
    } else {
      (stride > 1 && i % stride == stride - 1 ? s.validation : s.train).push_back(r);
    }
  }
  if (s.train.empty()) throw ValidationError("no training records in the manifest");
  return s;
}

json AudioJson(const signal::AudioConfig& a) {
  return {{"sample_rate", a.sample_rate}, {"n_fft", a.n_fft},   {"win_length", a.win_length},
          {"hop_length", a.hop_length},   {"n_mels", a.n_mels}, {"fmin", a.fmin},
          {"fmax", a.fmax},               {"log_floor", a.log_floor}};
}

signal::AudioConfig AudioFromJson(const json& j) {
  signal::AudioConfig a;
  try {
    a.sample_rate = j.at("sample_rate").get<int>();
    a.n_fft = j.at("n_fft").get<int>();
    a.win_length = j.at("win_length").get<int>();
    a.hop_length = j.at("hop_length").get<int>();
    a.n_mels = j.at("n_mels").get<int>();
    a.fmin = j.at("fmin").get<double>();
    a.fmax = j.at("fmax").get<double>();
    a.log_floor = j.at("log_floor").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad audio config: ") + e.what());
  }
  return a;
}

// Audio config recorded in a checkpoint; must agree with the resolved one.
void CheckAudio(const training::Checkpoint& ck, const signal::AudioConfig& audio,
                const std::string& path) {
  if (!ck.annotations.contains("audio")) return;
  if (AudioFromJson(ck.annotations["audio"]).Fingerprint() != audio.Fingerprint()) {
    throw ValidationError(path + " was trained with a different audio config");
  }
}

std::vector<std::string> CheckpointLabels(const training::Checkpoint& ck) {
  if (ck.annotations.contains("labels")) {
    return ck.annotations["labels"].get<std::vector<std::string>>();
  }
  std::vector<std::string> out;
  for (int i = 0; i < ck.model.config.num_classes; ++i) out.push_back(std::to_string(i));
  return out;
}

std::vector<vocoder::VocoderExample> VocoderExamples(
    const std::vector<corpus::UtteranceRecord>& records, const std::string& manifest,
    const signal::AudioConfig& audio) {
  std::vector<vocoder::VocoderExample> out;
  for (const auto& r : records) {
    const signal::Waveform w = signal::ReadWav(corpus::ResolveAudioPath(manifest, r));
    if (w.sample_rate != audio.sample_rate) {
      throw ValidationError(r.id + ": sample rate " + std::to_string(w.sample_rate) +
                            " does not match the audio config");
    }
    out.push_back(vocoder::MakeVocoderExample(w, audio));
  }
  return out;
}

void SaveTrainOutputs(const training::TrainResult& r, const json& annotations,
                      const std::string& out) {
  training::Checkpoint best = r.best;
  best.annotations = annotations;
  training::SaveCheckpoint((fs::path(out) / "checkpoint.evc").string(), best);
  training::Checkpoint last;
  last.model = r.final_state;
  last.step = best.step;
  last.train_config_fingerprint = best.train_config_fingerprint;
  last.annotations = annotations;
  training::SaveCheckpoint((fs::path(out) / "final.evc").string(), last);
  std::cout << "best step " << r.best.step << ": validation l_recon "
            << r.best_validation.l_recon << ", l_stop " << r.best_validation.l_stop << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands. Each registers its options and returns the action to run once
// parsing succeeded.

using Action = std::function<void()>;

struct Command {
  CLI::App* app;
  std::shared_ptr<Options> options;
  Action run;
};

Command SynthCorpus(CLI::App& root) {
  struct State {
    std::string out;
    int speakers = 2;
    int first_voice = 0;
    std::vector<std::string> voices;
    std::vector<std::string> emotions = corpus::EmotionInventory::Default().names();
    int per_cell = 10;
    int sample_rate = 16000;
    uint64_t seed = 1;
    bool parallel = true;
    double jitter = 0.0;
    std::string id_prefix;
  };
  auto st = std::make_shared<State>();
  auto* app = root.add_subcommand("synth-corpus", "Render a synthetic parallel corpus");
  auto o = std::make_shared<Options>(app, "synth-corpus");
  o->Add("out", &st->out, "Output directory", true);
  o->Add("speakers", &st->speakers, "Number of speakers");
  o->Add("first-voice", &st->first_voice, "First entry of the built-in voice table");
  o->Add("voices", &st->voices, "Explicit voices as f0:formant_shift, cycled over speakers");
  o->Add("emotions", &st->emotions, "Emotion list");
  o->Add("per-cell", &st->per_cell, "Utterances per (speaker, emotion)");
  o->Add("sample-rate", &st->sample_rate, "Sample rate (Hz)");
  o->Add("seed", &st->seed, "Random seed (EVC_SEED overrides the default)");
  o->Add("parallel", &st->parallel, "Share the sentence list across cells");
  o->Add("jitter", &st->jitter, "Per-utterance prosody variation (relative std)");
  o->Add("id-prefix", &st->id_prefix, "Prefix for utterance ids");
  return {app, o, [st, o] {
            corpus::SyntheticCorpusSpec spec;
            spec.num_speakers = st->speakers;
            spec.first_voice = st->first_voice;
            for (const auto& v : st->voices) {
              const auto colon = v.find(':');
              try {
                if (colon == std::string::npos) throw std::invalid_argument(v);
                spec.voices.push_back({std::stod(v.substr(0, colon)), std::stod(v.substr(colon + 1))});
              } catch (const std::logic_error&) {
                throw ValidationError("--voices entries look like 140:0.9, got '" + v + "'");
              }
            }
            spec.emotions = st->emotions;
            spec.utterances_per_cell = st->per_cell;
            spec.sample_rate = st->sample_rate;
            spec.seed = st->seed;
            spec.parallel = st->parallel;
            spec.prosody_jitter = st->jitter;
            spec.id_prefix = st->id_prefix;
            o->WriteSnapshot((fs::path(st->out) / kSnapshotName).string());
            const auto c = corpus::BuildSyntheticCorpus(spec, st->out);
            std::cout << "wrote " << c.utterances.size() << " utterances to " << st->out << "\n";
          }};
}

Command Prepare(CLI::App& root) {
  struct State {
    std::string manifest;
    std::string out;
    std::vector<std::string> emotions;
    int train = 300;
    int reference = 30;
    int evaluation = 20;
    uint64_t seed = 1234;
    bool features = false;
    signal::AudioConfig audio;
  };
  auto st = std::make_shared<State>();
  auto* app = root.add_subcommand("prepare", "Assign splits and extract features");
  auto o = std::make_shared<Options>(app, "prepare");
  o->Add("manifest", &st->manifest, "Input manifest (file or corpus directory)", true);
  o->Add("out", &st->out, "Output directory", true);
  o->Add("emotions", &st->emotions, "Emotion inventory (default: the built-in five)");
  o->Add("train", &st->train, "Training utterances per emotion");
  o->Add("reference", &st->reference, "Reference utterances per emotion");
  o->Add("evaluation", &st->evaluation, "Evaluation utterances per emotion");
  o->Add("seed", &st->seed, "Split seed (EVC_SEED overrides the default)");
  o->Add("features", &st->features, "Also write log-mel features under out/features");
  AddAudio(*o, &st->audio);
  return {app, o, [st, o] {
            st->audio.Validate();
            const std::string in = ManifestPath(st->manifest);
            auto records = corpus::LoadManifest(in, Inventory(st->emotions));
            corpus::SplitSpec spec{st->train, st->reference, st->evaluation, st->seed};
            corpus::ApplySplits(corpus::MakeSplits(records, spec), &records);
            o->WriteSnapshot((fs::path(st->out) / kSnapshotName).string());
            const fs::path out_dir = fs::absolute(st->out);
            for (auto& r : records) {
              // Keep audio reachable from the new manifest's directory.
              const fs::path audio = fs::absolute(corpus::ResolveAudioPath(in, r));
              r.audio_path = fs::relative(audio, out_dir).generic_string();
              if (st->features) {
                io::EnsureDirectory((out_dir / "features").string());
                signal::WriteMel((out_dir / "features" / (r.id + ".mel")).string(),
                                 signal::ExtractMel(signal::ReadWav(audio.string()), st->audio));
              }
            }
            corpus::WriteManifest((out_dir / "manifest.jsonl").string(), records);
            std::map<std::string, int> counts;
            for (const auto& r : records) ++counts[r.split.empty() ? "(unassigned)" : r.split];
            for (const auto& [k, v] : counts) std::cout << k << ": " << v << "\n";
          }};
}

struct TrainState {
  std::string data;
  std::string out;
  std::string init;
  bool from_scratch = false;
  std::string train_split = "train";
  std::string validation_split = "reference";
  std::vector<std::string> emotions;
  training::TrainConfig train;
  model::ModelConfig model;
  signal::AudioConfig audio;
};

Command TrainStage(CLI::App& root, int stage) {
  auto st = std::make_shared<TrainState>();
  st->train.stage = stage;
  const std::string name = stage == 1 ? "train-stage1" : "train-stage2";
  auto* app = root.add_subcommand(
      name, stage == 1 ? "Style initialization on a multi-speaker corpus (speaker labels)"
                       : "Emotion training from a stage-1 checkpoint (emotion labels)");
  auto o = std::make_shared<Options>(app, name);
  o->Add("data", &st->data, "Corpus directory or manifest", true);
  o->Add("out", &st->out, "Output directory", true);
  o->Add("train-split", &st->train_split, "Split used for training");
  o->Add("validation-split", &st->validation_split, "Split used for checkpoint selection");
  if (stage == 2) {
    o->Add("init", &st->init, "Stage-1 checkpoint");
    o->Add("from-scratch", &st->from_scratch, "Start from random weights instead of --init");
    o->Add("emotions", &st->emotions, "Emotion inventory (default: the built-in five)");
  }
  AddTrain(*o, &st->train);
  AddModel(*o, &st->model);
  AddAudio(*o, &st->audio);
  return {app, o, [st, o, stage] {
            st->audio.Validate();
            st->train.Validate();
            const std::string manifest = ManifestPath(st->data);
            const auto inventory = Inventory(st->emotions);
            auto records = corpus::LoadManifest(manifest, inventory);
            std::vector<std::string> labels;
            std::function<int(const corpus::UtteranceRecord&)> label_of;
            if (stage == 1) {
              std::set<std::string> speakers;
              for (const auto& r : records) speakers.insert(r.speaker);
              labels.assign(speakers.begin(), speakers.end());
              label_of = [labels](const corpus::UtteranceRecord& r) {
                return static_cast<int>(std::lower_bound(labels.begin(), labels.end(), r.speaker) -
                                        labels.begin());
              };
            } else {
              labels = inventory.names();
              label_of = [inventory](const corpus::UtteranceRecord& r) {
                if (!r.emotion) throw ValidationError(r.id + " has no emotion label");
                return inventory.IndexOf(*r.emotion);
              };
            }
            if (labels.size() < 2) throw ValidationError("training needs at least two labels");
            const Slices slices = SliceRecords(records, st->train_split, st->validation_split);
            const auto lexicon = corpus::Lexicon::Default();
            training::Dataset data;
            data.num_classes = static_cast<int>(labels.size());
            data.train = training::LoadExamples(slices.train, manifest, lexicon, st->audio, label_of);
            data.validation =
                training::LoadExamples(slices.validation, manifest, lexicon, st->audio, label_of);

            model::ModelState init;
            if (stage == 1) {
              model::ModelConfig mc = st->model;
              mc.n_mels = st->audio.n_mels;
              mc.log_floor = st->audio.log_floor;
              init = training::InitStage1(mc, data.num_classes, st->train.seed);
            } else if (st->from_scratch) {
              if (!st->init.empty()) throw ValidationError("--init and --from-scratch conflict");
              model::ModelConfig mc = st->model;
              mc.n_mels = st->audio.n_mels;
              mc.log_floor = st->audio.log_floor;
              init = training::InitStage1(mc, data.num_classes, st->train.seed);
              init.stage = 2;
            } else {
              if (st->init.empty()) throw ValidationError("train-stage2 needs --init or --from-scratch");
              const auto ck = training::LoadCheckpoint(st->init);
              CheckAudio(ck, st->audio, st->init);
              init = training::ReinitForStage2(ck, data.num_classes, st->train.seed);
            }
            o->WriteSnapshot((fs::path(st->out) / kSnapshotName).string());
            training::TrainConfig cfg = st->train;
            cfg.metrics_path = (fs::path(st->out) / "metrics.jsonl").string();
            const auto r = stage == 1 ? training::TrainStage1(data, cfg, init)
                                      : training::TrainStage2(data, cfg, init);
            SaveTrainOutputs(r,
                             {{"labels", labels},
                              {"label_kind", stage == 1 ? "speaker" : "emotion"},
                              {"audio", AudioJson(st->audio)}},
                             st->out);
          }};
}

Command VocoderStage(CLI::App& root, bool finetune) {
  struct State {
    std::string data;
    std::string out;
    std::string init;
    std::string train_split = "train";
    std::string validation_split = "reference";
    vocoder::VocoderConfig cfg;
    signal::AudioConfig audio;
  };
  auto st = std::make_shared<State>();
  const std::string name = finetune ? "vocoder-finetune" : "vocoder-pretrain";
  auto* app = root.add_subcommand(
      name, finetune ? "Continue vocoder training on emotional audio"
                     : "Train the neural vocoder on a (neutral) corpus");
  auto o = std::make_shared<Options>(app, name);
  o->Add("data", &st->data, "Corpus directory or manifest", true);
  o->Add("out", &st->out, "Output directory", true);
  if (finetune) o->Add("init", &st->init, "Pretrained vocoder", true);
  o->Add("train-split", &st->train_split, "Split used for training");
  o->Add("validation-split", &st->validation_split, "Split used for held-out NLL");
  AddVocoder(*o, &st->cfg);
  AddAudio(*o, &st->audio);
  return {app, o, [st, o, finetune] {
            st->audio.Validate();
            st->cfg.Validate();
            const std::string manifest = ManifestPath(st->data);
            // Any emotion names are acceptable here.
            std::set<std::string> names;
            {
              std::ifstream in(manifest);
              if (!in) throw ValidationError("cannot open manifest " + manifest);
              std::string line;
              while (std::getline(in, line)) {
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                try {
                  const json j = json::parse(line);
                  if (j.contains("emotion") && j["emotion"].is_string()) {
                    names.insert(j["emotion"].get<std::string>());
                  }
                } catch (const json::exception&) {
                  // LoadManifest reports the line.
                }
              }
            }
            const auto records = corpus::LoadManifest(
                manifest, corpus::EmotionInventory(std::vector<std::string>(names.begin(), names.end())));
            const Slices slices = SliceRecords(records, st->train_split, st->validation_split);
            vocoder::VocoderCorpus data;
            data.train = VocoderExamples(slices.train, manifest, st->audio);
            data.heldout = VocoderExamples(slices.validation, manifest, st->audio);
            vocoder::VocoderState init;
            if (finetune) init = vocoder::LoadVocoder(st->init);
            o->WriteSnapshot((fs::path(st->out) / kSnapshotName).string());
            vocoder::VocoderConfig cfg = st->cfg;
            cfg.metrics_path = (fs::path(st->out) / "metrics.jsonl").string();
            const auto r = finetune ? vocoder::FineTuneVocoder(init, data, cfg, st->audio)
                                    : vocoder::PretrainVocoder(data, cfg, st->audio);
            vocoder::SaveVocoder((fs::path(st->out) / "vocoder.evc").string(), r.state);
            std::cout << "held-out nll " << r.initial_nll << " -> " << r.final_nll << " ("
                      << vocoder::ProvenanceName(r.state.provenance) << ")\n";
          }};
}

Command Convert(CLI::App& root) {
  struct State {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string vocoder = "griffin-lim";
    std::string vocoder_checkpoint;
    int gl_iterations = 60;
    std::vector<std::string> targets;
    std::string source_emotion = "neutral";
    std::string source_split = "evaluation";
    std::string reference_split = "reference";
    std::string source;
    std::string target;
    int limit = 0;
    uint64_t seed = 1;
    std::string embedding_cache;
    signal::AudioConfig audio;
  };
  auto st = std::make_shared<State>();
  auto* app = root.add_subcommand("convert", "Convert utterances to target emotions");
  auto o = std::make_shared<Options>(app, "convert");
  o->Add("checkpoint", &st->checkpoint, "Stage-2 checkpoint", true);
  o->Add("data", &st->data, "Corpus with reference (and source) utterances", true);
  o->Add("out", &st->out, "Output directory", true);
  o->Add("vocoder", &st->vocoder, "griffin-lim or neural")
      ->check(CLI::IsMember({"griffin-lim", "neural"}));
  o->Add("vocoder-checkpoint", &st->vocoder_checkpoint, "Neural vocoder (with --vocoder neural)");
  o->Add("gl-iterations", &st->gl_iterations, "Griffin-Lim iterations");
  o->Add("targets", &st->targets, "Target emotions (default: every label but the source's)");
  o->Add("source-emotion", &st->source_emotion, "Emotion of the source utterances");
  o->Add("source-split", &st->source_split, "Split holding the source utterances");
  o->Add("reference-split", &st->reference_split, "Split holding the reference utterances");
  o->Add("source", &st->source, "Convert this wav instead of the source split");
  o->Add("target", &st->target, "Target emotion for --source");
  o->Add("limit", &st->limit, "Convert at most this many sources (0: all)");
  o->Add("seed", &st->seed, "Synthesis seed (EVC_SEED overrides the default)");
  o->Add("embedding-cache", &st->embedding_cache,
         "Reference-embedding cache (default: out/embeddings.json)");
  AddAudio(*o, &st->audio);
  return {app, o, [st, o] {
            st->audio.Validate();
            const auto ck = training::LoadCheckpoint(st->checkpoint);
            if (ck.model.stage != 2) throw ValidationError("convert needs a stage-2 checkpoint");
            CheckAudio(ck, st->audio, st->checkpoint);
            const auto labels = CheckpointLabels(ck);
            const corpus::EmotionInventory inventory(labels);
            const std::string manifest = ManifestPath(st->data);
            const auto records = corpus::LoadManifest(manifest, inventory);

            inference::VocoderSelection voc;
            voc.kind = vocoder::VocoderKindFromName(st->vocoder);
            voc.griffin_lim_iterations = st->gl_iterations;
            vocoder::VocoderState neural;
            if (voc.kind == vocoder::VocoderKind::kNeural) {
              if (st->vocoder_checkpoint.empty()) {
                throw ValidationError("--vocoder neural needs --vocoder-checkpoint");
              }
              neural = vocoder::LoadVocoder(st->vocoder_checkpoint);
              voc.neural = &neural;
            }
            std::vector<std::string> targets = st->targets;
            if (!st->source.empty()) {
              if (st->target.empty()) throw ValidationError("--source needs --target");
              targets = {st->target};
            } else if (targets.empty()) {
              for (const auto& l : labels) {
                if (l != st->source_emotion) targets.push_back(l);
              }
            }
            for (const auto& t : targets) inventory.IndexOf(t);

            o->WriteSnapshot((fs::path(st->out) / kSnapshotName).string());
            const std::string cache_path = st->embedding_cache.empty()
                                               ? (fs::path(st->out) / "embeddings.json").string()
                                               : st->embedding_cache;
            inference::EmbeddingTable table = inference::OpenEmbeddingCache(cache_path, ck.model);
            for (const auto& t : targets) {
              std::vector<signal::MelSpectrogram> refs;
              for (const auto& r : records) {
                if (r.split == st->reference_split && r.emotion == t) {
                  refs.push_back(signal::ExtractMel(
                      signal::ReadWav(corpus::ResolveAudioPath(manifest, r)), st->audio));
                }
              }
              if (refs.empty()) {
                throw ValidationError("no '" + st->reference_split + "' references for '" + t + "'");
              }
              table.Ensure(t, refs, ck.model);
            }
            table.Save(cache_path);

            std::vector<inference::ConversionRequest> requests;
            if (!st->source.empty()) {
              corpus::UtteranceRecord r;
              r.id = fs::path(st->source).stem().string();
              r.emotion = st->source_emotion;
              requests.push_back({r, st->source, st->target});
            } else {
              int taken = 0;
              for (const auto& r : records) {
                if (r.split != st->source_split || r.emotion != st->source_emotion) continue;
                if (st->limit > 0 && taken >= st->limit) break;
                ++taken;
                for (const auto& t : targets) {
                  requests.push_back({r, corpus::ResolveAudioPath(manifest, r), t});
                }
              }
            }
            const auto report = inference::BatchConvert(requests, table, ck.model, voc, st->audio,
                                                        st->out, st->seed);
            inference::WriteReport((fs::path(st->out) / "report.jsonl").string(), report);
            int ok = 0, truncated = 0;
            for (const auto& r : report) {
              ok += r.ok;
              truncated += r.truncated;
              if (!r.ok) std::cerr << r.source_id << " -> " << r.target_emotion << ": " << r.error << "\n";
            }
            std::cout << ok << " of " << report.size() << " conversions written (" << truncated
                      << " truncated)\n";
          }};
}

Command Evaluate(CLI::App& root) {
  struct State {
    std::string report;
    std::string data;
    std::string out;
    std::vector<std::string> emotions;
    int mcep_order = 24;
    signal::AudioConfig audio;
  };
  auto st = std::make_shared<State>();
  auto* app = root.add_subcommand("evaluate", "Score conversions (MCD, DDUR) against targets");
  auto o = std::make_shared<Options>(app, "evaluate");
  o->Add("report", &st->report, "Conversion report from convert", true);
  o->Add("data", &st->data, "Corpus holding the parallel target utterances", true);
  o->Add("out", &st->out, "Output directory", true);
  o->Add("emotions", &st->emotions, "Emotion inventory (default: the built-in five)");
  o->Add("mcep-order", &st->mcep_order, "Mel-cepstrum order");
  AddAudio(*o, &st->audio);
  return {app, o, [st, o] {
            st->audio.Validate();
            const std::string manifest = ManifestPath(st->data);
            const auto targets = corpus::LoadManifest(manifest, Inventory(st->emotions));
            const auto report = inference::ReadReport(st->report);
            o->WriteSnapshot((fs::path(st->out) / kSnapshotName).string());
            evaluation::ScoreOptions opts;
            opts.mcep_order = st->mcep_order;
            const auto scores =
                evaluation::ScoreConversions(report, targets, manifest, st->audio, opts);
            evaluation::WriteScores((fs::path(st->out) / "scores.json").string(), scores);
            for (const auto& a : scores.aggregates) {
              std::cout << a.source_emotion << "->" << a.target_emotion << " (" << a.pairs
                        << "): MCD " << a.mcd_converted << " dB (source " << a.mcd_source
                        << "), DDUR " << a.ddur_converted << " s (source " << a.ddur_source
                        << ")\n";
            }
            if (!scores.skipped.empty()) {
              std::cout << scores.skipped.size() << " report rows skipped\n";
            }
          }};
}

std::string SnapshotBeside(const std::string& figure) {
  fs::path p(figure);
  return (p.parent_path() / (p.stem().string() + ".config.json")).string();
}

Command VisualizeEmbeddings(CLI::App& parent) {
  struct State {
    std::string checkpoint;
    std::string data;
    std::string out;
    std::string split = "reference";
    uint64_t seed = 1;
    double perplexity = 30.0;
    int iterations = 1000;
    bool overwrite = false;
    signal::AudioConfig audio;
  };
  auto st = std::make_shared<State>();
  auto* app = parent.add_subcommand("embeddings", "t-SNE map of emotion embeddings");
  auto o = std::make_shared<Options>(app, "visualize embeddings");
  o->Add("checkpoint", &st->checkpoint, "Model checkpoint", true);
  o->Add("data", &st->data, "Corpus with emotion labels", true);
  o->Add("out", &st->out, "Output SVG (a .csv sidecar is written beside it)", true);
  o->Add("split", &st->split, "Split to embed (empty: every record)");
  o->Add("seed", &st->seed, "t-SNE seed (EVC_SEED overrides the default)");
  o->Add("perplexity", &st->perplexity, "t-SNE perplexity");
  o->Add("iterations", &st->iterations, "t-SNE iterations");
  o->Add("overwrite", &st->overwrite, "Replace existing figures");
  AddAudio(*o, &st->audio);
  return {app, o, [st, o] {
            st->audio.Validate();
            const auto ck = training::LoadCheckpoint(st->checkpoint);
            CheckAudio(ck, st->audio, st->checkpoint);
            const std::string manifest = ManifestPath(st->data);
            const auto inventory = corpus::EmotionInventory::Default();
            std::set<std::string> names;
            for (const auto& n : inventory.names()) names.insert(n);
            const auto records = corpus::LoadManifest(manifest, inventory);
            std::vector<RowVector> points;
            std::vector<int> labels;
            for (const auto& r : records) {
              if (!st->split.empty() && r.split != st->split) continue;
              if (!r.emotion) continue;
              const auto mel = signal::ExtractMel(
                  signal::ReadWav(corpus::ResolveAudioPath(manifest, r)), st->audio);
              points.push_back(model::EmotionEncode(mel, ck.model).h);
              labels.push_back(inventory.IndexOf(*r.emotion));
            }
            evaluation::TsneConfig cfg;
            cfg.seed = st->seed;
            cfg.perplexity = st->perplexity;
            cfg.iterations = st->iterations;
            o->WriteSnapshot(SnapshotBeside(st->out));
            const auto r = evaluation::PlotEmbeddingMap(points, labels, inventory.names(), cfg,
                                                        st->out, st->overwrite);
            std::cout << "silhouette " << evaluation::Silhouette(points, labels) << "; wrote "
                      << r.svg_path << " and " << r.csv_path << "\n";
          }};
}

Command VisualizeAttention(CLI::App& parent) {
  struct State {
    std::string decoder;
    std::string out;
    std::string title;
    bool overwrite = false;
  };
  auto st = std::make_shared<State>();
  auto* app = parent.add_subcommand("attention", "Attention heatmap of a decoder output");
  auto o = std::make_shared<Options>(app, "visualize attention");
  o->Add("decoder", &st->decoder, "Decoder output (.dec) written by convert", true);
  o->Add("out", &st->out, "Output SVG", true);
  o->Add("title", &st->title, "Figure title (default: the utterance id)");
  o->Add("overwrite", &st->overwrite, "Replace an existing figure");
  return {app, o, [st, o] {
            std::string id;
            const auto d = inference::LoadDecoderOutput(st->decoder, &id);
            o->WriteSnapshot(SnapshotBeside(st->out));
            evaluation::PlotAttention(d.attention, st->title.empty() ? id : st->title, st->out,
                                      st->overwrite);
            std::cout << "wrote " << st->out << " (" << d.attention.weights.rows() << " x "
                      << d.attention.weights.cols() << ")\n";
          }};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotional voice conversion toolkit", "evc"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::vector<Command> commands;
  commands.push_back(Prepare(app));
  commands.push_back(SynthCorpus(app));
  commands.push_back(TrainStage(app, 1));
  commands.push_back(TrainStage(app, 2));
  commands.push_back(VocoderStage(app, false));
  commands.push_back(VocoderStage(app, true));
  commands.push_back(Convert(app));
  commands.push_back(Evaluate(app));
  auto* visualize = app.add_subcommand("visualize", "Figures: embeddings or attention");
  visualize->require_subcommand(1);
  commands.push_back(VisualizeEmbeddings(*visualize));
  commands.push_back(VisualizeAttention(*visualize));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  try {
    for (auto& c : commands) {
      if (c.app->parsed()) {
        c.options->Resolve();
        c.run();
        return 0;
      }
    }
    return 1;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failed: " << e.what() << "\n";
    return 2;
  }
}

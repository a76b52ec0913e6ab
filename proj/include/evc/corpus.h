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

#ifndef EVC_CORPUS_H_
#define EVC_CORPUS_H_

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "evc/common.h"

namespace evc::corpus {

class EmotionInventory {
 public:
  EmotionInventory() = default;
  explicit EmotionInventory(std::vector<std::string> names);
  // neutral, angry, happy, sad, surprise
  static EmotionInventory Default();

  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(int index) const { return names_.at(index); }
  // Throws ValidationError for names outside the inventory.
  int IndexOf(const std::string& name) const;
  bool Contains(const std::string& name) const;

 private:
  std::vector<std::string> names_;
};

struct EmotionLabel {
  int index = 0;
  int num_classes = 0;

  static EmotionLabel Make(int index, int num_classes);
  RowVector OneHot() const;
};

struct UtteranceRecord {
  std::string id;
  std::string audio_path;
  std::string text;
  std::string speaker;
  std::optional<std::string> emotion;
  std::string split;
  double duration_s = 0.0;

  bool operator==(const UtteranceRecord&) const = default;
};

// Reserved ids. Lexicon entries start at kFirstPhonemeId.
inline constexpr int kEosId = 0;
inline constexpr int kWordBoundaryId = 1;
inline constexpr int kFirstPhonemeId = 2;

struct PhonemeSequence {
  std::vector<int> ids;
  size_t size() const { return ids.size(); }
};

class Lexicon {
 public:
  Lexicon() = default;
  explicit Lexicon(int vocabulary_size) : vocabulary_size_(vocabulary_size) {}

  // Letter fallback for the synthetic phone inventory plus a handful of
  // whole-word entries.
  static Lexicon Default();
  static Lexicon Load(const std::string& path);
  void Save(const std::string& path) const;

  void AddWord(const std::string& word, std::vector<int> ids);
  void AddFallback(char c, int id);

  int vocabulary_size() const { return vocabulary_size_; }
  const std::vector<int>* FindWord(const std::string& word) const;
  std::optional<int> FindFallback(char c) const;
  const std::map<char, int>& fallback() const { return fallback_; }

 private:
  void CheckId(int id) const;

  int vocabulary_size_ = 0;
  std::map<std::string, std::vector<int>> words_;
  std::map<char, int> fallback_;
};

// Lowercases, collapses whitespace, looks each word up (falling back per
// character), separates words with kWordBoundaryId and appends kEosId.
PhonemeSequence Transcribe(std::string_view text, const Lexicon& lexicon);

// One JSON object per line with id, audio_path, text, speaker, emotion,
// split and duration_s.
std::vector<UtteranceRecord> LoadManifest(const std::string& path,
                                          const EmotionInventory& inventory);
void WriteManifest(const std::string& path,
                   const std::vector<UtteranceRecord>& records);
// audio_path resolved against the manifest's directory when relative.
std::string ResolveAudioPath(const std::string& manifest_path,
                             const UtteranceRecord& record);

struct SplitSpec {
  int train = 300;
  int reference = 30;
  int evaluation = 20;
  uint64_t seed = 1234;
};

struct SplitAssignment {
  std::set<std::string> train;
  std::set<std::string> reference;
  std::set<std::string> evaluation;
};

// Stratified per emotion (records without an emotion form their own
// stratum). Each stratum is ordered by id and shuffled by a generator seeded
// from spec.seed alone, so parallel strata of equal size receive the same
// permutation and a sentence lands in the same split for every emotion.
SplitAssignment MakeSplits(const std::vector<UtteranceRecord>& records,
                           const SplitSpec& spec);
// Writes the split field of every record from an assignment ("" when
// unassigned).
void ApplySplits(const SplitAssignment& splits,
                 std::vector<UtteranceRecord>* records);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct VoiceProfile {
  double base_f0 = 120.0;       // Hz
  double formant_shift = 1.0;   // multiplies every formant frequency
};

struct ProsodyTransform {
  double pitch_scale = 1.0;
  double duration_scale = 1.0;
  double energy = 1.0;
  double pitch_slope = 0.0;     // octaves across the utterance
  double spectral_tilt = 0.0;   // dB per octave above 1 kHz

  bool operator==(const ProsodyTransform&) const = default;
};

// Voice k of the built-in voice table (cycled, with a deterministic
// perturbation past the end of the table).
VoiceProfile SyntheticVoice(int k);
// Built-in transforms for the default inventory; other names get a transform
// derived from a hash of the name.
ProsodyTransform EmotionProsody(const std::string& emotion);

struct SyntheticCorpusSpec {
  int num_speakers = 2;
  // Index into the voice table of the first speaker.
  int first_voice = 0;
  // Explicit voices, cycled over speakers; overrides the table when set.
  std::vector<VoiceProfile> voices;
  std::vector<std::string> emotions = {"neutral"};
  int utterances_per_cell = 10;
  int sample_rate = 16000;
  uint64_t seed = 1;
  // Every (speaker, emotion) cell reads the same sentence list.
  bool parallel = true;
  // Natural per-utterance prosody variation (relative standard deviation).
  double prosody_jitter = 0.0;
  std::string id_prefix;
  std::string speaker_prefix = "spk";
};

struct SyntheticUtterance {
  UtteranceRecord record;
  ProsodyTransform emotion_transform;  // shared by every record of an emotion
  VoiceProfile voice;
  double jitter_pitch = 1.0;
  double jitter_duration = 1.0;
};

struct SyntheticCorpus {
  std::vector<SyntheticUtterance> utterances;
  std::vector<UtteranceRecord> records() const;
};

// Renders the corpus into out_dir: wavs/<id>.wav, manifest.jsonl and
// generation.json (per-record generation parameters).
SyntheticCorpus BuildSyntheticCorpus(const SyntheticCorpusSpec& spec,
                                     const std::string& out_dir);
// Sentence text for index k under a seed (shared by parallel cells).
std::string SyntheticSentence(uint64_t seed, int k);

}  // namespace evc::corpus

#endif  // EVC_CORPUS_H_

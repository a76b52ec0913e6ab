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

// Run-time conversion: averaged reference embeddings per emotion, then
// source audio -> recognizer -> free-running decoder -> vocoder.

#ifndef EVC_INFERENCE_H_
#define EVC_INFERENCE_H_

#include <map>
#include <string>
#include <vector>

#include "evc/corpus.h"
#include "evc/model.h"
#include "evc/signal.h"
#include "evc/vocoder.h"

namespace evc::inference {

// Arithmetic mean of EmotionEncode over the references.
model::EmotionEmbedding AverageEmotionEmbedding(
    const std::vector<signal::MelSpectrogram>& refs, const model::ModelState& s);

// Order-sensitive digest of a reference set (frames and fingerprints).
std::string HashReferences(const std::vector<signal::MelSpectrogram>& refs);

struct EmbeddingEntry {
  model::EmotionEmbedding embedding;
  std::string references_hash;
  int num_references = 0;
};

// Averaged embeddings by emotion name, valid for one checkpoint.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::string model_fingerprint)
      : model_fingerprint_(std::move(model_fingerprint)) {}

  const std::string& model_fingerprint() const { return model_fingerprint_; }
  const std::map<std::string, EmbeddingEntry>& entries() const { return entries_; }

  // Reuses the stored average when the reference hash matches, otherwise
  // recomputes it. The model fingerprint must match the table's.
  const model::EmotionEmbedding& Ensure(const std::string& emotion,
                                        const std::vector<signal::MelSpectrogram>& refs,
                                        const model::ModelState& s);
  // Throws ValidationError for an emotion without an entry.
  const model::EmotionEmbedding& Resolve(const std::string& emotion) const;
  bool Contains(const std::string& emotion) const { return entries_.count(emotion) > 0; }
  // Number of averages computed (not reused) by Ensure.
  int computed() const { return computed_; }

  void Save(const std::string& path) const;
  static EmbeddingTable Load(const std::string& path);

 private:
  std::string model_fingerprint_;
  std::map<std::string, EmbeddingEntry> entries_;
  int computed_ = 0;
};

// Loads a cache file when it belongs to this checkpoint, otherwise starts
// empty.
EmbeddingTable OpenEmbeddingCache(const std::string& path, const model::ModelState& s);

struct VocoderSelection {
  vocoder::VocoderKind kind = vocoder::VocoderKind::kGriffinLim;
  const vocoder::VocoderState* neural = nullptr;
  int griffin_lim_iterations = 60;
};

struct ConversionResult {
  signal::Waveform audio;
  signal::MelSpectrogram mel;  // decoded, clamped at the log floor
  model::DecoderOutput decoder;
  int frames_in = 0;
};

// The target enters only as an embedding; no target audio is consumed.
ConversionResult Convert(const signal::Waveform& source, const model::EmotionEmbedding& target,
                         const model::ModelState& s, const VocoderSelection& voc,
                         const signal::AudioConfig& audio, uint64_t seed);
ConversionResult Convert(const signal::Waveform& source, const std::string& emotion,
                         const EmbeddingTable& table, const model::ModelState& s,
                         const VocoderSelection& voc, const signal::AudioConfig& audio,
                         uint64_t seed);

// Decoder artifacts (mel, attention, stop probabilities) in the archive
// format, kind "decoder".
void SaveDecoderOutput(const std::string& path, const model::DecoderOutput& d,
                       const std::string& utterance_id);
model::DecoderOutput LoadDecoderOutput(const std::string& path, std::string* utterance_id);

struct ConversionRequest {
  corpus::UtteranceRecord source;
  std::string source_audio;  // resolved path
  std::string target_emotion;
};

struct ConversionRecord {
  std::string source_id;
  std::string source_audio;
  std::string source_emotion;
  std::string speaker;
  std::string text;
  std::string target_emotion;
  std::string output_path;
  std::string decoder_path;
  int frames_in = 0;
  int frames_out = 0;
  bool truncated = false;
  bool ok = false;
  std::string error;
};

// One record per request. Per-request failures are recorded and the batch
// continues. Outputs go to out_dir/<source>__<emotion>.wav and .dec.
std::vector<ConversionRecord> BatchConvert(const std::vector<ConversionRequest>& requests,
                                           const EmbeddingTable& table,
                                           const model::ModelState& s,
                                           const VocoderSelection& voc,
                                           const signal::AudioConfig& audio,
                                           const std::string& out_dir, uint64_t seed);

void WriteReport(const std::string& path, const std::vector<ConversionRecord>& records);
// Output paths are written relative to the report and resolved against it
// on reading.
std::vector<ConversionRecord> ReadReport(const std::string& path);

}  // namespace evc::inference

#endif  // EVC_INFERENCE_H_

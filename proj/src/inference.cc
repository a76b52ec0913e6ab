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

#include "evc/inference.h"

#include <filesystem>
#include <fstream>

#include "evc/archive.h"
#include "evc/binary_io.h"
#include "json.hpp"

namespace evc::inference {

namespace fs = std::filesystem;
using nlohmann::json;

model::EmotionEmbedding AverageEmotionEmbedding(
    const std::vector<signal::MelSpectrogram>& refs, const model::ModelState& s) {
  if (refs.empty()) throw ValidationError("average embedding: empty reference set");
  RowVector sum = RowVector::Zero(s.config.d_style);
  for (const auto& m : refs) sum += model::EmotionEncode(m, s).h;
  return {sum / static_cast<double>(refs.size())};
}

std::string HashReferences(const std::vector<signal::MelSpectrogram>& refs) {
  uint64_t h = Fnv1a("refs:" + std::to_string(refs.size()));
  for (const auto& m : refs) h = HashMatrix(m.frames, Fnv1a(m.fingerprint, h));
  return HexDigest(h);
}

const model::EmotionEmbedding& EmbeddingTable::Ensure(
    const std::string& emotion, const std::vector<signal::MelSpectrogram>& refs,
    const model::ModelState& s) {
  if (s.Fingerprint() != model_fingerprint_) {
    throw ValidationError("embedding table belongs to checkpoint " + model_fingerprint_ +
                          ", not " + s.Fingerprint());
  }
  const std::string hash = HashReferences(refs);
  auto it = entries_.find(emotion);
  if (it != entries_.end() && it->second.references_hash == hash) return it->second.embedding;
  EmbeddingEntry e{AverageEmotionEmbedding(refs, s), hash, static_cast<int>(refs.size())};
  ++computed_;
  return (entries_[emotion] = std::move(e)).embedding;
}

const model::EmotionEmbedding& EmbeddingTable::Resolve(const std::string& emotion) const {
  auto it = entries_.find(emotion);
  if (it == entries_.end()) {
    throw ValidationError("no reference embedding for emotion '" + emotion + "'");
  }
  return it->second.embedding;
}

void EmbeddingTable::Save(const std::string& path) const {
  json j = {{"model_fingerprint", model_fingerprint_}, {"emotions", json::object()}};
  for (const auto& [name, e] : entries_) {
    j["emotions"][name] = {{"embedding", std::vector<double>(e.embedding.h.data(),
                                                             e.embedding.h.data() +
                                                                 e.embedding.h.size())},
                           {"references_hash", e.references_hash},
                           {"num_references", e.num_references}};
  }
  io::AtomicWriteText(path, j.dump(2) + "\n");
}

EmbeddingTable EmbeddingTable::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embedding table " + path);
  EmbeddingTable t;
  try {
    const json j = json::parse(in);
    t.model_fingerprint_ = j.at("model_fingerprint").get<std::string>();
    for (const auto& [name, e] : j.at("emotions").items()) {
      const auto v = e.at("embedding").get<std::vector<double>>();
      EmbeddingEntry entry;
      entry.embedding.h = Eigen::Map<const RowVector>(v.data(), static_cast<Eigen::Index>(v.size()));
      entry.references_hash = e.at("references_hash").get<std::string>();
      entry.num_references = e.at("num_references").get<int>();
      t.entries_[name] = std::move(entry);
    }
  } catch (const json::exception& e) {
    throw ValidationError(path + ": bad embedding table: " + e.what());
  }
  return t;
}

EmbeddingTable OpenEmbeddingCache(const std::string& path, const model::ModelState& s) {
  if (!path.empty() && fs::exists(path)) {
    EmbeddingTable t = EmbeddingTable::Load(path);
    if (t.model_fingerprint() == s.Fingerprint()) return t;
  }
  return EmbeddingTable(s.Fingerprint());
}

ConversionResult Convert(const signal::Waveform& source, const model::EmotionEmbedding& target,
                         const model::ModelState& s, const VocoderSelection& voc,
                         const signal::AudioConfig& audio, uint64_t seed) {
  if (s.stage != 2) throw ValidationError("convert: the model must be a stage-2 checkpoint");
  if (target.h.size() != s.config.d_style) {
    throw ValidationError("convert: emotion embedding width does not match the model");
  }
  if (s.config.n_mels != audio.n_mels) {
    throw ValidationError("convert: model expects " + std::to_string(s.config.n_mels) +
                          " mel bins, audio config has " + std::to_string(audio.n_mels));
  }
  source.Validate();
  if (source.sample_rate != audio.sample_rate) {
    throw ValidationError("convert: source sample rate does not match the audio config");
  }
  ConversionResult r;
  const signal::MelSpectrogram in = signal::ExtractMel(source, audio);
  r.frames_in = static_cast<int>(in.num_frames());
  r.decoder = model::Decode(model::AsrEncode(in, s), target, s);
  r.mel.frames = r.decoder.mel.cwiseMax(audio.log_floor);
  r.mel.fingerprint = audio.Fingerprint();
  r.audio = vocoder::Synthesize(r.mel, voc.kind, voc.neural, audio, seed,
                                voc.griffin_lim_iterations);
  return r;
}

ConversionResult Convert(const signal::Waveform& source, const std::string& emotion,
                         const EmbeddingTable& table, const model::ModelState& s,
                         const VocoderSelection& voc, const signal::AudioConfig& audio,
                         uint64_t seed) {
  if (table.model_fingerprint() != s.Fingerprint()) {
    throw ValidationError("convert: embedding table was built for another checkpoint");
  }
  return Convert(source, table.Resolve(emotion), s, voc, audio, seed);
}

void SaveDecoderOutput(const std::string& path, const model::DecoderOutput& d,
                       const std::string& utterance_id) {
  io::Archive a;
  a.kind = "decoder";
  a.meta = {{"utterance_id", utterance_id}, {"truncated", d.truncated}};
  a.groups["output"] = {{"mel", d.mel},
                        {"stop_probs", Matrix(d.stop_probs)},
                        {"attention", d.attention.weights}};
  io::SaveArchive(path, a);
}

model::DecoderOutput LoadDecoderOutput(const std::string& path, std::string* utterance_id) {
  io::Archive a = io::LoadArchive(path, "decoder");
  model::DecoderOutput d;
  try {
    const auto& g = a.groups.at("output");
    d.mel = g.at("mel");
    d.stop_probs = g.at("stop_probs").col(0);
    d.attention.weights = g.at("attention");
    d.truncated = a.meta.at("truncated").get<bool>();
    if (utterance_id) *utterance_id = a.meta.at("utterance_id").get<std::string>();
  } catch (const std::exception& e) {
    throw ValidationError(path + ": bad decoder archive: " + e.what());
  }
  return d;
}

std::vector<ConversionRecord> BatchConvert(const std::vector<ConversionRequest>& requests,
                                           const EmbeddingTable& table,
                                           const model::ModelState& s,
                                           const VocoderSelection& voc,
                                           const signal::AudioConfig& audio,
                                           const std::string& out_dir, uint64_t seed) {
  std::vector<ConversionRecord> out;
  if (requests.empty()) return out;
  io::EnsureDirectory(out_dir);
  for (const auto& req : requests) {
    ConversionRecord rec;
    rec.source_id = req.source.id;
    rec.source_audio = req.source_audio;
    rec.source_emotion = req.source.emotion.value_or("");
    rec.speaker = req.source.speaker;
    rec.text = req.source.text;
    rec.target_emotion = req.target_emotion;
    const std::string stem = req.source.id + "__" + req.target_emotion;
    try {
      const signal::Waveform src = signal::ReadWav(req.source_audio);
      const ConversionResult r =
          Convert(src, req.target_emotion, table, s, voc, audio, DeriveSeed(seed, stem));
      rec.output_path = (fs::path(out_dir) / (stem + ".wav")).string();
      rec.decoder_path = (fs::path(out_dir) / (stem + ".dec")).string();
      signal::WriteWav(rec.output_path, r.audio);
      SaveDecoderOutput(rec.decoder_path, r.decoder, req.source.id);
      rec.frames_in = r.frames_in;
      rec.frames_out = static_cast<int>(r.decoder.mel.rows());
      rec.truncated = r.decoder.truncated;
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.output_path.clear();
      rec.decoder_path.clear();
      rec.error = e.what();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void WriteReport(const std::string& path, const std::vector<ConversionRecord>& records) {
  // Outputs are stored relative to the report so the directory can move.
  const fs::path base = fs::absolute(path).parent_path();
  auto rel = [&](const std::string& p) {
    return p.empty() ? p : fs::absolute(p).lexically_relative(base).generic_string();
  };
  std::string text;
  for (const auto& r : records) {
    json j = {{"source_id", r.source_id},
              {"source_audio", r.source_audio},
              {"source_emotion", r.source_emotion},
              {"speaker", r.speaker},
              {"text", r.text},
              {"target_emotion", r.target_emotion},
              {"output_path", rel(r.output_path)},
              {"decoder_path", rel(r.decoder_path)},
              {"frames_in", r.frames_in},
              {"frames_out", r.frames_out},
              {"truncated", r.truncated},
              {"ok", r.ok}};
    if (!r.error.empty()) j["error"] = r.error;
    text += j.dump() + "\n";
  }
  io::AtomicWriteText(path, text);
}

std::vector<ConversionRecord> ReadReport(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open conversion report " + path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    return p.empty() || fs::path(p).is_absolute() ? p : (base / p).string();
  };
  std::vector<ConversionRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ConversionRecord r;
      r.source_id = j.at("source_id").get<std::string>();
      r.source_audio = j.at("source_audio").get<std::string>();
      r.source_emotion = j.at("source_emotion").get<std::string>();
      r.speaker = j.at("speaker").get<std::string>();
      r.text = j.at("text").get<std::string>();
      r.target_emotion = j.at("target_emotion").get<std::string>();
      r.output_path = resolve(j.at("output_path").get<std::string>());
      r.decoder_path = resolve(j.at("decoder_path").get<std::string>());
      r.frames_in = j.at("frames_in").get<int>();
      r.frames_out = j.at("frames_out").get<int>();
      r.truncated = j.at("truncated").get<bool>();
      r.ok = j.at("ok").get<bool>();
      r.error = j.value("error", "");
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ParseError(path, n, e.what());
    }
  }
  return out;
}

}  // namespace evc::inference

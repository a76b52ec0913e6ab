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

#include "evc/corpus.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "evc/binary_io.h"
#include "evc/signal.h"

namespace evc::corpus {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Labels

EmotionInventory::EmotionInventory(std::vector<std::string> names)
    : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ValidationError("empty emotion name in inventory");
    if (!seen.insert(n).second) {
      throw ValidationError("duplicate emotion '" + n + "' in inventory");
    }
  }
}

EmotionInventory EmotionInventory::Default() {
  return EmotionInventory({"neutral", "angry", "happy", "sad", "surprise"});
}

int EmotionInventory::IndexOf(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) {
    throw ValidationError("emotion '" + name + "' is not in the inventory");
  }
  return static_cast<int>(it - names_.begin());
}

bool EmotionInventory::Contains(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

EmotionLabel EmotionLabel::Make(int index, int num_classes) {
  if (num_classes < 1 || index < 0 || index >= num_classes) {
    throw ValidationError("label " + std::to_string(index) + " outside [0, " +
                          std::to_string(num_classes) + ")");
  }
  return EmotionLabel{index, num_classes};
}

RowVector EmotionLabel::OneHot() const {
  RowVector v = RowVector::Zero(num_classes);
  v(index) = 1.0;
  return v;
}

// ---------------------------------------------------------------------------
// Lexicon

void Lexicon::CheckId(int id) const {
  if (id < 0 || id >= vocabulary_size_) {
    throw ValidationError("phoneme id " + std::to_string(id) +
                          " outside vocabulary of size " +
                          std::to_string(vocabulary_size_));
  }
}

void Lexicon::AddWord(const std::string& word, std::vector<int> ids) {
  if (word.empty() || ids.empty()) {
    throw ValidationError("lexicon entries need a word and at least one id");
  }
  for (int id : ids) CheckId(id);
  words_[word] = std::move(ids);
}

void Lexicon::AddFallback(char c, int id) {
  CheckId(id);
  fallback_[c] = id;
}

const std::vector<int>* Lexicon::FindWord(const std::string& word) const {
  auto it = words_.find(word);
  return it == words_.end() ? nullptr : &it->second;
}

std::optional<int> Lexicon::FindFallback(char c) const {
  auto it = fallback_.find(c);
  if (it == fallback_.end()) return std::nullopt;
  return it->second;
}

Lexicon Lexicon::Default() {
  Lexicon lex(16);
  const std::string letters = "aeioumnl";
  for (size_t i = 0; i < letters.size(); ++i) {
    lex.AddFallback(letters[i], kFirstPhonemeId + static_cast<int>(i));
  }
  // Whole-word entries agree with the letter fallback so the synthetic
  // renderer and the frontend always see the same phones.
  lex.AddWord("mama", {7, 2, 7, 2});
  lex.AddWord("lilo", {9, 4, 9, 5});
  lex.AddWord("nune", {8, 6, 8, 3});
  return lex;
}

Lexicon Lexicon::Load(const std::string& path) {
  json j;
  try {
    j = json::parse(io::ReadText(path));
  } catch (const json::exception& e) {
    throw ValidationError("lexicon '" + path + "': " + e.what());
  }
  try {
    Lexicon lex(j.at("vocabulary_size").get<int>());
    for (const auto& [word, ids] : j.at("words").items()) {
      lex.AddWord(word, ids.get<std::vector<int>>());
    }
    for (const auto& [ch, id] : j.at("fallback").items()) {
      if (ch.size() != 1) {
        throw ValidationError("fallback keys must be single characters");
      }
      lex.AddFallback(ch[0], id.get<int>());
    }
    return lex;
  } catch (const json::exception& e) {
    throw ValidationError("lexicon '" + path + "': " + e.what());
  }
}

void Lexicon::Save(const std::string& path) const {
  json j;
  j["vocabulary_size"] = vocabulary_size_;
  j["words"] = json::object();
  for (const auto& [w, ids] : words_) j["words"][w] = ids;
  j["fallback"] = json::object();
  for (const auto& [c, id] : fallback_) j["fallback"][std::string(1, c)] = id;
  io::AtomicWriteText(path, j.dump(2) + "\n");
}

PhonemeSequence Transcribe(std::string_view text, const Lexicon& lexicon) {
  std::vector<std::string> words;
  std::string cur;
  for (char raw : text) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  if (words.empty()) throw ValidationError("cannot transcribe empty text");

  PhonemeSequence seq;
  for (size_t w = 0; w < words.size(); ++w) {
    if (w > 0) seq.ids.push_back(kWordBoundaryId);
    if (const auto* ids = lexicon.FindWord(words[w])) {
      seq.ids.insert(seq.ids.end(), ids->begin(), ids->end());
      continue;
    }
    for (char c : words[w]) {
      const auto id = lexicon.FindFallback(c);
      if (!id) {
        throw ValidationError(std::string("no fallback phoneme for character '") +
                              c + "' in word '" + words[w] + "'");
      }
      seq.ids.push_back(*id);
    }
  }
  seq.ids.push_back(kEosId);
  return seq;
}

// ---------------------------------------------------------------------------
// Manifests

namespace {

json RecordToJson(const UtteranceRecord& r) {
  json j;
  j["id"] = r.id;
  j["audio_path"] = r.audio_path;
  j["text"] = r.text;
  j["speaker"] = r.speaker;
  j["emotion"] = r.emotion ? json(*r.emotion) : json(nullptr);
  j["split"] = r.split;
  j["duration_s"] = r.duration_s;
  return j;
}

}  // namespace

std::vector<UtteranceRecord> LoadManifest(const std::string& path,
                                          const EmotionInventory& inventory) {
  std::ifstream is = io::OpenForRead(path);
  std::vector<UtteranceRecord> out;
  std::set<std::string> ids;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path, lineno, std::string("malformed record: ") + e.what());
    }
    UtteranceRecord r;
    try {
      r.id = j.at("id").get<std::string>();
      r.audio_path = j.at("audio_path").get<std::string>();
      r.text = j.at("text").get<std::string>();
      r.speaker = j.at("speaker").get<std::string>();
      if (j.contains("emotion") && !j["emotion"].is_null()) {
        r.emotion = j["emotion"].get<std::string>();
      }
      if (j.contains("split")) r.split = j["split"].get<std::string>();
      r.duration_s = j.at("duration_s").get<double>();
    } catch (const json::exception& e) {
      throw ParseError(path, lineno, std::string("bad field: ") + e.what());
    }
    if (r.id.empty()) throw ParseError(path, lineno, "empty id");
    if (!(r.duration_s > 0.0)) throw ParseError(path, lineno, "duration_s must be > 0");
    if (!ids.insert(r.id).second) {
      throw ParseError(path, lineno, "duplicate id '" + r.id + "'");
    }
    if (r.emotion && !inventory.Contains(*r.emotion)) {
      throw ValidationError(path + ":" + std::to_string(lineno) + ": emotion '" +
                            *r.emotion + "' is not in the inventory");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void WriteManifest(const std::string& path,
                   const std::vector<UtteranceRecord>& records) {
  std::string text;
  for (const auto& r : records) text += RecordToJson(r).dump() + "\n";
  io::AtomicWriteText(path, text);
}

std::string ResolveAudioPath(const std::string& manifest_path,
                             const UtteranceRecord& record) {
  fs::path p(record.audio_path);
  if (p.is_absolute()) return p.string();
  return (fs::path(manifest_path).parent_path() / p).string();
}

// ---------------------------------------------------------------------------
// Splits

SplitAssignment MakeSplits(const std::vector<UtteranceRecord>& records,
                           const SplitSpec& spec) {
  if (spec.train < 0 || spec.reference < 0 || spec.evaluation < 0) {
    throw ValidationError("split quotas must be non-negative");
  }
  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& r : records) strata[r.emotion.value_or("")].push_back(r.id);

  const size_t need = static_cast<size_t>(spec.train) + spec.reference + spec.evaluation;
  SplitAssignment out;
  for (auto& [emotion, ids] : strata) {
    if (ids.size() < need) {
      const std::string name = emotion.empty() ? "(none)" : emotion;
      throw QuotaError(name, "emotion '" + name + "' has " +
                                 std::to_string(ids.size()) + " records, need " +
                                 std::to_string(need));
    }
    std::sort(ids.begin(), ids.end());
    Rng rng(DeriveSeed(spec.seed, "splits"));
    rng.Shuffle(&ids);
    size_t k = 0;
    for (int i = 0; i < spec.train; ++i) out.train.insert(ids[k++]);
    for (int i = 0; i < spec.reference; ++i) out.reference.insert(ids[k++]);
    for (int i = 0; i < spec.evaluation; ++i) out.evaluation.insert(ids[k++]);
  }
  return out;
}

void ApplySplits(const SplitAssignment& splits,
                 std::vector<UtteranceRecord>* records) {
  for (auto& r : *records) {
    if (splits.train.count(r.id)) {
      r.split = "train";
    } else if (splits.reference.count(r.id)) {
      r.split = "reference";
    } else if (splits.evaluation.count(r.id)) {
      r.split = "evaluation";
    } else {
      r.split.clear();
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

struct PhoneSpec {
  char symbol;
  double formants[3];
  double base_duration;
  double gain;
};

// Formant targets for the letter inventory of Lexicon::Default.
constexpr PhoneSpec kPhones[] = {
    {'a', {730, 1090, 2440}, 0.13, 1.0},
    {'e', {530, 1840, 2480}, 0.12, 0.95},
    {'i', {270, 2290, 3010}, 0.11, 0.85},
    {'o', {570, 840, 2410}, 0.13, 0.95},
    {'u', {300, 870, 2240}, 0.12, 0.85},
    {'m', {280, 1000, 2200}, 0.08, 0.35},
    {'n', {280, 1700, 2600}, 0.08, 0.35},
    {'l', {360, 1300, 2700}, 0.08, 0.5},
};

const PhoneSpec& PhoneFor(int id) {
  const int k = id - kFirstPhonemeId;
  if (k < 0 || k >= static_cast<int>(std::size(kPhones))) {
    throw ValidationError("synthetic renderer has no phone for id " +
                          std::to_string(id));
  }
  return kPhones[k];
}

constexpr VoiceProfile kVoices[] = {
    {110.0, 0.92}, {205.0, 1.10}, {150.0, 1.00},
    {95.0, 0.88},  {235.0, 1.16}, {130.0, 0.96},
};

struct Segment {
  int start = 0;
  int length = 0;
  bool voiced = false;
  double formants[3] = {0, 0, 0};
  double gain = 0.0;
};

double Clip(double x, double lo, double hi) { return std::max(lo, std::min(hi, x)); }

}  // namespace

VoiceProfile SyntheticVoice(int k) {
  const int n = static_cast<int>(std::size(kVoices));
  VoiceProfile v = kVoices[((k % n) + n) % n];
  if (k >= n) {
    Rng rng(DeriveSeed(static_cast<uint64_t>(k), "voice"));
    v.base_f0 *= rng.Uniform(0.85, 1.15);
    v.formant_shift *= rng.Uniform(0.95, 1.05);
  }
  return v;
}

ProsodyTransform EmotionProsody(const std::string& emotion) {
  if (emotion == "neutral") return {1.0, 1.0, 1.0, 0.0, 0.0};
  if (emotion == "angry") return {1.2, 0.78, 1.5, -0.25, 3.0};
  if (emotion == "happy") return {1.3, 0.9, 1.25, 0.2, 1.5};
  if (emotion == "sad") return {0.82, 1.35, 0.6, -0.1, -3.0};
  if (emotion == "surprise") return {1.45, 1.15, 1.2, 0.45, 1.0};
  Rng rng(DeriveSeed(0, "emotion:" + emotion));
  return {rng.Uniform(0.8, 1.4), rng.Uniform(0.8, 1.3), rng.Uniform(0.6, 1.5),
          rng.Uniform(-0.3, 0.4), rng.Uniform(-3.0, 3.0)};
}

std::string SyntheticSentence(uint64_t seed, int k) {
  static const std::string kVowels = "aeiou";
  static const std::string kConsonants = "mnl";
  Rng rng(DeriveSeed(seed, "sentence:" + std::to_string(k)));
  const int words = 2 + static_cast<int>(rng.Below(2));
  std::string text;
  for (int w = 0; w < words; ++w) {
    if (w > 0) text += ' ';
    switch (rng.Below(4)) {
      case 0:  // CV
        text += kConsonants[rng.Below(3)];
        text += kVowels[rng.Below(5)];
        break;
      case 1:  // VCV
        text += kVowels[rng.Below(5)];
        text += kConsonants[rng.Below(3)];
        text += kVowels[rng.Below(5)];
        break;
      case 2:  // CVC
        text += kConsonants[rng.Below(3)];
        text += kVowels[rng.Below(5)];
        text += kConsonants[rng.Below(3)];
        break;
      default:  // VV
        text += kVowels[rng.Below(5)];
        text += kVowels[rng.Below(5)];
        break;
    }
  }
  return text;
}

namespace {

signal::Waveform Render(const PhonemeSequence& phones, const VoiceProfile& voice,
                        const ProsodyTransform& emo, double jitter_pitch,
                        double jitter_duration, int sample_rate) {
  const double dur_scale = emo.duration_scale * jitter_duration;
  std::vector<Segment> segs;
  int cursor = 0;
  auto push = [&](double seconds, bool voiced, const PhoneSpec* p) {
    Segment s;
    s.start = cursor;
    s.length = std::max(1, static_cast<int>(std::lround(seconds * sample_rate)));
    s.voiced = voiced;
    if (p) {
      for (int i = 0; i < 3; ++i) s.formants[i] = p->formants[i] * voice.formant_shift;
      s.gain = p->gain;
    }
    cursor += s.length;
    segs.push_back(s);
  };
  push(0.05, false, nullptr);
  for (int id : phones.ids) {
    if (id == kEosId) break;
    if (id == kWordBoundaryId) {
      push(0.05 * dur_scale, false, nullptr);
    } else {
      const PhoneSpec& p = PhoneFor(id);
      push(p.base_duration * dur_scale, true, &p);
    }
  }
  push(0.15, false, nullptr);
  const int total = cursor;

  // Voiced span for the pitch contour.
  int voiced_begin = total, voiced_end = 0;
  for (const auto& s : segs) {
    if (!s.voiced) continue;
    voiced_begin = std::min(voiced_begin, s.start);
    voiced_end = std::max(voiced_end, s.start + s.length);
  }
  const double span = std::max(1, voiced_end - voiced_begin);

  signal::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(total, 0.0);
  const int ramp = std::max(1, sample_rate / 100);  // 10 ms
  const int block = std::max(1, sample_rate / 200);  // 5 ms envelope updates
  const double nyquist_guard = sample_rate / 2.0 - 300.0;
  const double bandwidths[3] = {90.0, 110.0, 160.0};
  const double formant_gains[3] = {1.0, 0.55, 0.3};
  const double base_f0 = voice.base_f0 * emo.pitch_scale * jitter_pitch;

  double phase = 0.0;
  std::vector<double> amps;
  size_t seg_index = 0;
  for (int n0 = 0; n0 < total; n0 += block) {
    while (seg_index + 1 < segs.size() &&
           n0 >= segs[seg_index].start + segs[seg_index].length) {
      ++seg_index;
    }
    const Segment& seg = segs[seg_index];
    // Blend formants toward the neighbour across the last 20 ms.
    double formants[3];
    for (int i = 0; i < 3; ++i) formants[i] = seg.formants[i];
    const int to_end = seg.start + seg.length - n0;
    const int blend = sample_rate / 50;
    if (seg.voiced && to_end < blend && seg_index + 1 < segs.size() &&
        segs[seg_index + 1].voiced) {
      const double a = 0.5 * (1.0 - static_cast<double>(to_end) / blend);
      for (int i = 0; i < 3; ++i) {
        formants[i] = (1 - a) * seg.formants[i] + a * segs[seg_index + 1].formants[i];
      }
    }
    const double u = Clip((n0 - voiced_begin) / span, 0.0, 1.0);
    const double f0 = base_f0 * std::pow(2.0, emo.pitch_slope * (u - 0.5)) *
                      (1.0 + 0.02 * std::sin(2.0 * M_PI * 4.0 * n0 / sample_rate));
    const int harmonics = std::max(1, static_cast<int>(nyquist_guard / f0));
    amps.assign(harmonics + 1, 0.0);
    for (int k = 1; k <= harmonics; ++k) {
      const double f = k * f0;
      double a = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double x = (f - formants[i]) / (0.5 * bandwidths[i]);
        a += formant_gains[i] / (1.0 + x * x);
      }
      const double octaves_above_1k = std::max(0.0, std::log2(f / 1000.0));
      a *= std::pow(10.0, emo.spectral_tilt * octaves_above_1k / 20.0);
      amps[k] = a / std::sqrt(static_cast<double>(k));
    }
    const int n1 = std::min(total, n0 + block);
    size_t si = seg_index;
    for (int n = n0; n < n1; ++n) {
      phase += 2.0 * M_PI * f0 / sample_rate;
      if (phase > 2.0 * M_PI) phase -= 2.0 * M_PI;
      while (si + 1 < segs.size() && n >= segs[si].start + segs[si].length) ++si;
      const Segment& s = segs[si];
      if (!s.voiced) continue;
      // Amplitude ramps where voicing starts or stops.
      double env = s.gain;
      const bool prev_voiced = si > 0 && segs[si - 1].voiced;
      const bool next_voiced = si + 1 < segs.size() && segs[si + 1].voiced;
      const int into = n - s.start, left = s.start + s.length - n;
      if (!prev_voiced && into < ramp) env *= static_cast<double>(into) / ramp;
      if (!next_voiced && left < ramp) env *= static_cast<double>(left) / ramp;
      if (env <= 0.0) continue;
      const double s1 = std::sin(phase), c = std::cos(phase);
      double sk_2 = 0.0, sk_1 = s1, acc = amps[1] * s1;
      for (int k = 2; k <= harmonics; ++k) {
        const double sk = 2.0 * c * sk_1 - sk_2;
        acc += amps[k] * sk;
        sk_2 = sk_1;
        sk_1 = sk;
      }
      w.samples[n] = Clip(0.12 * emo.energy * env * acc, -0.99, 0.99);
    }
  }
  return w;
}

}  // namespace

std::vector<UtteranceRecord> SyntheticCorpus::records() const {
  std::vector<UtteranceRecord> out;
  out.reserve(utterances.size());
  for (const auto& u : utterances) out.push_back(u.record);
  return out;
}

SyntheticCorpus BuildSyntheticCorpus(const SyntheticCorpusSpec& spec,
                                     const std::string& out_dir) {
  if (spec.num_speakers < 0 || spec.utterances_per_cell < 0) {
    throw ValidationError("synthetic corpus counts must be non-negative");
  }
  if (spec.sample_rate < 8000) {
    throw ValidationError("synthetic corpus needs a sample rate of at least 8 kHz");
  }
  io::EnsureDirectory(out_dir);
  io::EnsureDirectory((fs::path(out_dir) / "wavs").string());
  const Lexicon lexicon = Lexicon::Default();

  SyntheticCorpus corpus;
  json generation = json::object();
  for (int s = 0; s < spec.num_speakers; ++s) {
    const int voice_index = spec.first_voice + s;
    char spk[64];
    std::snprintf(spk, sizeof(spk), "%s%02d", spec.speaker_prefix.c_str(), voice_index);
    const VoiceProfile voice = spec.voices.empty()
                                   ? SyntheticVoice(voice_index)
                                   : spec.voices[static_cast<size_t>(s) % spec.voices.size()];
    for (const std::string& emotion : spec.emotions) {
      const ProsodyTransform transform = EmotionProsody(emotion);
      for (int k = 0; k < spec.utterances_per_cell; ++k) {
        char idbuf[160];
        std::snprintf(idbuf, sizeof(idbuf), "%s%s_%s_%04d", spec.id_prefix.c_str(),
                      spk, emotion.c_str(), k);
        const std::string id = idbuf;
        const uint64_t sentence_seed =
            spec.parallel ? spec.seed
                          : DeriveSeed(spec.seed, std::string(spk) + "/" + emotion);
        SyntheticUtterance u;
        u.voice = voice;
        u.emotion_transform = transform;
        Rng jitter(DeriveSeed(spec.seed, "jitter:" + id));
        auto draw = [&]() {
          return 1.0 + spec.prosody_jitter * Clip(jitter.Normal(), -2.5, 2.5);
        };
        u.jitter_pitch = draw();
        u.jitter_duration = draw();
        const std::string text = SyntheticSentence(sentence_seed, k);
        const signal::Waveform wav =
            Render(Transcribe(text, lexicon), voice, transform, u.jitter_pitch,
                   u.jitter_duration, spec.sample_rate);
        const std::string rel = "wavs/" + id + ".wav";
        signal::WriteWav((fs::path(out_dir) / rel).string(), wav);

        u.record.id = id;
        u.record.audio_path = rel;
        u.record.text = text;
        u.record.speaker = spk;
        u.record.emotion = emotion;
        u.record.duration_s = wav.duration_s();
        generation[id] = {
            {"speaker", spk},
            {"emotion", emotion},
            {"voice", {{"base_f0", voice.base_f0}, {"formant_shift", voice.formant_shift}}},
            {"transform",
             {{"pitch_scale", transform.pitch_scale},
              {"duration_scale", transform.duration_scale},
              {"energy", transform.energy},
              {"pitch_slope", transform.pitch_slope},
              {"spectral_tilt", transform.spectral_tilt}}},
            {"jitter_pitch", u.jitter_pitch},
            {"jitter_duration", u.jitter_duration},
        };
        corpus.utterances.push_back(std::move(u));
      }
    }
  }
  WriteManifest((fs::path(out_dir) / "manifest.jsonl").string(), corpus.records());
  io::AtomicWriteText((fs::path(out_dir) / "generation.json").string(),
                      generation.dump(2) + "\n");
  return corpus;
}

}  // namespace evc::corpus

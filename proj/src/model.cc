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

#include "evc/model.h"

#include <cmath>
#include <sstream>

namespace evc::model {

using ad::ConcatCols;
using ad::Var;

namespace {

// Floor on the forward-attention prior so an alignment can recover from a
// position whose content score vanished.
constexpr double kAttentionPrior = 1e-6;

// The listener stacks this many frames per memory position, and the speller
// may advance its alignment by up to kMaxJump positions per step, so one
// phoneme can span from a fraction of a position up to 2 * 8 frames.
constexpr int kListenerStack = 8;
constexpr int kMaxJump = 2;

// Free-running decoding only: an alignment that rests on one position for
// this many steps is pushed on, or stops the decode at the last position.
// 20 steps at r = 2 is 40 frames, well above any toy phoneme.
constexpr int kMaxDwellSteps = 20;

void Require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

Var Linear(ad::Graph& g, const Var& x, const std::string& prefix) {
  return AddRow(MatMul(x, g.Param(prefix + ".w")), g.Param(prefix + ".b"));
}

// Single GRU step; gate layout in the 3d columns is [update, reset, cand].
Var GruCell(ad::Graph& g, const std::string& prefix, const Var& x,
            const Var& h) {
  const Eigen::Index d = h.cols();
  Var gx = AddRow(MatMul(x, g.Param(prefix + ".wx")), g.Param(prefix + ".b"));
  Var gh = MatMul(h, g.Param(prefix + ".wh"));
  Var z = Sigmoid(Add(SliceCols(gx, 0, d), SliceCols(gh, 0, d)));
  Var r = Sigmoid(Add(SliceCols(gx, d, d), SliceCols(gh, d, d)));
  Var n = Tanh(Add(SliceCols(gx, 2 * d, d), Mul(r, SliceCols(gh, 2 * d, d))));
  return Add(n, Mul(z, Sub(h, n)));
}

// Forward attention over precomputed keys. `u` is the transition
// probability from the previous step; it is absent on the first step, where
// the prior is the initial one-hot alignment.
struct ForwardAttention {
  Var keys;    // L x d_att
  Var memory;  // L x d_mem
  Var v;       // d_att x 1
  Var last_mask;  // 1 x L, one at the final position

  // Mass moved one position on; the last position absorbs.
  Var Advance(const Var& a) const { return Add(ShiftRight(a), Mul(a, last_mask)); }

  Var Attend(const Var& query, const Var& prior) const {
    Var scores = Transpose(MatMul(Tanh(AddRow(keys, query)), v));
    Var weighted = Mul(AddScalar(prior, kAttentionPrior), SoftmaxRows(scores));
    return NormalizeRows(weighted, 0.0);
  }

  // Stay with probability 1 - u, advance one position with probability u.
  Var Step(const Var& query, const Var& prev, const Var* u) const {
    Var prior = prev;
    if (u != nullptr) {
      Var stay = AddScalar(Scale(*u, -1.0), 1.0);
      prior = Add(MulScalar(prev, stay), MulScalar(Advance(prev), *u));
    }
    return Attend(query, prior);
  }

  // `moves` is 1 x (kMaxJump + 1): probabilities of advancing 0..kMaxJump
  // positions.
  Var JumpStep(const Var& query, const Var& prev, const Var* moves) const {
    Var prior = prev;
    if (moves != nullptr) {
      Var shifted = prev;
      prior = MulScalar(prev, SliceCols(*moves, 0, 1));
      for (int k = 1; k <= kMaxJump; ++k) {
        shifted = Advance(shifted);
        prior = Add(prior, MulScalar(shifted, SliceCols(*moves, k, 1)));
      }
    }
    return Attend(query, prior);
  }

  // 1 x 1: weight already on the final position. Stop heads see it so that
  // stopping follows the alignment.
  Var EndMass(const Var& alpha) const { return MatMul(alpha, Transpose(last_mask)); }
};

Var OneHotRow(ad::Graph& g, Eigen::Index length, Eigen::Index at) {
  Matrix a = Matrix::Zero(1, length);
  a(0, at) = 1.0;
  return g.Constant(std::move(a));
}

double MelCenter(double log_floor) { return 0.5 * log_floor; }
double MelScale(double log_floor) { return -0.5 * log_floor; }

std::string Shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

void ModelConfig::Validate() const {
  Require(phoneme_vocab >= 1 && n_mels >= 1 && d_embed >= 1 && d_hidden >= 1 &&
              d_linguistic >= 1 && d_style >= 1 && d_classifier >= 1 &&
              d_prenet >= 1 && d_decoder >= 1 && d_attention >= 1,
          "model config: every dimension must be >= 1");
  Require(num_classes >= 2, "model config: num_classes must be >= 2");
  Require(reduction_factor >= 1, "model config: reduction_factor must be >= 1");
  Require(max_decode_steps >= 1, "model config: max_decode_steps must be >= 1");
  Require(max_recognizer_steps >= 1,
          "model config: max_recognizer_steps must be >= 1");
  Require(std::isfinite(log_floor) && log_floor < 0,
          "model config: log_floor must be finite and negative");
}

std::string ModelConfig::Fingerprint() const {
  std::ostringstream os;
  os.precision(17);
  os << "vocab=" << phoneme_vocab << ";mels=" << n_mels << ";emb=" << d_embed
     << ";hid=" << d_hidden << ";ling=" << d_linguistic << ";style=" << d_style
     << ";cls=" << d_classifier << ";pre=" << d_prenet << ";dec=" << d_decoder
     << ";att=" << d_attention << ";R=" << num_classes
     << ";r=" << reduction_factor << ";maxdec=" << max_decode_steps
     << ";maxrec=" << max_recognizer_steps << ";floor=" << log_floor;
  return HexDigest(Fnv1a(os.str()));
}

std::map<std::string, std::pair<int, int>> ParameterShapes(
    const ModelConfig& c) {
  const int rec_feat = c.d_decoder + c.d_hidden;
  const int dec_in = c.d_prenet + c.d_linguistic + c.d_style;
  const int dec_feat = c.d_decoder + c.d_linguistic + c.d_style;
  std::map<std::string, std::pair<int, int>> s;
  // Text encoder.
  s["text.embed"] = {c.phoneme_vocab, c.d_embed};
  s["text.conv1.w"] = {3 * c.d_embed, c.d_hidden};
  s["text.conv1.b"] = {1, c.d_hidden};
  s["text.conv2.w"] = {3 * c.d_hidden, c.d_hidden};
  s["text.conv2.b"] = {1, c.d_hidden};
  s["text.out.w"] = {c.d_hidden, c.d_linguistic};
  s["text.out.b"] = {1, c.d_linguistic};
  // Recognition encoder: listener over stacked frames, then speller.
  s["asr.in.w"] = {kListenerStack * c.n_mels, c.d_hidden};
  s["asr.in.b"] = {1, c.d_hidden};
  s["asr.conv.w"] = {3 * c.d_hidden, c.d_hidden};
  s["asr.conv.b"] = {1, c.d_hidden};
  s["asr.gru.wx"] = {c.d_linguistic + c.d_hidden, 3 * c.d_decoder};
  s["asr.gru.wh"] = {c.d_decoder, 3 * c.d_decoder};
  s["asr.gru.b"] = {1, 3 * c.d_decoder};
  s["asr.att.wk"] = {c.d_hidden, c.d_attention};
  s["asr.att.wq"] = {c.d_decoder, c.d_attention};
  s["asr.att.v"] = {c.d_attention, 1};
  s["asr.out.w"] = {rec_feat, c.d_linguistic};
  s["asr.out.b"] = {1, c.d_linguistic};
  s["asr.stop.w"] = {rec_feat + 1, 1};
  s["asr.stop.b"] = {1, 1};
  s["asr.trans.w"] = {rec_feat, kMaxJump + 1};
  s["asr.trans.b"] = {1, kMaxJump + 1};
  // Style encoder and its label projection V.
  s["style.in.w"] = {c.n_mels, c.d_hidden};
  s["style.in.b"] = {1, c.d_hidden};
  s["style.conv.w"] = {3 * c.d_hidden, c.d_hidden};
  s["style.conv.b"] = {1, c.d_hidden};
  s["style.out.w"] = {c.d_hidden, c.d_style};
  s["style.out.b"] = {1, c.d_style};
  s["style.head"] = {c.num_classes, c.d_style};
  // Adversarial classifier.
  s["classifier.hidden.w"] = {c.d_linguistic, c.d_classifier};
  s["classifier.hidden.b"] = {1, c.d_classifier};
  s["classifier.head.w"] = {c.d_classifier, c.num_classes};
  s["classifier.head.b"] = {1, c.num_classes};
  // Decoder.
  s["dec.prenet1.w"] = {c.n_mels, c.d_prenet};
  s["dec.prenet1.b"] = {1, c.d_prenet};
  s["dec.prenet2.w"] = {c.d_prenet, c.d_prenet};
  s["dec.prenet2.b"] = {1, c.d_prenet};
  s["dec.gru.wx"] = {dec_in, 3 * c.d_decoder};
  s["dec.gru.wh"] = {c.d_decoder, 3 * c.d_decoder};
  s["dec.gru.b"] = {1, 3 * c.d_decoder};
  s["dec.att.wk"] = {c.d_linguistic, c.d_attention};
  s["dec.att.wq"] = {c.d_decoder, c.d_attention};
  s["dec.att.v"] = {c.d_attention, 1};
  s["dec.out.w"] = {dec_feat, c.reduction_factor * c.n_mels};
  s["dec.out.b"] = {1, c.reduction_factor * c.n_mels};
  s["dec.stop.w"] = {dec_feat + 1, 1};
  s["dec.stop.b"] = {1, 1};
  s["dec.trans.w"] = {dec_feat, 1};
  s["dec.trans.b"] = {1, 1};
  return s;
}

std::vector<std::string> HeadParameterNames() {
  return {"classifier.head.b", "classifier.head.w", "style.head"};
}

bool IsClassifierParameter(const std::string& name) {
  return name.rfind("classifier.", 0) == 0;
}

Matrix InitArray(const std::string& name, int rows, int cols, Rng* rng) {
  const bool is_bias = name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
  if (is_bias) return Matrix::Zero(rows, cols);
  Matrix m(rows, cols);
  if (name == "text.embed") {
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = 0.5 * rng->Normal();
    return m;
  }
  const double limit = std::sqrt(6.0 / (rows + cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng->Uniform(-limit, limit);
  return m;
}

ModelState InitModel(const ModelConfig& cfg, uint64_t seed) {
  cfg.Validate();
  ModelState s;
  s.config = cfg;
  s.stage = 1;
  for (const auto& [name, shape] : ParameterShapes(cfg)) {
    // Each array has its own stream so adding an array never perturbs the
    // initial values of the others.
    Rng rng(DeriveSeed(seed, name));
    s.params[name] = InitArray(name, shape.first, shape.second, &rng);
  }
  return s;
}

std::string ModelState::Fingerprint() const {
  uint64_t h = Fnv1a(config.Fingerprint());
  h = Fnv1a("stage=" + std::to_string(stage), h);
  for (const auto& [name, m] : params) {
    h = Fnv1a(name, h);
    h = HashMatrix(m, h);
  }
  return HexDigest(h);
}

void ModelState::ValidateShapes() const {
  config.Validate();
  Require(stage == 1 || stage == 2, "model state: stage must be 1 or 2");
  const auto shapes = ParameterShapes(config);
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    Require(it != params.end(), "model state: missing array '" + name + "'");
    Require(it->second.rows() == shape.first && it->second.cols() == shape.second,
            "model state: array '" + name + "' has shape " + Shape(it->second) +
                ", expected " + std::to_string(shape.first) + "x" +
                std::to_string(shape.second));
  }
  for (const auto& [name, m] : params) {
    Require(shapes.count(name) > 0, "model state: unexpected array '" + name + "'");
    Require(AllFinite(m), "model state: array '" + name + "' is not finite");
  }
}

Matrix NormalizeMel(const Matrix& mel, double log_floor) {
  return (mel.array() - MelCenter(log_floor)) / MelScale(log_floor);
}

Var TextEncoderGraph(ad::Graph& g, const ModelConfig& cfg,
                     const corpus::PhonemeSequence& phonemes) {
  Require(!phonemes.ids.empty(), "text_encode: empty phoneme sequence");
  for (int id : phonemes.ids) {
    Require(id >= 0 && id < cfg.phoneme_vocab,
            "text_encode: phoneme id " + std::to_string(id) +
                " outside vocabulary of " + std::to_string(cfg.phoneme_vocab));
  }
  Var x = GatherRows(g.Param("text.embed"), phonemes.ids);
  x = Tanh(Linear(g, ConvWindows(x, 3), "text.conv1"));
  x = Tanh(Linear(g, ConvWindows(x, 3), "text.conv2"));
  return Linear(g, x, "text.out");
}

Var ListenerGraph(ad::Graph& g, const ModelConfig& cfg, const Matrix& mel) {
  Require(mel.cols() == cfg.n_mels,
          "asr_encode: mel has " + std::to_string(mel.cols()) +
              " bins, model expects " + std::to_string(cfg.n_mels));
  Require(mel.rows() >= 1, "asr_encode: empty mel");
  Var x = StackFrames(g.Constant(NormalizeMel(mel, cfg.log_floor)), kListenerStack);
  x = Tanh(Linear(g, x, "asr.in"));
  return Tanh(Linear(g, ConvWindows(x, 3), "asr.conv"));
}

RecognizerGraphOut RecognizerGraph(ad::Graph& g, const ModelConfig& cfg,
                                   const Var& memory,
                                   const std::optional<Var>& teacher,
                                   int max_steps) {
  const Eigen::Index steps = teacher ? teacher->rows() : max_steps;
  Require(steps >= 1, "recognizer: needs at least one step");
  if (teacher) {
    Require(teacher->cols() == cfg.d_linguistic, "recognizer: teacher width mismatch");
  }
  ForwardAttention att{MatMul(memory, g.Param("asr.att.wk")), memory,
                       g.Param("asr.att.v"),
                       OneHotRow(g, memory.rows(), memory.rows() - 1)};
  Var state = g.Constant(Matrix::Zero(1, cfg.d_decoder));
  Var ctx = g.Constant(Matrix::Zero(1, cfg.d_hidden));
  Var prev_out = g.Constant(Matrix::Zero(1, cfg.d_linguistic));
  Var alpha = OneHotRow(g, memory.rows(), 0);
  Var u;
  std::vector<Var> outs, stops, aligns;
  RecognizerGraphOut out;
  for (Eigen::Index n = 0; n < steps; ++n) {
    Var in = prev_out;
    if (teacher && n > 0) in = SliceRows(*teacher, n - 1, 1);
    state = GruCell(g, "asr.gru", ConcatCols({in, ctx}), state);
    Var q = MatMul(state, g.Param("asr.att.wq"));
    alpha = att.JumpStep(q, alpha, n == 0 ? nullptr : &u);
    ctx = MatMul(alpha, memory);
    Var feat = ConcatCols({state, ctx});
    Var e = Linear(g, feat, "asr.out");
    Var stop = Sigmoid(Linear(g, ConcatCols({feat, att.EndMass(alpha)}), "asr.stop"));
    u = SoftmaxRows(Linear(g, feat, "asr.trans"));
    outs.push_back(e);
    stops.push_back(stop);
    aligns.push_back(alpha);
    prev_out = e;
    if (!teacher && stop.scalar() > 0.5) break;
    if (!teacher && n + 1 == steps) out.truncated = true;
  }
  out.embeddings = ConcatRows(outs);
  out.stop_probs = ConcatRows(stops);
  out.attention = ConcatRows(aligns);
  return out;
}

Var StyleEncoderGraph(ad::Graph& g, const ModelConfig& cfg, const Matrix& mel) {
  Require(mel.cols() == cfg.n_mels,
          "emotion_encode: mel has " + std::to_string(mel.cols()) +
              " bins, model expects " + std::to_string(cfg.n_mels));
  Require(mel.rows() >= 1, "emotion_encode: empty mel");
  Var x = g.Constant(NormalizeMel(mel, cfg.log_floor));
  x = Tanh(Linear(g, x, "style.in"));
  x = Tanh(Linear(g, ConvWindows(x, 3), "style.conv"));
  return Linear(g, MeanRows(x), "style.out");
}

Var EmotionLogitsGraph(ad::Graph& g, const Var& h) {
  Var v = g.Param("style.head");
  Require(h.rows() == 1 && h.cols() == v.cols(),
          "emotion_logits: embedding width " + std::to_string(h.cols()) +
              " does not match V with " + std::to_string(v.cols()) + " columns");
  return Transpose(MatMul(v, Transpose(h)));
}

Var ClassifierGraph(ad::Graph& g, const Var& embeddings) {
  Var w = g.Param("classifier.hidden.w");
  Require(embeddings.cols() == w.rows(),
          "classify_linguistic: embedding width " +
              std::to_string(embeddings.cols()) + ", expected " +
              std::to_string(w.rows()));
  Var x = Tanh(Linear(g, embeddings, "classifier.hidden"));
  return SoftmaxRows(Linear(g, x, "classifier.head"));
}

DecoderGraphOut DecoderGraph(ad::Graph& g, const ModelConfig& cfg,
                             const Var& memory, const Var& style,
                             const Matrix* teacher, const ForwardOptions& opts) {
  Require(memory.rows() >= 1 && memory.cols() == cfg.d_linguistic,
          "decode: linguistic embeddings must be L x " +
              std::to_string(cfg.d_linguistic));
  Require(style.rows() == 1 && style.cols() == cfg.d_style,
          "decode: emotion embedding must have width " + std::to_string(cfg.d_style));
  const int r = cfg.reduction_factor;
  const bool training = opts.mode == Mode::kTraining;
  Require(!training || opts.rng != nullptr, "decode: training mode needs an rng");

  // Teacher frames padded to a whole number of steps with silence.
  Matrix padded;
  Eigen::Index steps = cfg.max_decode_steps;
  if (teacher) {
    Require(teacher->cols() == cfg.n_mels && teacher->rows() >= 1,
            "decode: teacher mel must be T x " + std::to_string(cfg.n_mels));
    steps = (teacher->rows() + r - 1) / r;
    padded = Matrix::Constant(steps * r, cfg.n_mels, -1.0);
    padded.topRows(teacher->rows()) = NormalizeMel(*teacher, cfg.log_floor);
  }

  ForwardAttention att{MatMul(memory, g.Param("dec.att.wk")), memory,
                       g.Param("dec.att.v"),
                       OneHotRow(g, memory.rows(), memory.rows() - 1)};
  Var state = g.Constant(Matrix::Zero(1, cfg.d_decoder));
  Var ctx = g.Constant(Matrix::Zero(1, cfg.d_linguistic));
  Var alpha = OneHotRow(g, memory.rows(), 0);
  Var u;
  Matrix prev_frame = Matrix::Constant(1, cfg.n_mels, -1.0);
  std::vector<Var> frames, stops, aligns;
  DecoderGraphOut out;
  Eigen::Index focus = 0;
  int dwell = 0;
  bool force_stop = false;
  for (Eigen::Index t = 0; t < steps; ++t) {
    if (teacher && t > 0) prev_frame = padded.row(t * r - 1);
    Var pre = Tanh(Linear(g, g.Constant(prev_frame), "dec.prenet1"));
    if (training && opts.prenet_dropout > 0) {
      const double keep = 1.0 - opts.prenet_dropout;
      Matrix mask(1, cfg.d_prenet);
      for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask(i) = opts.rng->Uniform() < keep ? 1.0 / keep : 0.0;
      }
      pre = Mul(pre, g.Constant(std::move(mask)));
    }
    pre = Tanh(Linear(g, pre, "dec.prenet2"));
    state = GruCell(g, "dec.gru", ConcatCols({pre, ctx, style}), state);
    Var q = MatMul(state, g.Param("dec.att.wq"));
    alpha = att.Step(q, alpha, t == 0 ? nullptr : &u);
    if (!teacher) {
      Eigen::Index at = 0;
      alpha.value().row(0).maxCoeff(&at);
      dwell = at == focus ? dwell + 1 : 1;
      focus = at;
      if (dwell > kMaxDwellSteps) {
        if (at + 1 == memory.rows()) {
          force_stop = true;
        } else {
          alpha = att.Advance(alpha);
        }
      }
    }
    ctx = MatMul(alpha, memory);
    Var feat = ConcatCols({state, ctx, style});
    Var frame = Linear(g, feat, "dec.out");
    Var stop = Sigmoid(Linear(g, ConcatCols({feat, att.EndMass(alpha)}), "dec.stop"));
    u = Sigmoid(Linear(g, feat, "dec.trans"));
    frames.push_back(frame);
    stops.push_back(stop);
    aligns.push_back(alpha);
    prev_frame = frame.value().rightCols(cfg.n_mels);
    if (!teacher && (stop.scalar() > 0.5 || force_stop)) break;
    if (!teacher && t + 1 == steps) out.truncated = true;
  }
  const Eigen::Index s = static_cast<Eigen::Index>(frames.size());
  Var normalized = Reshape(ConcatRows(frames), s * r, cfg.n_mels);
  out.mel = AddScalar(Scale(normalized, MelScale(cfg.log_floor)),
                      MelCenter(cfg.log_floor));
  out.stop_probs = ConcatRows(stops);
  out.attention = ConcatRows(aligns);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Inference graphs bind every parameter as a constant.
struct InferenceGraph {
  ad::Tape tape;
  ad::Graph g;
  explicit InferenceGraph(const ModelState& s) : g(&tape, &s.params) {
    g.SetTrainable([](const std::string&) { return false; });
  }
};

void CheckFinite(const Matrix& m, const std::string& what) {
  if (!AllFinite(m)) throw DivergenceError(what + ": non-finite output");
}

}  // namespace

LinguisticEmbeddingSequence TextEncode(const corpus::PhonemeSequence& p,
                                       const ModelState& s) {
  InferenceGraph ig(s);
  LinguisticEmbeddingSequence out;
  out.vectors = TextEncoderGraph(ig.g, s.config, p).value();
  out.source = Source::kText;
  CheckFinite(out.vectors, "text_encode");
  return out;
}

LinguisticEmbeddingSequence AsrEncode(const signal::MelSpectrogram& m,
                                      const ModelState& s) {
  InferenceGraph ig(s);
  Var memory = ListenerGraph(ig.g, s.config, m.frames);
  const int max_steps = static_cast<int>(
      std::min<Eigen::Index>(s.config.max_recognizer_steps, m.frames.rows()));
  RecognizerGraphOut rec =
      RecognizerGraph(ig.g, s.config, memory, std::nullopt, max_steps);
  LinguisticEmbeddingSequence out;
  out.vectors = rec.embeddings.value();
  out.source = Source::kAudio;
  CheckFinite(out.vectors, "asr_encode");
  return out;
}

EmotionEmbedding EmotionEncode(const signal::MelSpectrogram& m,
                               const ModelState& s) {
  InferenceGraph ig(s);
  EmotionEmbedding out;
  out.h = StyleEncoderGraph(ig.g, s.config, m.frames).value();
  CheckFinite(out.h, "emotion_encode");
  return out;
}

ClassifierPosterior ClassifyLinguistic(const LinguisticEmbeddingSequence& e,
                                       const ModelState& s) {
  Require(e.vectors.rows() >= 1, "classify_linguistic: empty sequence");
  InferenceGraph ig(s);
  ClassifierPosterior out;
  out.probs = ClassifierGraph(ig.g, ig.g.Constant(e.vectors)).value();
  return out;
}

RowVector EmotionLogits(const EmotionEmbedding& h, const ModelState& s) {
  InferenceGraph ig(s);
  return EmotionLogitsGraph(ig.g, ig.g.Constant(h.h)).value();
}

DecoderOutput Decode(const LinguisticEmbeddingSequence& e,
                     const EmotionEmbedding& h, const ModelState& s,
                     const signal::MelSpectrogram* teacher) {
  InferenceGraph ig(s);
  DecoderGraphOut d =
      DecoderGraph(ig.g, s.config, ig.g.Constant(e.vectors), ig.g.Constant(h.h),
                   teacher ? &teacher->frames : nullptr, ForwardOptions{});
  DecoderOutput out;
  out.mel = d.mel.value();
  out.stop_probs = d.stop_probs.value().col(0);
  out.attention.weights = d.attention.value();
  out.truncated = d.truncated;
  CheckFinite(out.mel, "decode");
  return out;
}

}  // namespace evc::model

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

#include "evc/evaluation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>

#include "evc/binary_io.h"
#include "json.hpp"

namespace evc::evaluation {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const double kMcdScale = 10.0 / std::log(10.0);

void Require(bool ok, const std::string& what) {
  if (!ok) throw ValidationError(what);
}

void CheckWritable(const std::string& path, bool overwrite) {
  if (!overwrite && fs::exists(path)) {
    throw ValidationError(path + " exists; pass overwrite to replace it");
  }
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) io::EnsureDirectory(parent.string());
}

std::string Num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string Exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string Escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

// Cosine distance; two zero vectors are at distance 0, a zero vector is at
// distance 1 from anything else.
double CosineDistance(const RowVector& a, const RowVector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 && nb == 0.0) return 0.0;
  if (na == 0.0 || nb == 0.0) return 1.0;
  return std::max(0.0, 1.0 - a.dot(b) / (na * nb));
}

// Row i of the affinity matrix at precision beta; returns the entropy.
double RowAffinity(const Matrix& d2, Eigen::Index i, double beta, RowVector* p) {
  const Eigen::Index n = d2.rows();
  double sum = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    (*p)(j) = j == i ? 0.0 : std::exp(-d2(i, j) * beta);
    sum += (*p)(j);
  }
  if (sum <= 0.0) {
    // Every neighbour underflowed; fall back to uniform.
    p->setConstant(1.0 / static_cast<double>(n - 1));
    (*p)(i) = 0.0;
    return std::log(static_cast<double>(n - 1));
  }
  double h = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j == i) continue;
    h += beta * d2(i, j) * (*p)(j);
  }
  *p /= sum;
  return std::log(sum) + h / sum;
}

}  // namespace

void DtwPath::Validate(int ta, int tb) const {
  Require(!steps.empty(), "dtw path is empty");
  Require(steps.front() == std::make_pair(0, 0), "dtw path must start at (0,0)");
  Require(steps.back() == std::make_pair(ta - 1, tb - 1), "dtw path must end at the corner");
  for (size_t k = 1; k < steps.size(); ++k) {
    const int di = steps[k].first - steps[k - 1].first;
    const int dj = steps[k].second - steps[k - 1].second;
    Require((di == 1 && dj == 0) || (di == 0 && dj == 1) || (di == 1 && dj == 1),
            "dtw path has an invalid step");
  }
}

DtwPath DtwAlignFrames(const Matrix& a, const Matrix& b) {
  Require(a.rows() > 0 && b.rows() > 0, "dtw: both sequences must be non-empty");
  Require(a.cols() == b.cols(), "dtw: frame widths differ");
  const Eigen::Index ta = a.rows(), tb = b.rows();
  Matrix acc(ta, tb);
  for (Eigen::Index i = 0; i < ta; ++i) {
    for (Eigen::Index j = 0; j < tb; ++j) {
      const double d = (a.row(i) - b.row(j)).norm();
      if (i == 0 && j == 0) {
        acc(i, j) = d;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      if (i > 0 && j > 0) best = acc(i - 1, j - 1);
      if (i > 0) best = std::min(best, acc(i - 1, j));
      if (j > 0) best = std::min(best, acc(i, j - 1));
      acc(i, j) = d + best;
    }
  }
  DtwPath path;
  path.cost = acc(ta - 1, tb - 1);
  Eigen::Index i = ta - 1, j = tb - 1;
  path.steps.emplace_back(static_cast<int>(i), static_cast<int>(j));
  while (i > 0 || j > 0) {
    // Predecessor order encodes the tie-break: diagonal, then (1,0).
    Eigen::Index pi = -1, pj = -1;
    double best = std::numeric_limits<double>::infinity();
    if (i > 0 && j > 0) { pi = i - 1; pj = j - 1; best = acc(pi, pj); }
    if (i > 0 && acc(i - 1, j) < best) { pi = i - 1; pj = j; best = acc(pi, pj); }
    if (j > 0 && acc(i, j - 1) < best) { pi = i; pj = j - 1; }
    i = pi;
    j = pj;
    path.steps.emplace_back(static_cast<int>(i), static_cast<int>(j));
  }
  std::reverse(path.steps.begin(), path.steps.end());
  return path;
}

DtwPath DtwAlign(const signal::McepSequence& a, const signal::McepSequence& b) {
  Require(a.frames.rows() > 0 && b.frames.rows() > 0, "dtw: both sequences must be non-empty");
  Require(a.order() == b.order(), "dtw: mcep orders differ");
  Require(a.order() >= 1, "dtw: mcep order must be at least 1");
  return DtwAlignFrames(a.frames.rightCols(a.order()), b.frames.rightCols(b.order()));
}

double FrameMcd(const RowVector& a, const RowVector& b) {
  Require(a.size() == b.size() && a.size() >= 2, "mcd: frame widths differ");
  const double sq = (a.tail(a.size() - 1) - b.tail(b.size() - 1)).squaredNorm();
  return kMcdScale * std::sqrt(2.0 * sq);
}

double McdScore(const signal::McepSequence& a, const signal::McepSequence& b) {
  Require(a.order() == b.order(), "mcd: mcep orders differ (" + std::to_string(a.order()) +
                                      " vs " + std::to_string(b.order()) + ")");
  const DtwPath path = DtwAlign(a, b);
  double total = 0.0;
  for (const auto& [i, j] : path.steps) total += FrameMcd(a.frames.row(i), b.frames.row(j));
  return total / static_cast<double>(path.steps.size());
}

double DdurScore(const signal::Waveform& a, const signal::Waveform& b,
                 const signal::AudioConfig& cfg) {
  Require(a.sample_rate == b.sample_rate, "ddur: sample rates differ");
  Require(a.sample_rate == cfg.sample_rate, "ddur: sample rate does not match the config");
  return std::abs(signal::DetectVoicing(a, cfg).voiced_duration_s() -
                  signal::DetectVoicing(b, cfg).voiced_duration_s());
}

double Silhouette(const std::vector<RowVector>& points, const std::vector<int>& labels) {
  Require(points.size() == labels.size(), "silhouette: one label per point");
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  Require(counts.size() >= 2, "silhouette: needs at least two classes");
  for (const auto& [l, c] : counts) {
    Require(c >= 2, "silhouette: class " + std::to_string(l) + " has fewer than 2 points");
  }
  const size_t n = points.size();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    std::map<int, double> sums;
    for (size_t j = 0; j < n; ++j) {
      if (i != j) sums[labels[j]] += CosineDistance(points[i], points[j]);
    }
    const double a = sums[labels[i]] / (counts[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : sums) {
      if (l != labels[i]) b = std::min(b, s / counts[l]);
    }
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
  }
  return total / static_cast<double>(n);
}

Matrix Tsne(const std::vector<RowVector>& points, const TsneConfig& cfg) {
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  Require(n >= 2, "t-SNE needs at least two points");
  Require(cfg.iterations >= 1 && cfg.perplexity > 0 && cfg.learning_rate > 0,
          "t-SNE config out of range");
  Matrix x(n, points[0].size());
  for (Eigen::Index i = 0; i < n; ++i) {
    Require(points[static_cast<size_t>(i)].size() == x.cols(), "t-SNE: point widths differ");
    x.row(i) = points[static_cast<size_t>(i)];
  }
  Matrix d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  }

  // Conditional affinities by bisection on the precision.
  const double perplexity =
      std::max(1.0, std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0));
  const double target = std::log(perplexity);
  Matrix p(n, n);
  RowVector row(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 64; ++it) {
      const double h = RowAffinity(d2, i, beta, &row);
      if (std::abs(h - target) < 1e-6) break;
      if (h > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
      } else {
        hi = beta;
        beta = (beta + lo) / 2.0;
      }
    }
    RowAffinity(d2, i, beta, &row);
    p.row(i) = row;
  }
  p = (p + p.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);

  Rng rng(DeriveSeed(cfg.seed, "tsne"));
  Matrix y(n, 2);
  for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = 1e-4 * rng.Normal();
  Matrix velocity = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix num(n, n);
  Matrix grad(n, 2);
  for (int it = 0; it < cfg.iterations; ++it) {
    const double exaggeration = it < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
    const double momentum = it < cfg.exaggeration_iterations ? 0.5 : 0.8;
    double zsum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        zsum += num(i, j);
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / zsum, 1e-12);
        grad.row(i) += 4.0 * (exaggeration * p(i, j) - q) * num(i, j) * (y.row(i) - y.row(j));
      }
    }
    for (Eigen::Index k = 0; k < y.size(); ++k) {
      const bool same_sign = (grad(k) > 0) == (velocity(k) > 0);
      gains(k) = std::max(0.01, same_sign ? gains(k) * 0.8 : gains(k) + 0.2);
      velocity(k) = momentum * velocity(k) - cfg.learning_rate * gains(k) * grad(k);
      y(k) += velocity(k);
    }
    y.rowwise() -= y.colwise().mean();
  }
  if (!AllFinite(y)) throw DivergenceError("t-SNE produced non-finite coordinates");
  return y;
}

EmbeddingMapResult PlotEmbeddingMap(const std::vector<RowVector>& points,
                                    const std::vector<int>& labels,
                                    const std::vector<std::string>& class_names,
                                    const TsneConfig& cfg, const std::string& svg_path,
                                    bool overwrite) {
  Require(points.size() == labels.size(), "embedding map: one label per point");
  std::map<int, int> counts;
  for (int l : labels) {
    Require(l >= 0 && l < static_cast<int>(class_names.size()),
            "embedding map: label without a class name");
    ++counts[l];
  }
  Require(counts.size() >= 2, "embedding map: needs at least two classes");
  for (const auto& [l, c] : counts) {
    Require(c >= 3, "embedding map: class '" + class_names[static_cast<size_t>(l)] +
                        "' has fewer than 3 points");
  }
  EmbeddingMapResult r;
  r.svg_path = svg_path;
  r.csv_path = fs::path(svg_path).replace_extension(".csv").string();
  CheckWritable(svg_path, overwrite);
  CheckWritable(r.csv_path, overwrite);
  r.coordinates = Tsne(points, cfg);

  std::string csv = "index,label,class,x,y\n";
  for (size_t i = 0; i < points.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    csv += std::to_string(i) + "," + std::to_string(labels[i]) + "," +
           class_names[static_cast<size_t>(labels[i])] + "," + Exact(r.coordinates(k, 0)) +
           "," + Exact(r.coordinates(k, 1)) + "\n";
  }

  const double size = 480.0, margin = 30.0, legend = 140.0;
  const RowVector lo = r.coordinates.colwise().minCoeff();
  const RowVector hi = r.coordinates.colwise().maxCoeff();
  auto scale = [&](double v, int axis) {
    const double span = std::max(hi(axis) - lo(axis), 1e-12);
    const double u = (v - lo(axis)) / span;
    return margin + (axis == 0 ? u : 1.0 - u) * (size - 2 * margin);
  };
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + Num(size + legend) +
                    "\" height=\"" + Num(size) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (size_t i = 0; i < points.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    svg += "<circle cx=\"" + Num(scale(r.coordinates(k, 0), 0)) + "\" cy=\"" +
           Num(scale(r.coordinates(k, 1), 1)) + "\" r=\"4\" fill=\"" +
           kPalette[static_cast<size_t>(labels[i]) % std::size(kPalette)] +
           "\" fill-opacity=\"0.8\"/>\n";
  }
  double ly = margin;
  for (const auto& [l, c] : counts) {
    const char* colour = kPalette[static_cast<size_t>(l) % std::size(kPalette)];
    svg += "<circle cx=\"" + Num(size + 10) + "\" cy=\"" + Num(ly) + "\" r=\"5\" fill=\"" +
           colour + "\"/>\n";
    svg += "<text x=\"" + Num(size + 20) + "\" y=\"" + Num(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" +
           Escape(class_names[static_cast<size_t>(l)]) + "</text>\n";
    ly += 18;
  }
  svg += "</svg>\n";
  io::AtomicWriteText(r.csv_path, csv);
  io::AtomicWriteText(svg_path, svg);
  return r;
}

void PlotAttention(const model::AttentionMatrix& attention, const std::string& title,
                   const std::string& svg_path, bool overwrite) {
  const Matrix& w = attention.weights;
  Require(w.rows() > 0 && w.cols() > 0, "attention plot: empty attention matrix");
  CheckWritable(svg_path, overwrite);
  const double cell = std::clamp(400.0 / static_cast<double>(std::max(w.rows(), w.cols())), 2.0,
                                 24.0);
  const double left = 60.0, top = 40.0;
  // Encoder positions run along x, decoder steps along y.
  const double width = left + cell * static_cast<double>(w.cols()) + 20.0;
  const double height = top + cell * static_cast<double>(w.rows()) + 40.0;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + Num(width) +
                    "\" height=\"" + Num(height) + "\" data-rows=\"" +
                    std::to_string(w.rows()) + "\" data-cols=\"" + std::to_string(w.cols()) +
                    "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + Num(left) + "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" +
         Escape(title) + "</text>\n";
  for (Eigen::Index t = 0; t < w.rows(); ++t) {
    for (Eigen::Index l = 0; l < w.cols(); ++l) {
      const double v = std::clamp(w(t, l), 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      char fill[16];
      std::snprintf(fill, sizeof(fill), "#%02x%02x%02x", shade, shade, 255);
      svg += "<rect class=\"cell\" x=\"" + Num(left + cell * static_cast<double>(l)) +
             "\" y=\"" + Num(top + cell * static_cast<double>(t)) + "\" width=\"" + Num(cell) +
             "\" height=\"" + Num(cell) + "\" fill=\"" + fill + "\" data-step=\"" +
             std::to_string(t) + "\" data-pos=\"" + std::to_string(l) + "\" data-w=\"" +
             Exact(w(t, l)) + "\"/>\n";
    }
  }
  svg += "<text x=\"" + Num(left) + "\" y=\"" + Num(height - 12) +
         "\" font-family=\"sans-serif\" font-size=\"12\">encoder position</text>\n";
  svg += "<text x=\"14\" y=\"" + Num(top + 10) +
         "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(90 14 " +
         Num(top + 10) + ")\">decoder step</text>\n";
  svg += "</svg>\n";
  io::AtomicWriteText(svg_path, svg);
}

ScoreReport ScoreConversions(const std::vector<inference::ConversionRecord>& report,
                             const std::vector<corpus::UtteranceRecord>& targets,
                             const std::string& target_manifest_path,
                             const signal::AudioConfig& audio, const ScoreOptions& opts) {
  std::map<std::string, const corpus::UtteranceRecord*> by_key;
  auto key = [](const std::string& spk, const std::string& text, const std::string& emo) {
    return spk + "\x1f" + text + "\x1f" + emo;
  };
  for (const auto& t : targets) {
    if (t.emotion) by_key.emplace(key(t.speaker, t.text, *t.emotion), &t);
  }
  ScoreReport out;
  for (const auto& r : report) {
    if (!r.ok) {
      out.skipped.push_back(r.source_id + "->" + r.target_emotion + ": conversion failed");
      continue;
    }
    auto it = by_key.find(key(r.speaker, r.text, r.target_emotion));
    if (it == by_key.end()) {
      out.skipped.push_back(r.source_id + "->" + r.target_emotion + ": no parallel target");
      continue;
    }
    const signal::Waveform src = signal::ReadWav(r.source_audio);
    const signal::Waveform conv = signal::ReadWav(r.output_path);
    const signal::Waveform tgt =
        signal::ReadWav(corpus::ResolveAudioPath(target_manifest_path, *it->second));
    const auto m_src = signal::ExtractMcep(src, opts.mcep_order, audio, opts.alpha);
    const auto m_conv = signal::ExtractMcep(conv, opts.mcep_order, audio, opts.alpha);
    const auto m_tgt = signal::ExtractMcep(tgt, opts.mcep_order, audio, opts.alpha);
    PairScore p;
    p.source_id = r.source_id;
    p.target_id = it->second->id;
    p.source_emotion = r.source_emotion;
    p.target_emotion = r.target_emotion;
    p.mcd_converted = McdScore(m_conv, m_tgt);
    p.mcd_source = McdScore(m_src, m_tgt);
    p.ddur_converted = DdurScore(conv, tgt, audio);
    p.ddur_source = DdurScore(src, tgt, audio);
    out.pairs.push_back(std::move(p));
  }

  std::map<std::pair<std::string, std::string>, AggregateScore> groups;
  AggregateScore all{"all", "all"};
  for (const auto& p : out.pairs) {
    for (AggregateScore* a : {&groups[{p.source_emotion, p.target_emotion}], &all}) {
      a->pairs += 1;
      a->mcd_converted += p.mcd_converted;
      a->mcd_source += p.mcd_source;
      a->ddur_converted += p.ddur_converted;
      a->ddur_source += p.ddur_source;
    }
  }
  auto finish = [](AggregateScore a) {
    const double n = std::max(1, a.pairs);
    a.mcd_converted /= n;
    a.mcd_source /= n;
    a.ddur_converted /= n;
    a.ddur_source /= n;
    return a;
  };
  for (auto& [k, a] : groups) {
    a.source_emotion = k.first;
    a.target_emotion = k.second;
    out.aggregates.push_back(finish(a));
  }
  out.aggregates.push_back(finish(all));
  return out;
}

void WriteScores(const std::string& path, const ScoreReport& scores) {
  json j = {{"pairs", json::array()}, {"aggregates", json::array()}, {"skipped", scores.skipped}};
  for (const auto& p : scores.pairs) {
    j["pairs"].push_back({{"source_id", p.source_id},
                          {"target_id", p.target_id},
                          {"source_emotion", p.source_emotion},
                          {"target_emotion", p.target_emotion},
                          {"mcd_converted_vs_target", p.mcd_converted},
                          {"mcd_source_vs_target", p.mcd_source},
                          {"ddur_converted_vs_target", p.ddur_converted},
                          {"ddur_source_vs_target", p.ddur_source}});
  }
  for (const auto& a : scores.aggregates) {
    j["aggregates"].push_back({{"source_emotion", a.source_emotion},
                               {"target_emotion", a.target_emotion},
                               {"pairs", a.pairs},
                               {"mcd_converted_vs_target", a.mcd_converted},
                               {"mcd_source_vs_target", a.mcd_source},
                               {"ddur_converted_vs_target", a.ddur_converted},
                               {"ddur_source_vs_target", a.ddur_source}});
  }
  io::AtomicWriteText(path, j.dump(2) + "\n");
}

}  // namespace evc::evaluation

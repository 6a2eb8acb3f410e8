// avlip/evaluation.hpp

// Copyright 2026  The avlip authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avlip/backends.hpp"
#include "avlip/common.hpp"
#include "avlip/corpus.hpp"

namespace avlip {

// ---------------------------------------------------------------------------
// Embedding store
// ---------------------------------------------------------------------------

enum class Stream { kAudio, kVideo };

inline const char* to_string(Stream s) { return s == Stream::kAudio ? "audio" : "video"; }

inline Stream stream_from_string(const std::string& s) {
  if (s == "audio") return Stream::kAudio;
  if (s == "video") return Stream::kVideo;
  raise<ParseError>("unknown stream: ", s);
}

/// utt_id -> per-stream fixed-length embeddings.
class EmbeddingStore {
 public:
  struct Entry {
    std::optional<std::vector<float>> audio;
    std::optional<std::vector<float>> video;
  };

  void set(const std::string& utt_id, Stream stream, std::vector<float> vec) {
    auto& e = entries_[utt_id];
    auto& slot = (stream == Stream::kAudio) ? e.audio : e.video;
    if (slot && slot->size() != vec.size())
      raise<ShapeMismatch>("inconsistent embedding dim for ", utt_id);
    check_dim(stream, vec.size());
    slot = std::move(vec);
  }

  bool has(const std::string& utt_id, Stream stream) const {
    auto it = entries_.find(utt_id);
    if (it == entries_.end()) return false;
    return stream == Stream::kAudio ? it->second.audio.has_value()
                                    : it->second.video.has_value();
  }

  const std::vector<float>& get(const std::string& utt_id, Stream stream) const {
    auto it = entries_.find(utt_id);
    if (it != entries_.end()) {
      const auto& slot = (stream == Stream::kAudio) ? it->second.audio : it->second.video;
      if (slot) return *slot;
    }
    raise<MissingEmbedding>("no ", to_string(stream), " embedding for utt ", utt_id);
  }

  size_t size() const { return entries_.size(); }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  // One line per embedding: utt_id <TAB> stream <TAB> dim <TAB> values.
  // %.9g round-trips float exactly, so repeated runs are byte-identical.
  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) raise<IoError>("cannot open for writing: ", path);
    char buf[32];
    for (const auto& [utt, e] : entries_) {
      for (Stream s : {Stream::kAudio, Stream::kVideo}) {
        const auto& slot = (s == Stream::kAudio) ? e.audio : e.video;
        if (!slot) continue;
        os << utt << '\t' << to_string(s) << '\t' << slot->size();
        for (float v : *slot) {
          std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
          os << '\t' << buf;
        }
        os << '\n';
      }
    }
    if (!os) raise<IoError>("short write: ", path);
  }

  static EmbeddingStore load(const std::string& path) {
    std::ifstream is(path);
    if (!is) raise<IoError>("cannot open embedding store: ", path);
    EmbeddingStore store;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      const auto fields = detail::split_tabs(line);
      if (fields.size() < 4) raise<ParseError>(path, ":", lineno, ": short line");
      const size_t dim = std::stoul(fields[2]);
      if (fields.size() != 3 + dim)
        raise<ParseError>(path, ":", lineno, ": expected ", dim, " values");
      std::vector<float> vec(dim);
      for (size_t i = 0; i < dim; ++i) vec[i] = std::stof(fields[3 + i]);
      store.set(fields[0], stream_from_string(fields[1]), std::move(vec));
    }
    return store;
  }

 private:
  void check_dim(Stream stream, size_t dim) {
    size_t& expected = (stream == Stream::kAudio) ? audio_dim_ : video_dim_;
    if (expected == 0) expected = dim;
    else if (expected != dim)
      raise<ShapeMismatch>("mixed ", to_string(stream), " embedding dims: ", expected,
                           " vs ", dim);
  }

  std::map<std::string, Entry> entries_;
  size_t audio_dim_ = 0, video_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Score sets
// ---------------------------------------------------------------------------

struct ScoreSet {
  TrialList trials;
  std::vector<double> scores;
  std::string system_name;

  void validate() const {
    if (scores.size() != trials.size())
      raise<ShapeMismatch>("score/trial count mismatch in ", system_name);
    for (double s : scores)
      if (!std::isfinite(s)) raise<DataError>("non-finite score in ", system_name);
  }
};

// Score file: `enroll_utt  test_utt  score  target|nontarget` per line.
inline void save_scores(const std::string& path, const ScoreSet& s) {
  s.validate();
  std::ofstream os(path);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  char buf[40];
  for (size_t i = 0; i < s.trials.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.12g", s.scores[i]);
    os << s.trials[i].enroll_utt << '\t' << s.trials[i].test_utt << '\t' << buf << '\t'
       << (s.trials[i].is_target ? "target" : "nontarget") << '\n';
  }
  if (!os) raise<IoError>("short write: ", path);
}

inline ScoreSet load_scores(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise<IoError>("cannot open score file: ", path);
  ScoreSet s;
  s.system_name = std::filesystem::path(path).stem().string();
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 4)
      raise<ParseError>(path, ":", lineno, ": expected 4 fields, got ", fields.size());
    Trial t;
    t.enroll_utt = fields[0];
    t.test_utt = fields[1];
    if (fields[3] == "target") t.is_target = true;
    else if (fields[3] == "nontarget") t.is_target = false;
    else raise<ParseError>(path, ":", lineno, ": bad label ", fields[3]);
    s.trials.push_back(std::move(t));
    try {
      s.scores.push_back(std::stod(fields[2]));
    } catch (const std::exception&) {
      raise<ParseError>(path, ":", lineno, ": bad score ", fields[2]);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

/// L1-normalize each stream embedding, then concatenate.
template <typename T>
std::vector<T> feature_fuse(const std::vector<T>& audio, const std::vector<T>& video) {
  if (audio.empty() || video.empty()) raise<MissingStream>("feature_fuse needs both streams");
  auto l1 = [](const std::vector<T>& v) {
    double acc = 0.0;
    for (T x : v) acc += std::abs(static_cast<double>(x));
    return acc;
  };
  const double na = l1(audio), nv = l1(video);
  if (na <= 0.0 || nv <= 0.0) raise<ZeroVector>("feature_fuse of zero-L1 embedding");
  std::vector<T> out;
  out.reserve(audio.size() + video.size());
  for (T x : audio) out.push_back(static_cast<T>(static_cast<double>(x) / na));
  for (T x : video) out.push_back(static_cast<T>(static_cast<double>(x) / nv));
  return out;
}

/// Elementwise weighted mean of two score sets over identical trial lists.
inline ScoreSet score_fuse(const ScoreSet& a, const ScoreSet& b,
                           std::pair<double, double> weights = {0.5, 0.5}) {
  a.validate();
  b.validate();
  if (a.trials.size() != b.trials.size())
    raise<TrialMismatch>("trial counts differ: ", a.trials.size(), " vs ",
                         b.trials.size());
  for (size_t i = 0; i < a.trials.size(); ++i) {
    const auto& ta = a.trials[i];
    const auto& tb = b.trials[i];
    if (ta.enroll_utt != tb.enroll_utt || ta.test_utt != tb.test_utt ||
        ta.is_target != tb.is_target)
      raise<TrialMismatch>("trial ", i, " differs between score sets");
  }
  ScoreSet out;
  out.trials = a.trials;
  out.system_name = a.system_name + "+" + b.system_name;
  out.scores.resize(a.scores.size());
  const double wsum = weights.first + weights.second;
  if (wsum <= 0) raise<ConfigError>("fusion weights must sum to > 0");
  for (size_t i = 0; i < a.scores.size(); ++i)
    out.scores[i] = (weights.first * a.scores[i] + weights.second * b.scores[i]) / wsum;
  return out;
}

/// Z-normalization against a cohort score set (optional; off by default in
/// the fusion pipelines).
inline ScoreSet znorm(const ScoreSet& s, const ScoreSet& cohort) {
  cohort.validate();
  if (cohort.scores.empty()) raise<EmptyData>("empty z-norm cohort");
  double mean = 0.0;
  for (double v : cohort.scores) mean += v;
  mean /= static_cast<double>(cohort.scores.size());
  double var = 0.0;
  for (double v : cohort.scores) var += (v - mean) * (v - mean);
  var /= static_cast<double>(cohort.scores.size());
  const double sd = std::max(std::sqrt(var), 1e-12);
  ScoreSet out = s;
  out.system_name = s.system_name + "-znorm";
  for (double& v : out.scores) v = (v - mean) / sd;
  return out;
}

// ---------------------------------------------------------------------------
// Trial scoring
// ---------------------------------------------------------------------------

struct ScorerSpec {
  enum class Kind { kCosine, kPlda, kFusedFeature };
  Kind kind = Kind::kCosine;
  Stream stream = Stream::kAudio;     // for kCosine / kPlda
  const PldaModel* plda = nullptr;    // required for kPlda
  std::string name() const {
    switch (kind) {
      case Kind::kCosine: return strcat_(to_string(stream), "-cosine");
      case Kind::kPlda: return strcat_(to_string(stream), "-plda");
      default: return "feature-fusion-cosine";
    }
  }
};

inline Eigen::VectorXd to_eigen(const std::vector<float>& v) {
  Eigen::VectorXd out(static_cast<int64_t>(v.size()));
  for (size_t i = 0; i < v.size(); ++i) out(static_cast<int64_t>(i)) = v[i];
  return out;
}

/// One score per trial, order-preserving and deterministic.
inline ScoreSet evaluate_trials(const EmbeddingStore& store, const TrialList& trials,
                                const ScorerSpec& scorer) {
  if (scorer.kind == ScorerSpec::Kind::kPlda &&
      (scorer.plda == nullptr || !scorer.plda->trained()))
    raise<ModelNotTrained>("PLDA scorer without a trained model");

  ScoreSet out;
  out.trials = trials;
  out.system_name = scorer.name();
  out.scores.reserve(trials.size());

  auto fused = [&](const std::string& utt) {
    if (!store.has(utt, Stream::kAudio))
      raise<MissingEmbedding>("no audio embedding for utt ", utt);
    if (!store.has(utt, Stream::kVideo))
      raise<MissingEmbedding>("no video embedding for utt ", utt);
    return feature_fuse(store.get(utt, Stream::kAudio), store.get(utt, Stream::kVideo));
  };

  for (const auto& t : trials) {
    double score = 0.0;
    switch (scorer.kind) {
      case ScorerSpec::Kind::kCosine:
        score = cosine_score(store.get(t.enroll_utt, scorer.stream),
                             store.get(t.test_utt, scorer.stream));
        break;
      case ScorerSpec::Kind::kPlda:
        score = scorer.plda->score(to_eigen(store.get(t.enroll_utt, scorer.stream)),
                                   to_eigen(store.get(t.test_utt, scorer.stream)));
        break;
      case ScorerSpec::Kind::kFusedFeature:
        score = cosine_score(fused(t.enroll_utt), fused(t.test_utt));
        break;
    }
    out.scores.push_back(score);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics: EER, minDCF, DET
// ---------------------------------------------------------------------------

struct DetPoint {
  double threshold = 0.0;
  double far = 0.0;  // false acceptance (nontarget >= threshold)
  double frr = 0.0;  // false rejection (target < threshold)
};

namespace detail {

// Operating points for "accept iff score >= threshold", thresholds ascending
// over the distinct scores, plus the reject-all point at +inf.  The first
// point is always (FAR 1, FRR 0), the last (0, 1).
inline std::vector<DetPoint> sweep_points(const ScoreSet& s) {
  s.validate();
  std::vector<double> tar, non;
  for (size_t i = 0; i < s.trials.size(); ++i)
    (s.trials[i].is_target ? tar : non).push_back(s.scores[i]);
  if (tar.empty() || non.empty())
    raise<OneClassOnly>("need both target and nontarget trials (",
                        tar.size(), " targets, ", non.size(), " nontargets)");
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());

  std::vector<double> thresholds;
  thresholds.reserve(tar.size() + non.size());
  std::merge(tar.begin(), tar.end(), non.begin(), non.end(),
             std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const double nt = static_cast<double>(tar.size());
  const double nn = static_cast<double>(non.size());
  std::vector<DetPoint> points;
  points.reserve(thresholds.size() + 1);
  for (double th : thresholds) {
    DetPoint p;
    p.threshold = th;
    const auto non_ge = non.end() - std::lower_bound(non.begin(), non.end(), th);
    const auto tar_lt = std::lower_bound(tar.begin(), tar.end(), th) - tar.begin();
    p.far = static_cast<double>(non_ge) / nn;
    p.frr = static_cast<double>(tar_lt) / nt;
    points.push_back(p);
  }
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return points;
}

// EER by walking the sweep to the FAR/FRR crossing, linearly interpolating
// between adjacent operating points when they do not meet exactly.
inline std::pair<double, double> eer_from_points(const std::vector<DetPoint>& points) {
  for (size_t i = 0; i < points.size(); ++i) {
    const double d = points[i].far - points[i].frr;
    if (d > 0) continue;
    if (d == 0) return {points[i].far, points[i].threshold};
    // first sign change: interpolate with the previous point (d was > 0)
    const DetPoint& hi = points[i - 1];
    const DetPoint& lo = points[i];
    const double d1 = hi.far - hi.frr;
    const double d2 = lo.far - lo.frr;
    const double s = d1 / (d1 - d2);
    const double eer = hi.far + s * (lo.far - hi.far);
    const double th = std::isfinite(lo.threshold)
                          ? hi.threshold + s * (lo.threshold - hi.threshold)
                          : hi.threshold;
    return {eer, th};
  }
  return {0.0, points.back().threshold};  // unreachable: last point has d = -1
}

}  // namespace detail

/// Equal error rate in [0, 1] and its crossing threshold.
inline std::pair<double, double> compute_eer(const ScoreSet& s) {
  return detail::eer_from_points(detail::sweep_points(s));
}

/// Normalized minimum detection cost.
inline double compute_min_dcf(const ScoreSet& s, double p_target = 0.01,
                              double c_miss = 1.0, double c_fa = 1.0) {
  if (p_target <= 0 || p_target >= 1) raise<ConfigError>("p_target must be in (0,1)");
  if (c_miss <= 0 || c_fa <= 0) raise<ConfigError>("costs must be positive");
  const auto points = detail::sweep_points(s);
  const double norm = std::min(c_miss * p_target, c_fa * (1.0 - p_target));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : points)
    best = std::min(best, (c_miss * p_target * p.frr + c_fa * (1.0 - p_target) * p.far) / norm);
  return best;
}

/// Full DET sweep (FAR non-increasing in threshold; endpoints (1,0), (0,1)).
inline std::vector<DetPoint> det_curve(const ScoreSet& s) {
  return detail::sweep_points(s);
}

inline void save_det_csv(const std::string& path, const std::vector<DetPoint>& points) {
  std::ofstream os(path);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  os << "threshold,far,frr\n";
  char buf[96];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g\n", p.threshold, p.far, p.frr);
    os << buf;
  }
  if (!os) raise<IoError>("short write: ", path);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct SystemReport {
  std::string system_name;
  size_t n_trials = 0;
  size_t n_target = 0;
  double eer = 0.0;
  double threshold = 0.0;
  double min_dcf = 0.0;
};

inline SystemReport evaluate_system(const ScoreSet& s, double p_target = 0.01,
                                    double c_miss = 1.0, double c_fa = 1.0) {
  SystemReport r;
  r.system_name = s.system_name;
  r.n_trials = s.trials.size();
  for (const auto& t : s.trials) r.n_target += t.is_target ? 1 : 0;
  auto [eer, th] = compute_eer(s);
  r.eer = eer;
  r.threshold = th;
  r.min_dcf = compute_min_dcf(s, p_target, c_miss, c_fa);
  return r;
}

inline std::string format_report(const std::vector<SystemReport>& systems,
                                 double p_target) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-28s %8s %8s %9s %12s %10s\n", "system", "trials",
                "targets", "EER(%)", "threshold", "minDCF");
  out += buf;
  for (const auto& r : systems) {
    std::snprintf(buf, sizeof(buf), "%-28s %8zu %8zu %9.3f %12.6g %10.4f\n",
                  r.system_name.c_str(), r.n_trials, r.n_target, 100.0 * r.eer,
                  r.threshold, r.min_dcf);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "# minDCF at p_target=%g, unit costs\n", p_target);
  out += buf;
  return out;
}

}  // namespace avlip

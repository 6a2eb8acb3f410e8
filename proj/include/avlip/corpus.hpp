// avlip/corpus.hpp

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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "avlip/common.hpp"
#include "avlip/rng.hpp"

namespace avlip {

struct UtteranceRecord {
  std::string utt_id;
  std::string speaker_id;
  std::string audio_path;
  std::string video_path;
  double fps = 25.0;
  int sample_rate = 16000;
  double duration = 0.0;
};

struct Manifest {
  std::string name;
  std::vector<UtteranceRecord> records;

  int64_t num_utterances() const { return static_cast<int64_t>(records.size()); }

  int64_t num_speakers() const {
    std::set<std::string> s;
    for (const auto& r : records) s.insert(r.speaker_id);
    return static_cast<int64_t>(s.size());
  }

  std::vector<std::string> speakers() const {
    std::set<std::string> s;
    for (const auto& r : records) s.insert(r.speaker_id);
    return {s.begin(), s.end()};
  }

  const UtteranceRecord& find(const std::string& utt_id) const {
    for (const auto& r : records)
      if (r.utt_id == utt_id) return r;
    raise<ParseError>("utt_id not in manifest: ", utt_id);
  }
};

enum class PartitionRole { kTraining, kDevelopment, kTest };

inline const char* to_string(PartitionRole r) {
  switch (r) {
    case PartitionRole::kTraining: return "training";
    case PartitionRole::kDevelopment: return "development";
    default: return "test";
  }
}

inline PartitionRole partition_role_from_string(const std::string& s) {
  if (s == "training") return PartitionRole::kTraining;
  if (s == "development") return PartitionRole::kDevelopment;
  if (s == "test") return PartitionRole::kTest;
  raise<ParseError>("unknown partition role: ", s);
}

struct Partition {
  std::string name;  // e.g. "training", "test1"
  PartitionRole role = PartitionRole::kTraining;
  Manifest manifest;
};

struct PartitionSet {
  std::vector<Partition> partitions;

  const Partition& find(const std::string& name) const {
    for (const auto& p : partitions)
      if (p.name == name) return p;
    raise<ParseError>("no partition named ", name);
  }

  // Throws OverlapError when any utt_id appears in two partitions.
  void check_disjoint() const {
    std::unordered_map<std::string, std::string> seen;
    for (const auto& p : partitions) {
      for (const auto& r : p.manifest.records) {
        auto [it, inserted] = seen.emplace(r.utt_id, p.name);
        if (!inserted)
          raise<OverlapError>("utt ", r.utt_id, " appears in partitions ",
                              it->second, " and ", p.name);
      }
    }
  }
};

struct Trial {
  std::string enroll_utt;
  std::string test_utt;
  bool is_target = false;
};

using TrialList = std::vector<Trial>;

// ---------------------------------------------------------------------------
// Manifest file format: one record per line, tab-separated
//   utt_id  speaker_id  audio_path  video_path  fps  sample_rate  duration
// '#' starts a comment line.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

inline Manifest load_manifest(const std::string& path, bool strict = false) {
  std::ifstream is(path);
  if (!is) raise<IoError>("cannot open manifest: ", path);
  Manifest m;
  m.name = std::filesystem::path(path).stem().string();
  std::unordered_set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 7)
      raise<ParseError>(path, ":", lineno, ": expected 7 tab-separated fields, got ",
                        fields.size());
    UtteranceRecord r;
    r.utt_id = fields[0];
    r.speaker_id = fields[1];
    r.audio_path = fields[2];
    r.video_path = fields[3];
    try {
      r.fps = std::stod(fields[4]);
      r.sample_rate = std::stoi(fields[5]);
      r.duration = std::stod(fields[6]);
    } catch (const std::exception&) {
      raise<ParseError>(path, ":", lineno, ": malformed numeric field");
    }
    if (r.utt_id.empty() || r.speaker_id.empty())
      raise<ParseError>(path, ":", lineno, ": empty utt_id or speaker_id");
    if (r.fps <= 0 || r.sample_rate <= 0 || r.duration <= 0)
      raise<ParseError>(path, ":", lineno, ": fps, sample_rate and duration must be > 0");
    if (!seen.insert(r.utt_id).second)
      raise<DuplicateUttId>(path, ":", lineno, ": duplicate utt_id ", r.utt_id);
    if (strict) {
      if (!std::filesystem::exists(r.audio_path))
        raise<MissingMedia>("missing audio for ", r.utt_id, ": ", r.audio_path);
      if (!std::filesystem::exists(r.video_path))
        raise<MissingMedia>("missing video for ", r.utt_id, ": ", r.video_path);
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

inline void save_manifest(const std::string& path, const Manifest& m) {
  std::ofstream os(path);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  os << "# utt_id\tspeaker_id\taudio_path\tvideo_path\tfps\tsample_rate\tduration\n";
  for (const auto& r : m.records) {
    os << r.utt_id << '\t' << r.speaker_id << '\t' << r.audio_path << '\t'
       << r.video_path << '\t' << detail::fmt_double(r.fps) << '\t' << r.sample_rate
       << '\t' << detail::fmt_double(r.duration) << '\n';
  }
  if (!os) raise<IoError>("short write: ", path);
}

/// Validation hook for corpus cleaning (e.g. dropping utterances whose media
/// fails an external check).  Keeps records the predicate accepts.
inline Manifest filter_manifest(const Manifest& m,
                                const std::function<bool(const UtteranceRecord&)>& keep) {
  Manifest out;
  out.name = m.name;
  for (const auto& r : m.records)
    if (keep(r)) out.records.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

// One rule assigns a source manifest, or a speaker subset of it, to a named
// partition.  Rules are applied in order; each consumes speakers from the
// source's not-yet-assigned pool.  Selection is either an explicit speaker
// list, a count (drawn from a seeded shuffle of the remaining speakers), or
// everything left.
struct PartitionRule {
  std::string partition_name;
  PartitionRole role = PartitionRole::kTraining;
  std::string source;                 // source manifest name
  std::vector<std::string> speakers;  // explicit selection; empty = use n_speakers
  int n_speakers = -1;                // -1 = all remaining speakers
};

struct PartitionScheme {
  std::vector<PartitionRule> rules;
  uint64_t seed = 0;
};

inline PartitionSet make_partitions(const std::vector<Manifest>& sources,
                                    const PartitionScheme& scheme) {
  std::map<std::string, const Manifest*> by_name;
  for (const auto& m : sources) by_name[m.name] = &m;

  // per-source pool of unassigned speakers, in a deterministic seeded order
  std::map<std::string, std::vector<std::string>> pools;
  Rng rng(scheme.seed);
  for (const auto& m : sources) {
    auto spk = m.speakers();  // sorted
    rng.shuffle(spk);
    pools[m.name] = std::move(spk);
  }

  PartitionSet out;
  for (const auto& rule : scheme.rules) {
    auto src_it = by_name.find(rule.source);
    if (src_it == by_name.end())
      raise<ConfigError>("partition rule references unknown manifest: ", rule.source);
    auto& pool = pools[rule.source];

    std::vector<std::string> chosen;
    if (!rule.speakers.empty()) {
      for (const auto& s : rule.speakers) {
        auto it = std::find(pool.begin(), pool.end(), s);
        if (it == pool.end())
          raise<OverlapError>("speaker ", s, " not available in ", rule.source,
                              " (missing or already assigned)");
        chosen.push_back(s);
        pool.erase(it);
      }
    } else {
      int take = rule.n_speakers < 0 ? static_cast<int>(pool.size()) : rule.n_speakers;
      if (take > static_cast<int>(pool.size()))
        raise<ConfigError>("rule for ", rule.partition_name, " wants ", take,
                           " speakers but only ", pool.size(), " remain in ",
                           rule.source);
      chosen.assign(pool.begin(), pool.begin() + take);
      pool.erase(pool.begin(), pool.begin() + take);
    }

    std::unordered_set<std::string> chosen_set(chosen.begin(), chosen.end());
    Partition p;
    p.name = rule.partition_name;
    p.role = rule.role;
    p.manifest.name = rule.partition_name;
    for (const auto& r : src_it->second->records)
      if (chosen_set.count(r.speaker_id)) p.manifest.records.push_back(r);
    if (p.manifest.records.empty())
      raise<EmptyPartition>("partition ", rule.partition_name, " is empty");
    out.partitions.push_back(std::move(p));
  }
  out.check_disjoint();
  return out;
}

// ---------------------------------------------------------------------------
// Trial generation
// ---------------------------------------------------------------------------

namespace detail {

// Draws `want` distinct unordered pairs uniformly from an explicit pool.
inline std::vector<std::pair<int64_t, int64_t>> sample_pairs_enumerated(
    std::vector<std::pair<int64_t, int64_t>>& pool, int64_t want, Rng& rng) {
  for (int64_t i = 0; i < want; ++i) {
    const int64_t j =
        i + static_cast<int64_t>(rng.uniform_u64(static_cast<uint64_t>(
                static_cast<int64_t>(pool.size()) - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  return {pool.begin(), pool.begin() + want};
}

}  // namespace detail

/// Exactly n_pairs trials, ceil(n/2) target and floor(n/2) nontarget, sampled
/// without replacement of unordered utterance pairs.  Deterministic per seed.
inline TrialList generate_trials(const Partition& partition, int64_t n_pairs,
                                 uint64_t seed) {
  const auto& records = partition.manifest.records;
  const int64_t n_utts = static_cast<int64_t>(records.size());

  std::map<std::string, std::vector<int64_t>> by_speaker;
  for (int64_t i = 0; i < n_utts; ++i) by_speaker[records[static_cast<size_t>(i)].speaker_id].push_back(i);

  int64_t target_pool = 0;
  for (const auto& [spk, utts] : by_speaker) {
    const int64_t k = static_cast<int64_t>(utts.size());
    target_pool += k * (k - 1) / 2;
  }
  const int64_t all_pairs = n_utts * (n_utts - 1) / 2;
  const int64_t nontarget_pool = all_pairs - target_pool;

  const int64_t n_target = (n_pairs + 1) / 2;
  const int64_t n_nontarget = n_pairs / 2;
  if (by_speaker.size() < 2 || n_target > target_pool || n_nontarget > nontarget_pool)
    raise<InfeasibleTrials>("cannot form ", n_target, " target + ", n_nontarget,
                            " nontarget pairs (pools: ", target_pool, " / ",
                            nontarget_pool, ", speakers: ", by_speaker.size(), ")");

  Rng rng(seed);
  auto key = [n_utts](int64_t a, int64_t b) {
    if (a > b) std::swap(a, b);
    return static_cast<uint64_t>(a) * static_cast<uint64_t>(n_utts) +
           static_cast<uint64_t>(b);
  };

  std::vector<std::pair<int64_t, int64_t>> targets;
  if (n_target * 2 >= target_pool) {
    std::vector<std::pair<int64_t, int64_t>> pool;
    pool.reserve(static_cast<size_t>(target_pool));
    for (const auto& [spk, utts] : by_speaker)
      for (size_t a = 0; a < utts.size(); ++a)
        for (size_t b = a + 1; b < utts.size(); ++b) pool.emplace_back(utts[a], utts[b]);
    targets = detail::sample_pairs_enumerated(pool, n_target, rng);
  } else {
    // cumulative within-speaker pair counts for weighted speaker selection
    std::vector<std::pair<int64_t, const std::vector<int64_t>*>> cum;
    int64_t running = 0;
    for (const auto& [spk, utts] : by_speaker) {
      const int64_t k = static_cast<int64_t>(utts.size());
      if (k >= 2) {
        running += k * (k - 1) / 2;
        cum.emplace_back(running, &utts);
      }
    }
    std::unordered_set<uint64_t> used;
    while (static_cast<int64_t>(targets.size()) < n_target) {
      const int64_t pick = static_cast<int64_t>(rng.uniform_u64(static_cast<uint64_t>(running)));
      const auto it = std::upper_bound(cum.begin(), cum.end(), pick,
                                       [](int64_t v, const auto& e) { return v < e.first; });
      const auto& utts = *it->second;
      const int64_t k = static_cast<int64_t>(utts.size());
      const int64_t a = rng.uniform_int(0, k - 1);
      int64_t b = rng.uniform_int(0, k - 2);
      if (b >= a) ++b;
      if (used.insert(key(utts[static_cast<size_t>(a)], utts[static_cast<size_t>(b)])).second)
        targets.emplace_back(utts[static_cast<size_t>(a)], utts[static_cast<size_t>(b)]);
    }
  }

  std::vector<std::pair<int64_t, int64_t>> nontargets;
  if (n_nontarget * 2 >= nontarget_pool) {
    std::vector<std::pair<int64_t, int64_t>> pool;
    pool.reserve(static_cast<size_t>(nontarget_pool));
    for (int64_t a = 0; a < n_utts; ++a)
      for (int64_t b = a + 1; b < n_utts; ++b)
        if (records[static_cast<size_t>(a)].speaker_id != records[static_cast<size_t>(b)].speaker_id)
          pool.emplace_back(a, b);
    nontargets = detail::sample_pairs_enumerated(pool, n_nontarget, rng);
  } else {
    std::unordered_set<uint64_t> used;
    while (static_cast<int64_t>(nontargets.size()) < n_nontarget) {
      const int64_t a = rng.uniform_int(0, n_utts - 1);
      int64_t b = rng.uniform_int(0, n_utts - 2);
      if (b >= a) ++b;
      if (records[static_cast<size_t>(a)].speaker_id == records[static_cast<size_t>(b)].speaker_id) continue;
      if (used.insert(key(a, b)).second) nontargets.emplace_back(a, b);
    }
  }

  TrialList trials;
  trials.reserve(static_cast<size_t>(n_pairs));
  for (const auto& [a, b] : targets)
    trials.push_back({records[static_cast<size_t>(a)].utt_id, records[static_cast<size_t>(b)].utt_id, true});
  for (const auto& [a, b] : nontargets)
    trials.push_back({records[static_cast<size_t>(a)].utt_id, records[static_cast<size_t>(b)].utt_id, false});
  rng.shuffle(trials);
  return trials;
}

// Trial-list file: `enroll_utt_id  test_utt_id  target|nontarget`, tab-separated.

inline void save_trials(const std::string& path, const TrialList& trials) {
  std::ofstream os(path);
  if (!os) raise<IoError>("cannot open for writing: ", path);
  for (const auto& t : trials)
    os << t.enroll_utt << '\t' << t.test_utt << '\t'
       << (t.is_target ? "target" : "nontarget") << '\n';
  if (!os) raise<IoError>("short write: ", path);
}

inline TrialList load_trials(const std::string& path) {
  std::ifstream is(path);
  if (!is) raise<IoError>("cannot open trial list: ", path);
  TrialList trials;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto fields = detail::split_tabs(line);
    if (fields.size() != 3)
      raise<ParseError>(path, ":", lineno, ": expected 3 fields, got ", fields.size());
    Trial t;
    t.enroll_utt = fields[0];
    t.test_utt = fields[1];
    if (fields[2] == "target") t.is_target = true;
    else if (fields[2] == "nontarget") t.is_target = false;
    else raise<ParseError>(path, ":", lineno, ": label must be target|nontarget");
    if (t.enroll_utt == t.test_utt)
      raise<ParseError>(path, ":", lineno, ": enroll and test utt are identical");
    trials.push_back(std::move(t));
  }
  return trials;
}

}  // namespace avlip

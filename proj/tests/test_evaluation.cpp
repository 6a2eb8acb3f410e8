// tests/test_evaluation.cpp

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

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "avlip/evaluation.hpp"
#include "oracles.hpp"

using namespace avlip;
namespace fs = std::filesystem;

namespace {

ScoreSet make_set(const std::vector<double>& targets, const std::vector<double>& nons) {
  ScoreSet s;
  s.system_name = "unit";
  int i = 0;
  for (double v : targets) {
    s.trials.push_back({"e" + std::to_string(i), "t" + std::to_string(i), true});
    s.scores.push_back(v);
    ++i;
  }
  for (double v : nons) {
    s.trials.push_back({"e" + std::to_string(i), "t" + std::to_string(i), false});
    s.scores.push_back(v);
    ++i;
  }
  return s;
}

std::vector<float> random_vec(Rng& rng, size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("feature_fuse forced example and dimensions") {
  const std::vector<float> fused = feature_fuse<float>({2, 0}, {0, 3});
  REQUIRE(fused.size() == 4);
  CHECK(fused[0] == 1.0f);
  CHECK(fused[1] == 0.0f);
  CHECK(fused[2] == 0.0f);
  CHECK(fused[3] == 1.0f);

  Rng rng(1);
  const auto a = random_vec(rng, 512);
  const auto v = random_vec(rng, 512);
  CHECK(feature_fuse(a, v).size() == 1024);

  CHECK_THROWS_AS(feature_fuse<float>({0, 0}, {1, 1}), ZeroVector);
  CHECK_THROWS_AS(feature_fuse<float>({}, {1, 1}), MissingStream);
}

TEST_CASE("duplicate-stream fusion preserves cosine") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const size_t dim = static_cast<size_t>(rng.uniform_int(2, 32));
    const auto a = random_vec(rng, dim);
    const auto b = random_vec(rng, dim);
    const double direct = cosine_score(a, b);
    const double fused = cosine_score(feature_fuse(a, a), feature_fuse(b, b));
    REQUIRE(std::abs(direct - fused) < 1e-9);
  }
}

TEST_CASE("score_fuse identities") {
  Rng rng(3);
  ScoreSet s = make_set({0.9, 0.8}, {0.2, 0.1});
  for (auto& v : s.scores) v = rng.normal();

  const ScoreSet same = score_fuse(s, s);
  for (size_t i = 0; i < s.scores.size(); ++i) REQUIRE(same.scores[i] == s.scores[i]);

  ScoreSet b = s;
  for (auto& v : b.scores) v = rng.normal();
  const ScoreSet only_a = score_fuse(s, b, {1.0, 0.0});
  for (size_t i = 0; i < s.scores.size(); ++i) REQUIRE(only_a.scores[i] == s.scores[i]);

  ScoreSet two = s;
  two.scores = {0.2, 0.8, 0.2, 0.8};
  ScoreSet half = s;
  half.scores = {0.8, 0.2, 0.8, 0.2};
  const ScoreSet mid = score_fuse(two, half);
  for (double v : mid.scores) REQUIRE(v == 0.5);

  ScoreSet mismatched = s;
  mismatched.trials[0].enroll_utt = "other";
  CHECK_THROWS_AS(score_fuse(s, mismatched), TrialMismatch);
  ScoreSet shorter = s;
  shorter.trials.pop_back();
  shorter.scores.pop_back();
  CHECK_THROWS_AS(score_fuse(s, shorter), TrialMismatch);
}

TEST_CASE("handcrafted EER is exactly one third") {
  const ScoreSet s = make_set({0.9, 0.8, 0.3}, {0.7, 0.2, 0.1});
  const auto [eer, threshold] = compute_eer(s);
  CHECK(eer == 1.0 / 3.0);
  CHECK(threshold == 0.7);
}

TEST_CASE("separated scores give zero EER and zero minDCF") {
  const ScoreSet s = make_set({0.9, 0.8, 0.75}, {0.5, 0.2, 0.1});
  CHECK(compute_eer(s).first == 0.0);
  CHECK(compute_min_dcf(s) == 0.0);
}

TEST_CASE("identical scores give minDCF 1 and EER 1/2") {
  ScoreSet s = make_set({0.5, 0.5, 0.5}, {0.5, 0.5});
  CHECK(compute_min_dcf(s) == 1.0);
  CHECK(compute_eer(s).first == 0.5);
}

TEST_CASE("one-class score sets are rejected") {
  ScoreSet s = make_set({0.5, 0.6}, {});
  CHECK_THROWS_AS(compute_eer(s), OneClassOnly);
  CHECK_THROWS_AS(compute_min_dcf(s), OneClassOnly);
  CHECK_THROWS_AS(det_curve(s), OneClassOnly);
}

TEST_CASE("metrics match the brute-force oracle on random sets") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const ScoreSet s = oracles::random_score_set(rng, 10, 400);
    const double eer = compute_eer(s).first;
    const double oracle_eer = oracles::brute_force_eer(s);
    REQUIRE(std::abs(eer - oracle_eer) < 1e-9);
    const double dcf = compute_min_dcf(s);
    const double oracle_dcf = oracles::brute_force_min_dcf(s, 0.01, 1.0, 1.0);
    REQUIRE(std::abs(dcf - oracle_dcf) < 1e-9);
    const double dcf5 = compute_min_dcf(s, 0.05, 1.0, 2.0);
    const double oracle_dcf5 = oracles::brute_force_min_dcf(s, 0.05, 1.0, 2.0);
    REQUIRE(std::abs(dcf5 - oracle_dcf5) < 1e-9);
  }
}

TEST_CASE("metrics are invariant under strictly increasing transforms") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const ScoreSet s = oracles::random_score_set(rng, 20, 200);
    const double eer = compute_eer(s).first;
    const double dcf = compute_min_dcf(s);

    ScoreSet expd = s;
    for (auto& v : expd.scores) v = std::exp(v);
    CHECK(std::abs(compute_eer(expd).first - eer) < 1e-12);
    CHECK(std::abs(compute_min_dcf(expd) - dcf) < 1e-12);

    ScoreSet affine = s;
    for (auto& v : affine.scores) v = 3.5 * v + 11.0;
    CHECK(std::abs(compute_eer(affine).first - eer) < 1e-12);
    CHECK(std::abs(compute_min_dcf(affine) - dcf) < 1e-12);
  }
}

TEST_CASE("det_curve structure and EER cross-check") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const ScoreSet s = oracles::random_score_set(rng, 10, 200);
    const auto points = det_curve(s);

    std::set<double> distinct(s.scores.begin(), s.scores.end());
    CHECK(points.size() <= distinct.size() + 1);
    CHECK(points.front().far == 1.0);
    CHECK(points.front().frr == 0.0);
    CHECK(points.back().far == 0.0);
    CHECK(points.back().frr == 1.0);
    for (size_t i = 1; i < points.size(); ++i) {
      CHECK(points[i].far <= points[i - 1].far);
      CHECK(points[i].frr >= points[i - 1].frr);
      CHECK(points[i].threshold > points[i - 1].threshold);
    }

    // reading the EER off the curve agrees with compute_eer
    const double from_curve = detail::eer_from_points(points).first;
    CHECK(std::abs(from_curve - compute_eer(s).first) < 1e-9);
  }

  // separated scores reach the (0, 0) corner
  const auto pts = det_curve(make_set({0.9, 0.8}, {0.2, 0.1}));
  bool touches_origin = false;
  for (const auto& p : pts) touches_origin |= (p.far == 0.0 && p.frr == 0.0);
  CHECK(touches_origin);
}

TEST_CASE("evaluate_trials is order-preserving and deterministic") {
  Rng rng(7);
  EmbeddingStore store;
  std::vector<std::string> utts;
  for (int i = 0; i < 12; ++i) {
    const std::string utt = "u" + std::to_string(i);
    utts.push_back(utt);
    store.set(utt, Stream::kAudio, random_vec(rng, 16));
    store.set(utt, Stream::kVideo, random_vec(rng, 16));
  }
  TrialList trials;
  for (int i = 0; i + 1 < 12; ++i) trials.push_back({utts[i], utts[i + 1], i % 2 == 0});

  ScorerSpec cos_audio;
  cos_audio.kind = ScorerSpec::Kind::kCosine;
  cos_audio.stream = Stream::kAudio;
  const ScoreSet a = evaluate_trials(store, trials, cos_audio);
  const ScoreSet b = evaluate_trials(store, trials, cos_audio);
  REQUIRE(a.scores.size() == trials.size());
  for (size_t i = 0; i < a.scores.size(); ++i) REQUIRE(a.scores[i] == b.scores[i]);
  for (size_t i = 0; i < trials.size(); ++i)
    REQUIRE(a.trials[i].enroll_utt == trials[i].enroll_utt);
  // recomputing one trial directly gives the same score
  CHECK(a.scores[3] == cosine_score(store.get(utts[3], Stream::kAudio),
                                    store.get(utts[4], Stream::kAudio)));

  ScorerSpec fused;
  fused.kind = ScorerSpec::Kind::kFusedFeature;
  CHECK(evaluate_trials(store, trials, fused).scores.size() == trials.size());

  trials.push_back({"missing_utt", utts[0], false});
  try {
    evaluate_trials(store, trials, cos_audio);
    FAIL("expected MissingEmbedding");
  } catch (const MissingEmbedding& e) {
    CHECK(std::string(e.what()).find("missing_utt") != std::string::npos);
  }
}

TEST_CASE("embedding store and score files round trip byte-identically") {
  const fs::path dir = fs::temp_directory_path() / "avlip_test_eval_io";
  fs::create_directories(dir);
  Rng rng(8);
  EmbeddingStore store;
  for (int i = 0; i < 5; ++i) {
    store.set("u" + std::to_string(i), Stream::kAudio, random_vec(rng, 8));
    if (i % 2 == 0) store.set("u" + std::to_string(i), Stream::kVideo, random_vec(rng, 6));
  }
  store.save((dir / "a.tsv").string());
  store.save((dir / "b.tsv").string());
  CHECK(slurp(dir / "a.tsv") == slurp(dir / "b.tsv"));

  const EmbeddingStore loaded = EmbeddingStore::load((dir / "a.tsv").string());
  REQUIRE(loaded.size() == store.size());
  loaded.save((dir / "c.tsv").string());
  CHECK(slurp(dir / "a.tsv") == slurp(dir / "c.tsv"));  // float round trip exact
  CHECK(loaded.get("u1", Stream::kAudio) == store.get("u1", Stream::kAudio));
  CHECK_FALSE(loaded.has("u1", Stream::kVideo));
  CHECK_THROWS_AS(loaded.get("u1", Stream::kVideo), MissingEmbedding);

  ScoreSet s = make_set({0.9, 0.3}, {0.5});
  save_scores((dir / "s.tsv").string(), s);
  const ScoreSet s2 = load_scores((dir / "s.tsv").string());
  REQUIRE(s2.scores.size() == 3);
  CHECK(s2.scores[0] == 0.9);
  CHECK(s2.trials[2].is_target == false);
}

TEST_CASE("znorm standardizes against a cohort") {
  ScoreSet cohort = make_set({1.0, 3.0}, {2.0, 2.0});
  ScoreSet s = make_set({2.0}, {4.0});
  const ScoreSet z = znorm(s, cohort);
  CHECK(std::abs(z.scores[0] - 0.0) < 1e-12);  // (2 - 2) / std
  CHECK(z.scores[1] > 0.0);
}

TEST_CASE("system report formatting") {
  const ScoreSet s = make_set({0.9, 0.8, 0.3}, {0.7, 0.2, 0.1});
  const SystemReport r = evaluate_system(s);
  CHECK(r.n_trials == 6);
  CHECK(r.n_target == 3);
  const std::string text = format_report({r}, 0.01);
  CHECK(text.find("unit") != std::string::npos);
  CHECK(text.find("33.3") != std::string::npos);
}

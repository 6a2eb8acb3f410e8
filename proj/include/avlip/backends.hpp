// avlip/backends.hpp

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

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "avlip/common.hpp"
#include "avlip/rng.hpp"

// Classical scoring backends: cosine similarity, two-covariance PLDA
// (speaker factor of fixed rank + full within-class covariance, trained by
// EM), and a diagonal GMM-UBM with relevance-MAP mean adaptation.

namespace avlip {

// ---------------------------------------------------------------------------
// Cosine
// ---------------------------------------------------------------------------

inline double cosine_score(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) raise<ShapeMismatch>("cosine of ", a.size(), " vs ", b.size());
  const double na = a.norm(), nb = b.norm();
  if (na <= 0.0 || nb <= 0.0) raise<ZeroVector>("cosine of zero-norm vector");
  return a.dot(b) / (na * nb);
}

template <typename T>
double cosine_score(const std::vector<T>& a, const std::vector<T>& b) {
  Eigen::VectorXd va(static_cast<int64_t>(a.size())), vb(static_cast<int64_t>(b.size()));
  for (size_t i = 0; i < a.size(); ++i) va(static_cast<int64_t>(i)) = static_cast<double>(a[i]);
  for (size_t i = 0; i < b.size(); ++i) vb(static_cast<int64_t>(i)) = static_cast<double>(b[i]);
  return cosine_score(va, vb);
}

// ---------------------------------------------------------------------------
// PLDA
// ---------------------------------------------------------------------------

struct PldaConfig {
  int rank = 150;
  int max_iters = 50;
  double tol = 1e-6;  // stop when the per-utterance log-likelihood gain drops below
  bool center = true;
  bool length_norm = true;
  int pca_dim = 0;  // optional PCA projection before PLDA; 0 disables
};

class PldaModel {
 public:
  /// rows of x are embeddings; labels[i] is the speaker index of row i.
  void train(const Eigen::MatrixXd& x, const std::vector<int>& labels,
             const PldaConfig& cfg) {
    cfg_ = cfg;
    const int64_t n = x.rows();
    int64_t dim = x.cols();
    if (static_cast<int64_t>(labels.size()) != n)
      raise<ShapeMismatch>("labels/rows mismatch");

    std::map<int, std::vector<int64_t>> by_spk;
    for (int64_t i = 0; i < n; ++i) by_spk[labels[static_cast<size_t>(i)]].push_back(i);
    bool any_multi = false;
    for (const auto& [spk, rows] : by_spk) any_multi |= rows.size() >= 2;
    if (by_spk.size() < 2 || !any_multi)
      raise<InsufficientData>("PLDA needs >= 2 speakers and a speaker with >= 2 utts");
    if (n <= cfg.rank)
      raise<InsufficientData>("PLDA needs more rows (", n, ") than rank (", cfg.rank, ")");

    // preprocessing chain: center -> length-norm -> optional PCA
    center_mean_ = cfg.center ? Eigen::VectorXd(x.colwise().mean())
                              : Eigen::VectorXd::Zero(dim);
    Eigen::MatrixXd z = x.rowwise() - center_mean_.transpose();
    if (cfg.length_norm) {
      for (int64_t i = 0; i < n; ++i) {
        const double nrm = z.row(i).norm();
        if (nrm > 0) z.row(i) *= std::sqrt(static_cast<double>(dim)) / nrm;
      }
    }
    if (cfg.pca_dim > 0 && cfg.pca_dim < dim) {
      const Eigen::MatrixXd cov = z.transpose() * z / static_cast<double>(n);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
      pca_ = es.eigenvectors().rightCols(cfg.pca_dim);  // ascending order
      z = z * pca_;
      dim = cfg.pca_dim;
    } else {
      pca_.resize(0, 0);
    }
    if (cfg.rank > dim)
      raise<RankTooHigh>("speaker-factor rank ", cfg.rank, " exceeds dimension ", dim);
    dim_ = dim;

    // per-speaker sufficient statistics on preprocessed data
    mean_ = z.colwise().mean();
    struct SpkStats {
      int64_t n = 0;
      Eigen::VectorXd s;
      Eigen::MatrixXd scatter;
    };
    std::vector<SpkStats> stats;
    stats.reserve(by_spk.size());
    for (const auto& [spk, rows] : by_spk) {
      SpkStats st;
      st.n = static_cast<int64_t>(rows.size());
      st.s = Eigen::VectorXd::Zero(dim);
      st.scatter = Eigen::MatrixXd::Zero(dim, dim);
      for (int64_t r : rows) {
        const Eigen::VectorXd v = z.row(r).transpose() - mean_;
        st.s += v;
        st.scatter += v * v.transpose();
      }
      stats.push_back(std::move(st));
    }
    Eigen::MatrixXd total_scatter = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& st : stats) total_scatter += st.scatter;

    // init: within-class covariance and scaled top between-class directions
    Eigen::MatrixXd between = Eigen::MatrixXd::Zero(dim, dim);
    within_ = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& st : stats) {
      const Eigen::VectorXd m = st.s / static_cast<double>(st.n);
      between += static_cast<double>(st.n) * m * m.transpose();
      within_ += st.scatter - static_cast<double>(st.n) * m * m.transpose();
    }
    between /= static_cast<double>(n);
    within_ /= static_cast<double>(n);
    floor_spd(within_);
    {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(between);
      f_.resize(dim, cfg.rank);
      for (int r = 0; r < cfg.rank; ++r) {
        const int64_t idx = dim - 1 - r;
        f_.col(r) = es.eigenvectors().col(idx) *
                    std::sqrt(std::max(es.eigenvalues()(idx), 1e-6));
      }
    }

    // EM on the factor model x = mu + F h + eps
    ll_trace_.clear();
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < cfg.max_iters; ++iter) {
      const Eigen::MatrixXd sigma_inv = invert_spd(within_);
      const Eigen::MatrixXd fti = f_.transpose() * sigma_inv;       // r x D
      const Eigen::MatrixXd psi = fti * f_;                          // r x r

      Eigen::MatrixXd acc_a = Eigen::MatrixXd::Zero(dim, cfg.rank);  // sum s E[h]'
      Eigen::MatrixXd acc_b = Eigen::MatrixXd::Zero(cfg.rank, cfg.rank);
      for (const auto& st : stats) {
        const Eigen::MatrixXd g =
            Eigen::MatrixXd::Identity(cfg.rank, cfg.rank) + static_cast<double>(st.n) * psi;
        const Eigen::MatrixXd c = g.llt().solve(
            Eigen::MatrixXd::Identity(cfg.rank, cfg.rank));
        const Eigen::VectorXd hbar = c * (fti * st.s);
        acc_a += st.s * hbar.transpose();
        acc_b += static_cast<double>(st.n) * (c + hbar * hbar.transpose());
      }
      f_ = acc_a * invert_spd(acc_b);
      within_ = (total_scatter - f_ * acc_a.transpose()) / static_cast<double>(n);
      within_ = 0.5 * (within_ + within_.transpose());
      floor_spd(within_);

      const double ll = marginal_ll(stats) / static_cast<double>(n);
      ll_trace_.push_back(ll);
      if (std::abs(ll - prev_ll) < cfg.tol) break;
      prev_ll = ll;
    }

    prepare_scoring();
    trained_ = true;
  }

  /// Log-likelihood ratio of same- vs different-speaker hypotheses for two
  /// embeddings; symmetric.
  double score(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    check_trained();
    const Eigen::VectorXd pa = preprocess(a);
    const Eigen::VectorXd pb = preprocess(b);
    return pa.dot(q_ * pa) + pb.dot(q_ * pb) + pa.dot(p_ * pb) + const_;
  }

  /// Batch scoring with per-utterance quadratic terms computed once.
  std::vector<double> score_pairs(
      const std::vector<Eigen::VectorXd>& embeddings,
      const std::vector<std::pair<int64_t, int64_t>>& pairs) const {
    check_trained();
    std::vector<Eigen::VectorXd> pre;
    pre.reserve(embeddings.size());
    std::vector<double> quad;
    quad.reserve(embeddings.size());
    for (const auto& e : embeddings) {
      pre.push_back(preprocess(e));
      quad.push_back(pre.back().dot(q_ * pre.back()));
    }
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& [i, j] : pairs)
      out.push_back(quad[static_cast<size_t>(i)] + quad[static_cast<size_t>(j)] +
                    pre[static_cast<size_t>(i)].dot(p_ * pre[static_cast<size_t>(j)]) +
                    const_);
    return out;
  }

  bool trained() const { return trained_; }
  int rank() const { return cfg_.rank; }
  int dim() const { return dim_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& speaker_subspace() const { return f_; }
  const Eigen::MatrixXd& within_covariance() const { return within_; }
  const std::vector<double>& ll_trace() const { return ll_trace_; }
  const PldaConfig& config() const { return cfg_; }

  /// Builds a scoring-only model from explicit parameters (test oracles and
  /// deserialization).
  static PldaModel from_parameters(const Eigen::VectorXd& mean, const Eigen::MatrixXd& f,
                                   const Eigen::MatrixXd& within, PldaConfig cfg = {}) {
    PldaModel m;
    m.cfg_ = cfg;
    m.cfg_.rank = static_cast<int>(f.cols());
    m.dim_ = static_cast<int>(f.rows());
    m.mean_ = mean;
    m.center_mean_ = Eigen::VectorXd::Zero(f.rows());
    m.cfg_.center = false;
    m.cfg_.length_norm = cfg.length_norm;
    m.f_ = f;
    m.within_ = within;
    m.prepare_scoring();
    m.trained_ = true;
    return m;
  }

  void save(const std::string& path) const {
    check_trained();
    std::ofstream os(path, std::ios::binary);
    if (!os) raise<IoError>("cannot open for writing: ", path);
    os << "AVLPLDA 1 " << dim_ << " " << cfg_.rank << " " << (cfg_.center ? 1 : 0) << " "
       << (cfg_.length_norm ? 1 : 0) << " " << pca_.cols() << " " << pca_.rows() << "\n";
    auto put = [&](const Eigen::MatrixXd& m) {
      os.write(reinterpret_cast<const char*>(m.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
    };
    put(center_mean_);
    put(mean_);
    put(f_);
    put(within_);
    if (pca_.size() > 0) put(pca_);
    if (!os) raise<IoError>("short write: ", path);
  }

  static PldaModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise<IoError>("cannot open: ", path);
    std::string magic;
    int version = 0, dim = 0, rank = 0, center = 0, lnorm = 0;
    int64_t pca_cols = 0, pca_rows = 0;
    is >> magic >> version >> dim >> rank >> center >> lnorm >> pca_cols >> pca_rows;
    if (magic != "AVLPLDA" || version != 1)
      raise<ParseError>("not a PLDA model file: ", path);
    is.get();  // newline
    PldaModel m;
    m.cfg_.rank = rank;
    m.cfg_.center = center != 0;
    m.cfg_.length_norm = lnorm != 0;
    m.cfg_.pca_dim = static_cast<int>(pca_cols);
    m.dim_ = dim;
    auto get = [&](Eigen::MatrixXd& mat, int64_t r, int64_t c) {
      mat.resize(r, c);
      is.read(reinterpret_cast<char*>(mat.data()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(r * c)));
    };
    Eigen::MatrixXd tmp;
    const int64_t raw_dim = (pca_cols > 0) ? pca_rows : dim;
    get(tmp, raw_dim, 1);
    m.center_mean_ = tmp;
    get(tmp, dim, 1);
    m.mean_ = tmp;
    get(m.f_, dim, rank);
    get(m.within_, dim, dim);
    if (pca_cols > 0) get(m.pca_, pca_rows, pca_cols);
    if (!is) raise<ParseError>("truncated PLDA model: ", path);
    m.prepare_scoring();
    m.trained_ = true;
    return m;
  }

 private:
  void check_trained() const {
    if (!trained_) raise<ModelNotTrained>("PLDA model not trained");
  }

  Eigen::VectorXd preprocess(const Eigen::VectorXd& x) const {
    if ((pca_.size() > 0 && x.size() != pca_.rows()) ||
        (pca_.size() == 0 && x.size() != dim_))
      raise<ShapeMismatch>("embedding dim ", x.size(), " does not match model");
    Eigen::VectorXd z = x - center_mean_;
    if (cfg_.length_norm) {
      const double nrm = z.norm();
      if (nrm > 0) z *= std::sqrt(static_cast<double>(z.size())) / nrm;
    }
    if (pca_.size() > 0) z = pca_.transpose() * z;
    return z - mean_;
  }

  static Eigen::MatrixXd invert_spd(const Eigen::MatrixXd& m) {
    return m.llt().solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  }

  // eigenvalue floor keeps the within covariance invertible when N is small
  // relative to the dimension
  static void floor_spd(Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    const double floor = std::max(es.eigenvalues().maxCoeff(), 1e-300) * 1e-8;
    if (es.eigenvalues().minCoeff() >= floor) return;
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
    m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
  }

  template <typename Stats>
  double marginal_ll(const std::vector<Stats>& stats) const {
    const Eigen::MatrixXd phi = f_ * f_.transpose();
    const Eigen::MatrixXd sigma_inv = invert_spd(within_);
    const double logdet_sigma = spd_logdet(within_);
    std::map<int64_t, std::pair<Eigen::MatrixXd, double>> by_n;  // inv, logdet
    double ll = 0.0;
    const double d = static_cast<double>(dim_);
    for (const auto& st : stats) {
      auto it = by_n.find(st.n);
      if (it == by_n.end()) {
        const Eigen::MatrixXd tot = within_ + static_cast<double>(st.n) * phi;
        it = by_n.emplace(st.n, std::make_pair(invert_spd(tot), spd_logdet(tot))).first;
      }
      const double nn = static_cast<double>(st.n);
      const double quad = (sigma_inv.cwiseProduct(st.scatter)).sum() -
                          st.s.dot(sigma_inv * st.s) / nn +
                          st.s.dot(it->second.first * st.s) / nn;
      ll += -0.5 * (nn * d * std::log(2.0 * M_PI) + it->second.second +
                    (nn - 1.0) * logdet_sigma + quad);
    }
    return ll;
  }

  static double spd_logdet(const Eigen::MatrixXd& m) {
    const Eigen::LLT<Eigen::MatrixXd> llt(m);
    double ld = 0.0;
    for (int64_t i = 0; i < m.rows(); ++i)
      ld += 2.0 * std::log(llt.matrixL()(i, i));
    return ld;
  }

  void prepare_scoring() {
    const Eigen::MatrixXd phi = f_ * f_.transpose();
    const Eigen::MatrixXd tot = phi + within_;
    const Eigen::MatrixXd lambda = invert_spd(tot);
    const Eigen::MatrixXd inner = tot - phi * lambda * phi;
    const Eigen::MatrixXd gamma = invert_spd(inner);
    q_ = 0.5 * (lambda - gamma);
    p_ = gamma * phi * lambda;
    p_ = 0.5 * (p_ + p_.transpose());
    const_ = 0.5 * (spd_logdet(tot) - spd_logdet(inner));
  }

  PldaConfig cfg_;
  int dim_ = 0;
  bool trained_ = false;
  Eigen::VectorXd center_mean_;  // raw-space centering
  Eigen::MatrixXd pca_;          // raw-dim x pca_dim projection (may be empty)
  Eigen::VectorXd mean_;         // model mean in the processed space
  Eigen::MatrixXd f_;            // speaker subspace, dim x rank
  Eigen::MatrixXd within_;       // within-class covariance
  std::vector<double> ll_trace_;

  // scoring cache
  Eigen::MatrixXd q_, p_;
  double const_ = 0.0;
};

inline PldaModel train_plda(const Eigen::MatrixXd& embeddings, const std::vector<int>& labels,
                            const PldaConfig& cfg = {}) {
  PldaModel m;
  m.train(embeddings, labels, cfg);
  return m;
}

// ---------------------------------------------------------------------------
// GMM-UBM
// ---------------------------------------------------------------------------

struct GmmConfig {
  int mixtures = 64;
  int kmeans_iters = 10;
  int max_iters = 100;
  double tol = 1e-5;           // per-frame log-likelihood gain
  double floor_factor = 1e-4;  // variance floor as a fraction of global variance
  uint64_t seed = 0;
};

struct GmmModel {
  Eigen::VectorXd weights;  // K, sums to 1
  Eigen::MatrixXd means;    // K x D
  Eigen::MatrixXd vars;     // K x D, diagonal covariances

  int64_t mixtures() const { return weights.size(); }
  int64_t dim() const { return means.cols(); }

  /// log p(x) via logsumexp over weighted diagonal Gaussians.
  double log_likelihood(const Eigen::VectorXd& x) const {
    const int64_t k = mixtures();
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> lp(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i) {
      double e = std::log(weights(i));
      for (int64_t d = 0; d < means.cols(); ++d) {
        const double diff = x(d) - means(i, d);
        e += -0.5 * (std::log(2.0 * M_PI * vars(i, d)) + diff * diff / vars(i, d));
      }
      lp[static_cast<size_t>(i)] = e;
      best = std::max(best, e);
    }
    double acc = 0.0;
    for (double v : lp) acc += std::exp(v - best);
    return best + std::log(acc);
  }

  /// Responsibilities for one frame (posterior over components).
  Eigen::VectorXd posteriors(const Eigen::VectorXd& x) const {
    const int64_t k = mixtures();
    Eigen::VectorXd lp(k);
    double best = -std::numeric_limits<double>::infinity();
    for (int64_t i = 0; i < k; ++i) {
      double e = std::log(weights(i));
      for (int64_t d = 0; d < means.cols(); ++d) {
        const double diff = x(d) - means(i, d);
        e += -0.5 * (std::log(2.0 * M_PI * vars(i, d)) + diff * diff / vars(i, d));
      }
      lp(i) = e;
      best = std::max(best, e);
    }
    Eigen::VectorXd out = (lp.array() - best).exp();
    return out / out.sum();
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) raise<IoError>("cannot open for writing: ", path);
    os << "AVLGMM 1 " << mixtures() << " " << dim() << "\n";
    auto put = [&](const Eigen::MatrixXd& m) {
      os.write(reinterpret_cast<const char*>(m.data()),
               static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(m.size())));
    };
    Eigen::MatrixXd w = weights;
    put(w);
    put(means);
    put(vars);
    if (!os) raise<IoError>("short write: ", path);
  }

  static GmmModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) raise<IoError>("cannot open: ", path);
    std::string magic;
    int version = 0;
    int64_t k = 0, d = 0;
    is >> magic >> version >> k >> d;
    if (magic != "AVLGMM" || version != 1) raise<ParseError>("not a GMM file: ", path);
    is.get();
    GmmModel m;
    Eigen::MatrixXd w(k, 1);
    is.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(k)));
    m.weights = w;
    m.means.resize(k, d);
    is.read(reinterpret_cast<char*>(m.means.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(k * d)));
    m.vars.resize(k, d);
    is.read(reinterpret_cast<char*>(m.vars.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(k * d)));
    if (!is) raise<ParseError>("truncated GMM file: ", path);
    return m;
  }
};

struct UbmTrainResult {
  GmmModel model;
  std::vector<double> ll_trace;  // per-frame average log-likelihood per iteration
};

/// Diagonal-covariance GMM via seeded k-means init + EM.
inline UbmTrainResult train_ubm(const Eigen::MatrixXd& frames, const GmmConfig& cfg = {}) {
  const int64_t n = frames.rows(), d = frames.cols();
  const int64_t k = cfg.mixtures;
  if (k < 1) raise<ConfigError>("mixtures must be >= 1");
  if (n < 2 * k)
    raise<InsufficientData>("need at least ", 2 * k, " frames for ", k, " mixtures, got ", n);

  Rng rng(cfg.seed);
  const Eigen::VectorXd global_mean = frames.colwise().mean();
  Eigen::VectorXd global_var(d);
  for (int64_t j = 0; j < d; ++j) {
    const double m = global_mean(j);
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double diff = frames(i, j) - m;
      acc += diff * diff;
    }
    global_var(j) = acc / static_cast<double>(n);
  }
  const Eigen::VectorXd var_floor =
      (global_var * cfg.floor_factor).cwiseMax(1e-20);

  // k-means init on distinct seeded rows
  GmmModel gmm;
  gmm.means.resize(k, d);
  const auto init_rows = rng.sample_indices(n, k);
  for (int64_t i = 0; i < k; ++i) gmm.means.row(i) = frames.row(init_rows[static_cast<size_t>(i)]);
  std::vector<int64_t> assign(static_cast<size_t>(n), 0);
  for (int it = 0; it < cfg.kmeans_iters; ++it) {
    for (int64_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int64_t bj = 0;
      for (int64_t j = 0; j < k; ++j) {
        const double dist = (frames.row(i) - gmm.means.row(j)).squaredNorm();
        if (dist < best) {
          best = dist;
          bj = j;
        }
      }
      assign[static_cast<size_t>(i)] = bj;
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (int64_t i = 0; i < n; ++i) {
      sums.row(assign[static_cast<size_t>(i)]) += frames.row(i);
      counts(assign[static_cast<size_t>(i)]) += 1.0;
    }
    for (int64_t j = 0; j < k; ++j) {
      if (counts(j) > 0) gmm.means.row(j) = sums.row(j) / counts(j);
      else gmm.means.row(j) = frames.row(static_cast<int64_t>(rng.uniform_u64(static_cast<uint64_t>(n))));
    }
  }
  gmm.weights.resize(k);
  gmm.vars.resize(k, d);
  {
    Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (int64_t i = 0; i < n; ++i) {
      const int64_t j = assign[static_cast<size_t>(i)];
      const Eigen::VectorXd diff = frames.row(i).transpose() - gmm.means.row(j).transpose();
      sq.row(j) += diff.cwiseProduct(diff).transpose();
      counts(j) += 1.0;
    }
    for (int64_t j = 0; j < k; ++j) {
      gmm.weights(j) = std::max(counts(j), 1.0) / static_cast<double>(n);
      if (counts(j) >= 2)
        gmm.vars.row(j) = (sq.row(j) / counts(j)).cwiseMax(var_floor.transpose());
      else
        gmm.vars.row(j) = global_var.transpose().cwiseMax(var_floor.transpose());
    }
    gmm.weights /= gmm.weights.sum();
  }

  // EM
  UbmTrainResult result;
  Eigen::MatrixXd resp(n, k);
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    double ll = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      Eigen::VectorXd lp(k);
      double best = -std::numeric_limits<double>::infinity();
      for (int64_t j = 0; j < k; ++j) {
        double e = std::log(gmm.weights(j));
        for (int64_t c = 0; c < d; ++c) {
          const double diff = frames(i, c) - gmm.means(j, c);
          e += -0.5 * (std::log(2.0 * M_PI * gmm.vars(j, c)) + diff * diff / gmm.vars(j, c));
        }
        lp(j) = e;
        best = std::max(best, e);
      }
      const double denom = (lp.array() - best).exp().sum();
      ll += best + std::log(denom);
      resp.row(i) = ((lp.array() - best).exp() / denom).transpose();
    }
    result.ll_trace.push_back(ll / static_cast<double>(n));

    Eigen::VectorXd nk = resp.colwise().sum();
    for (int64_t j = 0; j < k; ++j) {
      if (nk(j) < 1e-6) {
        // dead component: reseed on a random frame, keep global variance
        warn("degenerate GMM component ", j, "; reseeding");
        const int64_t row = static_cast<int64_t>(rng.uniform_u64(static_cast<uint64_t>(n)));
        gmm.means.row(j) = frames.row(row);
        gmm.vars.row(j) = global_var.transpose().cwiseMax(var_floor.transpose());
        gmm.weights(j) = 1.0 / static_cast<double>(n);
        continue;
      }
      gmm.weights(j) = nk(j) / static_cast<double>(n);
      const Eigen::VectorXd mean_j = (resp.col(j).transpose() * frames).transpose() / nk(j);
      gmm.means.row(j) = mean_j.transpose();
      Eigen::VectorXd var_j = Eigen::VectorXd::Zero(d);
      for (int64_t i = 0; i < n; ++i) {
        const Eigen::VectorXd diff = frames.row(i).transpose() - mean_j;
        var_j += resp(i, j) * diff.cwiseProduct(diff);
      }
      gmm.vars.row(j) = (var_j / nk(j)).cwiseMax(var_floor).transpose();
    }
    gmm.weights /= gmm.weights.sum();

    if (result.ll_trace.size() >= 2 &&
        std::abs(result.ll_trace.back() - result.ll_trace[result.ll_trace.size() - 2]) <
            cfg.tol)
      break;
  }
  result.model = std::move(gmm);
  return result;
}

/// Means-only relevance MAP: adapted mean = alpha * posterior data mean +
/// (1 - alpha) * UBM mean, alpha = n_k / (n_k + relevance).  Weights and
/// covariances are copied from the UBM.
inline GmmModel map_adapt(const GmmModel& ubm, const Eigen::MatrixXd& frames,
                          double relevance = 16.0) {
  if (frames.rows() == 0) raise<EmptyData>("no adaptation frames");
  if (frames.cols() != ubm.dim())
    raise<ShapeMismatch>("frames dim ", frames.cols(), " vs UBM dim ", ubm.dim());
  const int64_t n = frames.rows(), k = ubm.mixtures(), d = ubm.dim();
  Eigen::VectorXd nk = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
  for (int64_t i = 0; i < n; ++i) {
    const Eigen::VectorXd x = frames.row(i).transpose();
    const Eigen::VectorXd post = ubm.posteriors(x);
    nk += post;
    sums += post * x.transpose();
  }
  GmmModel out = ubm;
  for (int64_t j = 0; j < k; ++j) {
    if (nk(j) <= 0.0) continue;  // no evidence: keep the UBM mean
    const Eigen::VectorXd data_mean = sums.row(j).transpose() / nk(j);
    const double alpha = nk(j) / (nk(j) + relevance);
    out.means.row(j) =
        (alpha * data_mean + (1.0 - alpha) * ubm.means.row(j).transpose()).transpose();
  }
  return out;
}

/// Mean over frames of log p(x|spk) - log p(x|ubm).
inline double gmm_ubm_score(const GmmModel& ubm, const GmmModel& spk,
                            const Eigen::MatrixXd& frames) {
  if (ubm.mixtures() != spk.mixtures() || ubm.dim() != spk.dim())
    raise<ShapeMismatch>("UBM and speaker model shapes differ");
  if (frames.cols() != ubm.dim())
    raise<ShapeMismatch>("frames dim ", frames.cols(), " vs model dim ", ubm.dim());
  if (frames.rows() == 0) raise<EmptyData>("no test frames");
  double acc = 0.0;
  for (int64_t i = 0; i < frames.rows(); ++i) {
    const Eigen::VectorXd x = frames.row(i).transpose();
    acc += spk.log_likelihood(x) - ubm.log_likelihood(x);
  }
  return acc / static_cast<double>(frames.rows());
}

}  // namespace avlip

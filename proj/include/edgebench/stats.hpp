#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "edgebench/util.hpp"

namespace edgebench {

// raters x items grid with possible missing cells. Items may be anything
// (model x question, or model x question x criterion).
struct RatingMatrix {
  std::vector<std::string> raters;
  std::vector<std::string> items;
  std::vector<std::vector<std::optional<double>>> values;  // [rater][item]

  size_t rater_count() const { return raters.size(); }
  size_t item_count() const { return items.size(); }

  void check() const {
    if (raters.size() < 2) throw Error("rating matrix needs >= 2 raters");
    if (items.size() < 2) throw Error("rating matrix needs >= 2 items");
    if (values.size() != raters.size()) throw Error("rating matrix row count mismatch");
    for (const auto& row : values)
      if (row.size() != items.size()) throw Error("rating matrix column count mismatch");
    for (size_t i = 0; i < items.size(); ++i) {
      size_t n = 0;
      for (size_t r = 0; r < raters.size(); ++r)
        if (values[r][i]) ++n;
      if (n >= 2) return;
    }
    throw Error("no item rated by >= 2 raters");
  }
};

struct PairedSeries {
  std::vector<double> x;
  std::vector<double> y;

  size_t size() const { return x.size(); }

  void check(size_t min_len = 3) const {
    if (x.size() != y.size()) throw Error("paired series length mismatch");
    if (x.size() < min_len)
      throw Error("paired series needs >= " + std::to_string(min_len) + " pairs");
    for (double v : x)
      if (!std::isfinite(v)) throw Error("non-finite value in series x");
    for (double v : y)
      if (!std::isfinite(v)) throw Error("non-finite value in series y");
  }
};

// Krippendorff's alpha, interval metric: delta^2(v, v') = (v - v')^2.
// Computed through the coincidence-matrix formulation over distinct values;
// missing cells are handled natively by pairing within items.
inline double krippendorff_alpha_interval(const RatingMatrix& m) {
  m.check();
  // gather per-item value lists; only items with >= 2 ratings are pairable
  std::vector<std::vector<double>> units;
  for (size_t i = 0; i < m.item_count(); ++i) {
    std::vector<double> vals;
    for (size_t r = 0; r < m.rater_count(); ++r)
      if (m.values[r][i]) vals.push_back(*m.values[r][i]);
    if (vals.size() >= 2) units.push_back(std::move(vals));
  }
  if (units.empty()) throw Error("no-pairable-data");

  std::set<double> distinct;
  for (const auto& u : units)
    for (double v : u) distinct.insert(v);
  std::vector<double> vals(distinct.begin(), distinct.end());
  const size_t c = vals.size();
  auto index_of = [&](double v) {
    return static_cast<size_t>(std::lower_bound(vals.begin(), vals.end(), v) - vals.begin());
  };

  // coincidence matrix o[c][k]: expected ordered within-unit pairs
  std::vector<std::vector<double>> o(c, std::vector<double>(c, 0.0));
  double n_total = 0;
  for (const auto& u : units) {
    const double mu = static_cast<double>(u.size());
    n_total += mu;
    std::map<size_t, double> counts;
    for (double v : u) counts[index_of(v)] += 1.0;
    for (const auto& [ci, nc] : counts) {
      for (const auto& [ki, nk] : counts) {
        double pairs = (ci == ki) ? nc * (nc - 1.0) : nc * nk;
        o[ci][ki] += pairs / (mu - 1.0);
      }
    }
  }

  std::vector<double> margin(c, 0.0);
  for (size_t i = 0; i < c; ++i)
    for (size_t k = 0; k < c; ++k) margin[i] += o[i][k];

  double d_observed = 0, d_expected = 0;
  for (size_t i = 0; i < c; ++i) {
    for (size_t k = 0; k < c; ++k) {
      const double d2 = (vals[i] - vals[k]) * (vals[i] - vals[k]);
      d_observed += o[i][k] * d2;
      d_expected += margin[i] * margin[k] * d2;
    }
  }
  d_observed /= n_total;
  d_expected /= n_total * (n_total - 1.0);
  if (d_expected == 0.0) return 1.0;  // no variation anywhere: perfect agreement
  return 1.0 - d_observed / d_expected;
}

struct IccResult {
  std::optional<double> icc1;  // ICC(C,1), single-rater consistency
  std::optional<double> icck;  // ICC(C,k), mean-of-k-raters consistency
  std::optional<double> icck_ci_low;
  std::optional<double> icck_ci_high;
  size_t n_items = 0;  // items surviving listwise deletion
  size_t k_raters = 0;

  bool defined() const { return icc1.has_value(); }
};

// Two-way mixed, consistency definition, via ANOVA mean squares:
//   ICC(C,1) = (MS_R - MS_E) / (MS_R + (k-1) MS_E)
//   ICC(C,k) = (MS_R - MS_E) / MS_R
// Items with any missing cell are dropped (listwise deletion). The 95% CI for
// ICC(C,k) uses F-distribution bounds on MS_R/MS_E.
inline IccResult icc_consistency(const RatingMatrix& m) {
  m.check();
  const size_t k = m.rater_count();
  std::vector<std::vector<double>> rows;  // [item][rater], complete cases only
  for (size_t i = 0; i < m.item_count(); ++i) {
    std::vector<double> row;
    for (size_t r = 0; r < k; ++r) {
      if (!m.values[r][i]) break;
      row.push_back(*m.values[r][i]);
    }
    if (row.size() == k) rows.push_back(std::move(row));
  }
  const size_t n = rows.size();
  if (n < 3) throw Error("icc needs >= 3 complete items after listwise deletion");

  double grand = 0;
  for (const auto& row : rows)
    for (double v : row) grand += v;
  grand /= static_cast<double>(n * k);

  std::vector<double> item_mean(n, 0), rater_mean(k, 0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t r = 0; r < k; ++r) {
      item_mean[i] += rows[i][r];
      rater_mean[r] += rows[i][r];
    }
    item_mean[i] /= static_cast<double>(k);
  }
  for (size_t r = 0; r < k; ++r) rater_mean[r] /= static_cast<double>(n);

  double ss_rows = 0, ss_err = 0;
  for (size_t i = 0; i < n; ++i) ss_rows += (item_mean[i] - grand) * (item_mean[i] - grand);
  ss_rows *= static_cast<double>(k);
  for (size_t i = 0; i < n; ++i)
    for (size_t r = 0; r < k; ++r) {
      const double resid = rows[i][r] - item_mean[i] - rater_mean[r] + grand;
      ss_err += resid * resid;
    }
  const double df_rows = static_cast<double>(n - 1);
  const double df_err = static_cast<double>((n - 1) * (k - 1));
  const double ms_rows = ss_rows / df_rows;
  const double ms_err = ss_err / df_err;

  IccResult out;
  out.n_items = n;
  out.k_raters = k;
  if (ms_rows == 0.0 && ms_err == 0.0) return out;  // degenerate: all values equal

  out.icc1 = (ms_rows - ms_err) / (ms_rows + (static_cast<double>(k) - 1.0) * ms_err);
  out.icck = (ms_rows - ms_err) / ms_rows;

  if (ms_err > 0.0) {
    const double f_obs = ms_rows / ms_err;
    boost::math::fisher_f_distribution<double> f_lo(df_rows, df_err);
    boost::math::fisher_f_distribution<double> f_hi(df_err, df_rows);
    const double fl = f_obs / boost::math::quantile(f_lo, 0.975);
    const double fu = f_obs * boost::math::quantile(f_hi, 0.975);
    out.icck_ci_low = 1.0 - 1.0 / fl;
    out.icck_ci_high = 1.0 - 1.0 / fu;
  }
  return out;
}

// Spearman-Brown step-up: reliability of the mean of k raters given
// single-rater reliability.
inline double spearman_brown(double icc1, size_t k) {
  const double kk = static_cast<double>(k);
  return kk * icc1 / (1.0 + (kk - 1.0) * icc1);
}

struct PearsonResult {
  double r = 0;
  double p_value = 0;  // two-sided, t-distribution with K-2 df
  size_t n = 0;
};

inline PearsonResult pearson(const PairedSeries& p) {
  p.check(3);
  const size_t n = p.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    mx += p.x[i];
    my += p.y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = p.x[i] - mx;
    const double dy = p.y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("zero-variance series");
  double r = sxy / std::sqrt(sxx * syy);
  r = std::clamp(r, -1.0, 1.0);

  PearsonResult out;
  out.r = r;
  out.n = n;
  const double df = static_cast<double>(n - 2);
  if (std::abs(r) >= 1.0) {
    out.p_value = 0.0;
  } else {
    const double t = r * std::sqrt(df / (1.0 - r * r));
    boost::math::students_t_distribution<double> dist(df);
    out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  }
  return out;
}

struct MadResult {
  double mad = 0;          // mean |x_i - y_i|
  double signed_mean = 0;  // mean (x_i - y_i); exposes systematic direction
};

inline MadResult mean_absolute_difference(const PairedSeries& p) {
  p.check(1);
  MadResult out;
  for (size_t i = 0; i < p.size(); ++i) {
    const double d = p.x[i] - p.y[i];
    out.mad += std::abs(d);
    out.signed_mean += d;
  }
  out.mad /= static_cast<double>(p.size());
  out.signed_mean /= static_cast<double>(p.size());
  return out;
}

// Shifts each rater's ratings by (grand mean - rater mean). The grand mean is
// preserved exactly; output values may leave the original scale (re-clamping
// would re-introduce disagreement).
inline RatingMatrix bias_correct(const RatingMatrix& m) {
  m.check();
  double grand = 0;
  size_t n_total = 0;
  std::vector<double> rater_sum(m.rater_count(), 0);
  std::vector<size_t> rater_n(m.rater_count(), 0);
  for (size_t r = 0; r < m.rater_count(); ++r) {
    for (size_t i = 0; i < m.item_count(); ++i) {
      if (!m.values[r][i]) continue;
      rater_sum[r] += *m.values[r][i];
      ++rater_n[r];
      grand += *m.values[r][i];
      ++n_total;
    }
    if (rater_n[r] == 0) throw Error("rater with no ratings: " + m.raters[r]);
  }
  grand /= static_cast<double>(n_total);

  RatingMatrix out = m;
  for (size_t r = 0; r < m.rater_count(); ++r) {
    const double offset = grand - rater_sum[r] / static_cast<double>(rater_n[r]);
    for (size_t i = 0; i < m.item_count(); ++i)
      if (out.values[r][i]) *out.values[r][i] += offset;
  }
  return out;
}

// Long-format ratings: one (rater, item, criterion, score) row per line.
struct RatingRow {
  std::string rater;
  std::string item;
  std::string criterion;
  double score = 0;
};

inline std::vector<RatingRow> parse_ratings_csv(const std::string& text) {
  auto rows = parse_csv(text);
  std::vector<RatingRow> out;
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    if (row.size() < 4) throw Error("ratings CSV row needs 4 columns: rater,item,criterion,score");
    if (i == 0 && to_lower(trim(row[0])) == "rater") continue;  // header
    out.push_back({trim(row[0]), trim(row[1]), trim(row[2]), std::stod(trim(row[3]))});
  }
  return out;
}

// Builds a rater x item matrix. With `criterion` empty, items are
// item|criterion composites so every score lands in its own cell; otherwise
// rows are filtered to that criterion.
inline RatingMatrix build_rating_matrix(const std::vector<RatingRow>& rows,
                                        const std::string& criterion = {}) {
  std::vector<std::string> raters, items;
  std::map<std::string, size_t> rater_ix, item_ix;
  auto intern = [](std::vector<std::string>& names, std::map<std::string, size_t>& ix,
                   const std::string& name) {
    auto it = ix.find(name);
    if (it != ix.end()) return it->second;
    names.push_back(name);
    return ix[name] = names.size() - 1;
  };
  std::vector<std::tuple<size_t, size_t, double>> cells;
  for (const auto& row : rows) {
    if (!criterion.empty() && row.criterion != criterion) continue;
    std::string item = criterion.empty() && !row.criterion.empty()
                           ? row.item + "|" + row.criterion
                           : row.item;
    cells.emplace_back(intern(raters, rater_ix, row.rater), intern(items, item_ix, item),
                       row.score);
  }
  RatingMatrix m;
  m.raters = raters;
  m.items = items;
  m.values.assign(raters.size(), std::vector<std::optional<double>>(items.size()));
  for (const auto& [r, i, v] : cells) m.values[r][i] = v;
  return m;
}

inline std::set<std::string> criteria_in(const std::vector<RatingRow>& rows) {
  std::set<std::string> out;
  for (const auto& row : rows)
    if (!row.criterion.empty()) out.insert(row.criterion);
  return out;
}

inline PairedSeries parse_paired_csv(const std::string& text) {
  auto rows = parse_csv(text);
  PairedSeries p;
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() == 1 && trim(row[0]).empty()) continue;
    if (row.size() < 2) throw Error("paired CSV row needs 2 columns");
    char* end = nullptr;
    std::string a = trim(row[0]);
    std::strtod(a.c_str(), &end);
    if (i == 0 && end == a.c_str()) continue;  // header
    p.x.push_back(std::stod(a));
    p.y.push_back(std::stod(trim(row[1])));
  }
  return p;
}

}  // namespace edgebench

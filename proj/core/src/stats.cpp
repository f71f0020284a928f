#include "rankguard/stats.hpp"

#include "rankguard/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace rankguard::stats {

double missing() noexcept { return std::numeric_limits<double>::quiet_NaN(); }

bool is_missing(double x) noexcept { return std::isnan(x); }

double mean(std::span<const double> v) {
    if (v.empty()) throw InvalidValue("mean of empty vector");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double sample_std(std::span<const double> v) {
    if (v.size() < 2) throw InvalidValue("sample_std needs >= 2 values");
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double median(std::span<const double> v) { return quantile(v, 0.5); }

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        // 1-based ranks i+1 .. j+1 share the average (i + j)/2 + 1.
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

std::vector<double> percentile_rank(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) throw DegenerateCrossSection("percentile_rank needs N >= 2");
    for (double x : values) {
        if (!std::isfinite(x)) throw InvalidValue("percentile_rank: non-finite input");
    }
    std::vector<double> out = average_ranks(values);
    const double denom = static_cast<double>(n - 1);
    for (double& r : out) r = (r - 1.0) / denom;
    return out;
}

std::optional<double> try_pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidValue("pearson: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) return std::nullopt;
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

std::optional<double> try_spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InvalidValue("spearman: length mismatch");
    if (x.size() < 3) return std::nullopt;
    const std::vector<double> rx = percentile_rank(x);
    const std::vector<double> ry = percentile_rank(y);
    return try_pearson(rx, ry);
}

double spearman(std::span<const double> x, std::span<const double> y) {
    const auto r = try_spearman(x, y);
    if (!r) throw UndefinedCorrelation("spearman undefined (constant vector or n < 3)");
    return *r;
}

std::optional<double> try_auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw InvalidValue("auroc: length mismatch");
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw InvalidValue("auroc: non-finite score");
        if (labels[i] != 0 && labels[i] != 1) throw InvalidValue("auroc: labels must be 0/1");
        (labels[i] == 1 ? n_pos : n_neg)++;
    }
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const std::vector<double> ranks = average_ranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 1) rank_sum_pos += ranks[i];
    }
    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    const auto r = try_auroc(scores, labels);
    if (!r) throw UndefinedAUROC("auroc undefined (single-class labels)");
    return *r;
}

std::vector<double> ewma(std::span<const double> series, double halflife, int min_periods) {
    if (halflife <= 0.0) throw InvalidValue("ewma: halflife must be > 0");
    if (min_periods < 1) throw InvalidValue("ewma: min_periods must be >= 1");
    const double decay = std::exp(-std::numbers::ln2 / halflife); // = 1 - lambda
    std::vector<double> out(series.size(), missing());
    double num = 0.0, den = 0.0;
    long seen = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double x = series[i];
        if (!is_missing(x)) {
            num = num * decay + x;
            den = den * decay + 1.0;
            ++seen;
        }
        if (seen >= min_periods) out[i] = num / den;
    }
    return out;
}

std::vector<double> expanding_zscore(std::span<const double> series, int min_periods,
                                     double std_floor) {
    if (min_periods < 2) throw InvalidValue("expanding_zscore: min_periods must be >= 2");
    std::vector<double> out(series.size(), missing());
    double sum = 0.0, sumsq = 0.0;
    long n = 0;
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double x = series[i];
        if (is_missing(x)) continue;
        sum += x;
        sumsq += x * x;
        ++n;
        if (n < min_periods) continue;
        const double m = sum / static_cast<double>(n);
        const double var = std::max(0.0, (sumsq - sum * m) / static_cast<double>(n - 1));
        const double sd = std::max(std::sqrt(var), std_floor);
        out[i] = (x - m) / sd;
    }
    return out;
}

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw InvalidValue("ks_two_sample: empty sample");
    std::vector<double> sa(a.begin(), a.end());
    std::vector<double> sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double na = static_cast<double>(sa.size());
    const double nb = static_cast<double>(sb.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < sa.size() || j < sb.size()) {
        double v;
        if (i == sa.size()) v = sb[j];
        else if (j == sb.size()) v = sa[i];
        else v = std::min(sa[i], sb[j]);
        while (i < sa.size() && sa[i] == v) ++i;
        while (j < sb.size() && sb[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

std::vector<double> ols_residualize(std::span<const double> y,
                                    const std::vector<std::vector<double>>& x_cols) {
    const std::size_t n = y.size();
    const std::size_t k = x_cols.size() + 1; // intercept augmented
    if (n < k + 1) throw SingularDesign("ols_residualize: rows < columns + 1");
    for (const auto& col : x_cols) {
        if (col.size() != n) throw InvalidValue("ols_residualize: column length mismatch");
    }

    // Column-major design matrix, intercept first.
    std::vector<double> a(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i] = 1.0;
    for (std::size_t c = 0; c < x_cols.size(); ++c) {
        for (std::size_t i = 0; i < n; ++i) a[(c + 1) * n + i] = x_cols[c][i];
    }

    std::vector<double> q_y(y.begin(), y.end());
    std::vector<double> beta(k, 0.0);
    std::vector<double> hh(n, 0.0); // current Householder vector

    // In-place Householder QR, applying reflections to y as we go.
    for (std::size_t c = 0; c < k; ++c) {
        double norm = 0.0;
        for (std::size_t i = c; i < n; ++i) {
            const double v = a[c * n + i];
            norm += v * v;
        }
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw SingularDesign("ols_residualize: rank-deficient design");
        const double pivot = a[c * n + c];
        const double alpha = pivot >= 0.0 ? -norm : norm;
        double vnorm_sq = 0.0;
        for (std::size_t i = c; i < n; ++i) {
            hh[i] = a[c * n + i];
            if (i == c) hh[i] -= alpha;
            vnorm_sq += hh[i] * hh[i];
        }
        if (vnorm_sq < 1e-300) throw SingularDesign("ols_residualize: rank-deficient design");
        // Reflect remaining columns and y.
        for (std::size_t cc = c; cc < k; ++cc) {
            double dot = 0.0;
            for (std::size_t i = c; i < n; ++i) dot += hh[i] * a[cc * n + i];
            const double f = 2.0 * dot / vnorm_sq;
            for (std::size_t i = c; i < n; ++i) a[cc * n + i] -= f * hh[i];
        }
        double dot_y = 0.0;
        for (std::size_t i = c; i < n; ++i) dot_y += hh[i] * q_y[i];
        const double fy = 2.0 * dot_y / vnorm_sq;
        for (std::size_t i = c; i < n; ++i) q_y[i] -= fy * hh[i];
    }

    // Back-substitution on the upper-triangular R.
    for (std::size_t cc = k; cc-- > 0;) {
        double s = q_y[cc];
        for (std::size_t c2 = cc + 1; c2 < k; ++c2) s -= a[c2 * n + cc] * beta[c2];
        const double r = a[cc * n + cc];
        if (std::abs(r) < 1e-12) throw SingularDesign("ols_residualize: rank-deficient design");
        beta[cc] = s / r;
    }

    std::vector<double> resid(y.begin(), y.end());
    for (std::size_t i = 0; i < n; ++i) {
        double fit = beta[0];
        for (std::size_t c = 0; c < x_cols.size(); ++c) fit += beta[c + 1] * x_cols[c][i];
        resid[i] -= fit;
    }
    return resid;
}

double quantile(std::span<const double> values, double p) {
    if (values.empty()) throw InvalidValue("quantile of empty vector");
    if (!(p >= 0.0 && p <= 1.0)) throw InvalidValue("quantile: p outside [0,1]");
    std::vector<double> v(values.begin(), values.end());
    for (double x : v) {
        if (!std::isfinite(x)) throw InvalidValue("quantile: non-finite input");
    }
    std::sort(v.begin(), v.end());
    const double h = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

} // namespace rankguard::stats

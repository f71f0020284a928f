#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace oracles {

namespace {
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
}

std::vector<double> counting_ranks(std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<double> ranks(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t below = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (v[j] < v[i]) ++below;
            else if (v[j] == v[i]) ++equal;
        }
        // average of positions below+1 .. below+equal
        ranks[i] = static_cast<double>(below) + (static_cast<double>(equal) + 1.0) / 2.0;
    }
    return ranks;
}

std::vector<double> percentile_rank(std::span<const double> v) {
    auto r = counting_ranks(v);
    const double denom = static_cast<double>(v.size() - 1);
    for (double& x : r) x = (x - 1.0) / denom;
    return r;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() < 3) return std::nullopt;
    const auto rx = counting_ranks(x);
    const auto ry = counting_ranks(y);
    const std::size_t n = x.size();
    long double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<long double>(n);
    my /= static_cast<long double>(n);
    long double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const long double dx = rx[i] - mx;
        const long double dy = ry[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0 || syy <= 0) return std::nullopt;
    return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    if (pairs == 0) return std::nullopt;
    return wins / static_cast<double>(pairs);
}

std::vector<double> ewma(std::span<const double> series, double halflife, int min_periods) {
    const double decay = std::exp(-std::log(2.0) / halflife);
    std::vector<double> out(series.size(), kNan);
    std::vector<double> observed;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (!std::isnan(series[i])) observed.push_back(series[i]);
        if (static_cast<int>(observed.size()) < min_periods) continue;
        long double num = 0, den = 0;
        for (std::size_t j = 0; j < observed.size(); ++j) {
            // newest observation gets weight decay^0
            const long double w = std::pow(decay, static_cast<double>(observed.size() - 1 - j));
            num += w * observed[j];
            den += w;
        }
        out[i] = static_cast<double>(num / den);
    }
    return out;
}

std::vector<double> expanding_zscore(std::span<const double> series, int min_periods,
                                     double std_floor) {
    std::vector<double> out(series.size(), kNan);
    std::vector<double> seen;
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (std::isnan(series[i])) continue;
        seen.push_back(series[i]);
        if (static_cast<int>(seen.size()) < min_periods) continue;
        double m = 0;
        for (double v : seen) m += v;
        m /= static_cast<double>(seen.size());
        double ss = 0;
        for (double v : seen) ss += (v - m) * (v - m);
        const double sd = std::sqrt(ss / static_cast<double>(seen.size() - 1));
        out[i] = (series[i] - m) / std::max(sd, std_floor);
    }
    return out;
}

double ks_two_sample(std::span<const double> a, std::span<const double> b) {
    std::vector<double> pooled(a.begin(), a.end());
    pooled.insert(pooled.end(), b.begin(), b.end());
    double d = 0.0;
    for (double t : pooled) {
        double fa = 0, fb = 0;
        for (double x : a) fa += (x <= t) ? 1.0 : 0.0;
        for (double x : b) fb += (x <= t) ? 1.0 : 0.0;
        fa /= static_cast<double>(a.size());
        fb /= static_cast<double>(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

std::vector<double> ols_residuals(std::span<const double> y,
                                  const std::vector<std::vector<double>>& x_cols) {
    const std::size_t n = y.size();
    const std::size_t k = x_cols.size() + 1;
    // design with intercept
    std::vector<std::vector<double>> a(n, std::vector<double>(k, 1.0));
    for (std::size_t c = 0; c < x_cols.size(); ++c) {
        for (std::size_t i = 0; i < n; ++i) a[i][c + 1] = x_cols[c][i];
    }
    // normal equations AtA beta = Aty
    std::vector<std::vector<double>> ata(k, std::vector<double>(k, 0.0));
    std::vector<double> aty(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c1 = 0; c1 < k; ++c1) {
            aty[c1] += a[i][c1] * y[i];
            for (std::size_t c2 = 0; c2 < k; ++c2) ata[c1][c2] += a[i][c1] * a[i][c2];
        }
    }
    // Gaussian elimination with partial pivoting
    std::vector<double> beta = aty;
    for (std::size_t col = 0; col < k; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < k; ++r) {
            if (std::abs(ata[r][col]) > std::abs(ata[piv][col])) piv = r;
        }
        if (std::abs(ata[piv][col]) < 1e-12) throw std::runtime_error("oracle: singular design");
        std::swap(ata[col], ata[piv]);
        std::swap(beta[col], beta[piv]);
        for (std::size_t r = 0; r < k; ++r) {
            if (r == col) continue;
            const double f = ata[r][col] / ata[col][col];
            for (std::size_t c = col; c < k; ++c) ata[r][c] -= f * ata[col][c];
            beta[r] -= f * beta[col];
        }
    }
    for (std::size_t c = 0; c < k; ++c) beta[c] /= ata[c][c];

    std::vector<double> resid(y.begin(), y.end());
    for (std::size_t i = 0; i < n; ++i) {
        double fit = 0.0;
        for (std::size_t c = 0; c < k; ++c) fit += a[i][c] * beta[c];
        resid[i] -= fit;
    }
    return resid;
}

double quantile_type7(std::span<const double> v, double p) {
    std::vector<double> s(v.begin(), v.end());
    std::sort(s.begin(), s.end());
    const double h = p * static_cast<double>(s.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

} // namespace oracles

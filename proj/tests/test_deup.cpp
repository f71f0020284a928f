#include "rankguard/deup.hpp"
#include "rankguard/errors.hpp"
#include "rankguard/panel.hpp"
#include "rankguard/stats.hpp"
#include "rankguard/synthetic.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

using namespace rankguard;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

AssetDay make_asset(std::string id, double score, double ret20) {
    AssetDay a;
    a.asset = std::move(id);
    a.features.fill(stats::missing());
    a.score_primary = score;
    a.score_secondary = stats::missing();
    a.fwd_ret.fill(stats::missing());
    a.fwd_ret[0] = ret20;
    return a;
}

std::string asset_id(std::size_t i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "A%03zu", i);
    return buf;
}

// n_dates x n_assets panel; fill(asset_day, date_pos, member_idx) customizes.
template <typename Fill>
Panel grid_panel(std::size_t n_dates, std::size_t n_assets, Fill&& fill) {
    const auto days = dates::business_days("2020-01-06", "2025-12-31");
    REQUIRE(days.size() >= n_dates);
    std::vector<CrossSection> sections(n_dates);
    for (std::size_t d = 0; d < n_dates; ++d) {
        sections[d].date = days[d];
        for (std::size_t i = 0; i < n_assets; ++i) {
            AssetDay a = make_asset(asset_id(i), 0.0, stats::missing());
            fill(a, d, i);
            sections[d].members.push_back(std::move(a));
        }
    }
    return Panel(std::move(sections));
}

// Hand-built label set: one entry per (date position, losses) pair.
LabelSet toy_labels(int horizon,
                    const std::vector<std::pair<std::size_t, std::vector<double>>>& by_date) {
    LabelSet ls;
    ls.horizon = horizon;
    for (const auto& [pos, losses] : by_date) {
        for (std::size_t k = 0; k < losses.size(); ++k) {
            ls.records.push_back({0, pos, asset_id(k), losses[k], 0.0, 0.0});
        }
    }
    return ls;
}

std::vector<double> by_record(const std::vector<double>& by_date, const LabelSet& labels) {
    std::vector<double> out;
    out.reserve(labels.records.size());
    for (const auto& rec : labels.records) out.push_back(by_date[rec.date_pos]);
    return out;
}

std::vector<double> pooled_losses(const LabelSet& labels, std::size_t lo, std::size_t hi) {
    std::vector<double> out;
    for (const auto& rec : labels.records) {
        if (rec.date_pos >= lo && rec.date_pos <= hi) out.push_back(rec.loss);
    }
    return out;
}

} // namespace

TEST_CASE("error-predictor feature matrix uses the fixed schema and zero-fills gaps") {
    Panel panel = grid_panel(2, 3, [](AssetDay& a, std::size_t d, std::size_t i) {
        a.score_primary = (i == 0 ? -2.0 : 0.5 + static_cast<double>(i));
        a.fwd_ret[0] = 0.01 * static_cast<double>(i);
        a.features[static_cast<std::size_t>(feature_index("vol_20d"))] = 0.2;
        if (!(d == 1 && i == 2)) {
            a.features[static_cast<std::size_t>(feature_index("vol_60d"))] = 0.3;
        }
        a.features[static_cast<std::size_t>(feature_index("market_vol_21d"))] =
            0.1 + static_cast<double>(d);
    });
    const LabelSet labels = make_rank_labels(panel, 20);
    REQUIRE(labels.records.size() == 6);

    const auto scores = deup::primary_scores(panel, labels);
    const auto m = deup::build_gx_features(panel, labels, scores);

    REQUIRE(m.names.size() == 11);
    CHECK(m.names[0] == "score");
    CHECK(m.names[1] == "abs_score");
    CHECK(m.names[2] == "cross_sectional_rank");
    CHECK(m.names[10] == "market_return_21d");
    REQUIRE(m.columns.size() == 11);
    for (const auto& col : m.columns) REQUIRE(col.size() == labels.records.size());

    // Row 0 is (date 0, A000): score -2 -> abs_score 2.
    CHECK(m.columns[0][0] == -2.0);
    CHECK(m.columns[1][0] == 2.0);
    // Missing vol_60d (date 1, A002 = last record) and absent features zero-fill.
    CHECK(m.columns[4][5] == 0.0);
    CHECK(m.columns[4][0] == 0.3);
    CHECK(m.columns[2][0] == 0.0);  // cross_sectional_rank never set
    CHECK(m.columns[9][5] == 1.1);  // market_vol_21d present

    CHECK_THROWS_AS(deup::build_gx_features(panel, labels, std::vector<double>(5, 0.0)),
                    InvalidValue);
}

TEST_CASE("same-date loss quantile floor") {
    Panel panel = grid_panel(3, 2, [](AssetDay& a, std::size_t, std::size_t i) {
        a.score_primary = static_cast<double>(i);
        a.fwd_ret[0] = static_cast<double>(i);
    });
    const LabelSet labels =
        toy_labels(20, {{0, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0}}});

    deup::AleatoricConfig cfg;
    cfg.mode = deup::AleatoricMode::kOracle;
    const auto a = deup::aleatoric_baseline(panel, labels, cfg);

    REQUIRE(a.size() == 3);
    CHECK(a[0] == Catch::Approx(0.19).margin(1e-12));
    const std::vector<double> v = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    CHECK(a[0] == Catch::Approx(oracles::quantile_type7(v, 0.10)).margin(1e-12));
    CHECK(stats::is_missing(a[1]));
    CHECK(stats::is_missing(a[2]));
}

TEST_CASE("matured rolling window pools rows with both endpoints included") {
    const std::size_t n_dates = 90;
    Panel panel = grid_panel(n_dates, 1, [](AssetDay&, std::size_t, std::size_t) {});

    std::vector<std::pair<std::size_t, std::vector<double>>> by_date;
    for (std::size_t u = 0; u < 60; ++u) {
        const double base = 0.001 * static_cast<double>(u + 1);
        by_date.push_back({u, {base, base + 0.3, base + 0.6}});
    }
    const LabelSet labels = toy_labels(20, by_date);

    deup::AleatoricConfig cfg;
    cfg.mode = deup::AleatoricMode::kPitRolling;
    cfg.window = 25;
    const auto a = deup::aleatoric_baseline(panel, labels, cfg);

    SECTION("window is [t - horizon - W, t - horizon], closed on both ends") {
        // t = 50: dates 5..30 inclusive.
        REQUIRE(!stats::is_missing(a[50]));
        CHECK(a[50] == Catch::Approx(oracles::quantile_type7(pooled_losses(labels, 5, 30), 0.10))
                           .margin(1e-12));
        // Dropping either endpoint changes the pooled quantile.
        CHECK(a[50] != oracles::quantile_type7(pooled_losses(labels, 6, 30), 0.10));
        CHECK(a[50] != oracles::quantile_type7(pooled_losses(labels, 5, 29), 0.10));
        // t = 25: left edge clamps at the first date.
        CHECK(a[25] == Catch::Approx(oracles::quantile_type7(pooled_losses(labels, 0, 5), 0.10))
                           .margin(1e-12));
    }

    SECTION("warm-up and empty windows are undefined") {
        for (std::size_t t = 0; t < 20; ++t) CHECK(stats::is_missing(a[t]));
        // Labels that only start late leave early windows empty.
        const LabelSet late = toy_labels(20, {{40, {0.1, 0.2, 0.3}}, {41, {0.1, 0.2, 0.3}}});
        const auto b = deup::aleatoric_baseline(panel, late, cfg);
        CHECK(stats::is_missing(b[30]));  // window [0, 10] holds no labeled rows
        CHECK(!stats::is_missing(b[60]));
    }

    SECTION("window shorter than the maturation lag is rejected") {
        deup::AleatoricConfig bad = cfg;
        bad.window = 19;
        CHECK_THROWS_AS(deup::aleatoric_baseline(panel, labels, bad), ConfigError);
        bad.window = 20;
        CHECK_NOTHROW(deup::aleatoric_baseline(panel, labels, bad));
    }

    SECTION("quantile level outside (0,1) is rejected") {
        deup::AleatoricConfig bad = cfg;
        bad.quantile_level = 0.0;
        CHECK_THROWS_AS(deup::aleatoric_baseline(panel, labels, bad), ConfigError);
    }
}

TEST_CASE("expanding floor takes the median of matured per-date quantiles") {
    const std::size_t n_dates = 40;
    Panel panel = grid_panel(n_dates, 1, [](AssetDay&, std::size_t, std::size_t) {});

    deup::AleatoricConfig cfg;
    cfg.mode = deup::AleatoricMode::kExpanding;

    SECTION("a single matured date reproduces that date's quantile") {
        const LabelSet one = toy_labels(20, {{0, {0.1, 0.2, 0.3, 0.4, 0.5}}});
        const auto a = deup::aleatoric_baseline(panel, one, cfg);
        const double p10 = oracles::quantile_type7(std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5}, 0.10);
        CHECK(stats::is_missing(a[19]));
        for (std::size_t t = 20; t < n_dates; ++t) CHECK(a[t] == Catch::Approx(p10).margin(1e-12));
    }

    SECTION("median over all matured dates, recomputed by brute force") {
        std::vector<std::pair<std::size_t, std::vector<double>>> by_date;
        std::mt19937_64 rng(999);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t d = 0; d < 15; ++d) {
            std::vector<double> losses(7);
            for (auto& v : losses) v = u(rng);
            by_date.push_back({d, losses});
        }
        const LabelSet labels = toy_labels(20, by_date);
        const auto a = deup::aleatoric_baseline(panel, labels, cfg);

        for (std::size_t t = 0; t < n_dates; ++t) {
            std::vector<double> p10s;
            for (const auto& [pos, losses] : by_date) {
                if (t >= 20 && pos <= t - 20) p10s.push_back(oracles::quantile_type7(losses, 0.10));
            }
            if (p10s.empty()) {
                CHECK(stats::is_missing(a[t]));
            } else {
                std::sort(p10s.begin(), p10s.end());
                const std::size_t n = p10s.size();
                const double med =
                    n % 2 == 1 ? p10s[n / 2] : 0.5 * (p10s[n / 2 - 1] + p10s[n / 2]);
                CHECK(a[t] == Catch::Approx(med).margin(1e-12));
            }
        }
    }
}

TEST_CASE("inverse-spread floor calibrates its scale on the development range") {
    // Forward returns use a fixed rank permutation but a per-date spread, so
    // losses repeat across dates while the return IQR varies.
    const std::vector<double> shape = {0.0, 2.0, -2.0, 1.0, -1.0};
    const std::vector<double> spread = {1.0, 2.0, 4.0, 8.0, 1.5, 3.0, 6.0, 12.0};
    Panel panel = grid_panel(8, 5, [&](AssetDay& a, std::size_t d, std::size_t i) {
        a.score_primary = static_cast<double>(i);
        a.fwd_ret[0] = 0.01 * shape[i] * spread[d];
    });
    const LabelSet labels = make_rank_labels(panel, 20);
    REQUIRE(labels.records.size() == 40);

    deup::AleatoricConfig cfg;
    cfg.mode = deup::AleatoricMode::kTier0Iqr;
    cfg.dev_end_pos = 5;
    const auto a = deup::aleatoric_baseline(panel, labels, cfg);

    // IQR of shape * s is 2s (type-7 quartiles of 5 points), scaled by 0.01.
    std::vector<double> inv(8);
    for (std::size_t d = 0; d < 8; ++d) inv[d] = 1.0 / (0.02 * spread[d] + cfg.tier0_epsilon);

    std::vector<double> dev_losses;
    for (const auto& rec : labels.records) {
        if (rec.date_pos < 5) dev_losses.push_back(rec.loss);
    }
    const double target = stats::median(dev_losses);
    REQUIRE(target > 0.0);
    const double c = target / stats::median(std::vector<double>(inv.begin(), inv.begin() + 5));

    for (std::size_t d = 0; d < 8; ++d) CHECK(a[d] == Catch::Approx(c * inv[d]).epsilon(1e-9));

    // Median floor matches the median loss on the calibration range.
    std::vector<double> dev_floors(a.begin(), a.begin() + 5);
    CHECK(stats::median(dev_floors) == Catch::Approx(target).epsilon(1e-9));

    deup::AleatoricConfig bad = cfg;
    bad.dev_end_pos = 0;
    CHECK_THROWS_AS(deup::aleatoric_baseline(panel, labels, bad), ConfigError);
}

TEST_CASE("epistemic clamp") {
    CHECK(deup::epistemic(0.35, 0.25) == Catch::Approx(0.10).margin(1e-15));
    CHECK(deup::epistemic(0.20, 0.25) == 0.0);
    CHECK(deup::epistemic(0.25, 0.25) == 0.0);
    CHECK(stats::is_missing(deup::epistemic(kNaN, 0.1)));
    CHECK(stats::is_missing(deup::epistemic(0.1, kNaN)));

    const std::vector<double> g = {0.35, 0.20, kNaN};
    const std::vector<double> a = {0.25, 0.25, 0.25};
    const auto e = deup::epistemic_series(g, a);
    CHECK(e[0] == Catch::Approx(0.10).margin(1e-15));
    CHECK(e[1] == 0.0);
    CHECK(stats::is_missing(e[2]));
    CHECK_THROWS_AS(deup::epistemic_series(g, std::vector<double>(2, 0.0)), InvalidValue);
}

TEST_CASE("uncertainty quintiles") {
    SECTION("signal plus small noise is perfectly monotone") {
        std::vector<double> ehat(1000);
        std::vector<double> loss(1000);
        for (std::size_t i = 0; i < ehat.size(); ++i) {
            ehat[i] = static_cast<double>(i) / 1000.0;
            loss[i] = ehat[i] + (i % 2 == 0 ? 1e-4 : -1e-4);
        }
        const auto t = deup::quintile_table(ehat, loss);
        CHECK(t.spearman_of_means == 1.0);
        CHECK(t.q5_q1 > 2.0);
        std::size_t total = 0;
        for (std::size_t q = 0; q < 5; ++q) {
            CHECK(t.counts[q] == 200);
            total += t.counts[q];
        }
        CHECK(total == 1000);
    }

    SECTION("loss independent of the signal gives a flat table") {
        std::vector<double> ehat(1000);
        std::vector<double> loss(1000);
        for (std::size_t i = 0; i < ehat.size(); ++i) {
            ehat[i] = static_cast<double>(i);
            loss[i] = 0.1 * static_cast<double>(i % 5 + 1);  // same mix inside every quintile
        }
        const auto t = deup::quintile_table(ehat, loss);
        CHECK(t.q5_q1 == Catch::Approx(1.0).margin(1e-12));
        CHECK(stats::is_missing(t.spearman_of_means));  // constant means: undefined
    }

    SECTION("reversed signal flips the ordering") {
        std::vector<double> ehat(100);
        std::vector<double> loss(100);
        for (std::size_t i = 0; i < 100; ++i) {
            ehat[i] = static_cast<double>(i);
            loss[i] = 1.0 - static_cast<double>(i) / 100.0;
        }
        CHECK(deup::quintile_table(ehat, loss).spearman_of_means == -1.0);
    }

    SECTION("missing rows are dropped and tiny tables rejected") {
        std::vector<double> ehat(60, 1.0);
        std::vector<double> loss(60, 0.5);
        for (std::size_t i = 0; i < 60; ++i) ehat[i] = static_cast<double>(i);
        for (std::size_t i = 0; i < 15; ++i) ehat[i] = kNaN;
        CHECK_THROWS_AS(deup::quintile_table(ehat, loss), DataError);  // 45 usable < 50
        CHECK_THROWS_AS(
            deup::quintile_table(std::vector<double>(49, 1.0), std::vector<double>(49, 1.0)),
            DataError);
    }
}

TEST_CASE("per-date coupling of uncertainty with score extremity") {
    // Three dates of 3 rows: rho = +1, +0.5, -0.5; one constant date skipped.
    const std::vector<double> ehat = {1, 2, 3, 1, 2, 3, 1, 2, 3, 5, 5, 5};
    const std::vector<double> absc = {1, 2, 3, 1, 3, 2, 3, 1, 2, 1, 2, 3};
    const std::vector<std::pair<std::size_t, std::size_t>> ranges = {
        {0, 3}, {3, 6}, {6, 9}, {9, 12}};

    const auto s = deup::coupling_series(ehat, absc, ranges);
    REQUIRE(s.rho_by_date.size() == 4);
    CHECK(s.rho_by_date[0] == Catch::Approx(1.0).margin(1e-12));
    CHECK(s.rho_by_date[1] == Catch::Approx(0.5).margin(1e-12));
    CHECK(s.rho_by_date[2] == Catch::Approx(-0.5).margin(1e-12));
    CHECK(stats::is_missing(s.rho_by_date[3]));
    CHECK(s.median == Catch::Approx(0.5).margin(1e-12));
    CHECK(s.frac_positive == Catch::Approx(2.0 / 3.0).margin(1e-12));

    SECTION("identical signals correlate perfectly everywhere") {
        const auto full = deup::coupling_series(absc, absc, ranges);
        CHECK(full.median == Catch::Approx(1.0).margin(1e-12));
        CHECK(full.frac_positive == 1.0);
    }
}

TEST_CASE("residualization") {
    SECTION("pooled: orthogonal covariates only remove the mean") {
        const std::vector<double> ehat = {1.0, 1.0, 3.0, 3.0};
        const std::vector<std::vector<double>> cov = {{1.0, -1.0, 1.0, -1.0}};
        const auto r = deup::residualize_pooled(ehat, cov);
        CHECK(r[0] == Catch::Approx(-1.0).margin(1e-12));
        CHECK(r[1] == Catch::Approx(-1.0).margin(1e-12));
        CHECK(r[2] == Catch::Approx(1.0).margin(1e-12));
        CHECK(r[3] == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("pooled: 30-row case matches the normal-equations oracle") {
        std::mt19937_64 rng(4242);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<double> ehat(30);
        std::vector<std::vector<double>> cov(2, std::vector<double>(30));
        for (std::size_t i = 0; i < 30; ++i) {
            cov[0][i] = n(rng);
            cov[1][i] = n(rng);
            ehat[i] = 0.4 + 0.7 * cov[0][i] - 0.2 * cov[1][i] + 0.1 * n(rng);
        }
        const auto got = deup::residualize_pooled(ehat, cov);
        const auto want = oracles::ols_residuals(ehat, cov);
        for (std::size_t i = 0; i < 30; ++i) {
            CHECK(got[i] == Catch::Approx(want[i]).margin(1e-9));
        }
    }

    SECTION("pooled: rows with missing values stay missing and skip the fit") {
        std::vector<double> ehat = {1.0, kNaN, 3.0, 3.0, 2.0, 4.0};
        std::vector<std::vector<double>> cov = {{1.0, -1.0, 1.0, -1.0, 2.0, kNaN}};
        const auto r = deup::residualize_pooled(ehat, cov);
        CHECK(stats::is_missing(r[1]));
        CHECK(stats::is_missing(r[5]));
        const auto want = oracles::ols_residuals(std::vector<double>{1.0, 3.0, 3.0, 2.0},
                                                 {{1.0, 1.0, -1.0, 2.0}});
        CHECK(r[0] == Catch::Approx(want[0]).margin(1e-9));
        CHECK(r[4] == Catch::Approx(want[3]).margin(1e-9));
    }

    SECTION("per date: exact linear dependence leaves near-zero residuals") {
        std::vector<double> ehat;
        std::vector<double> absc;
        std::vector<std::pair<std::size_t, std::size_t>> ranges;
        for (std::size_t d = 0; d < 3; ++d) {
            const std::size_t begin = ehat.size();
            for (std::size_t i = 0; i < 6; ++i) {
                const double x = static_cast<double>(i) + 0.3 * static_cast<double>(d);
                absc.push_back(x);
                ehat.push_back(0.2 * static_cast<double>(d) + 0.5 * x);
            }
            ranges.push_back({begin, ehat.size()});
        }
        const auto r = deup::residualize_per_date(ehat, absc, ranges);
        for (double v : r) CHECK(std::fabs(v) < 1e-10);
    }

    SECTION("per date: small or degenerate cross-sections") {
        // Date 0 has two usable rows -> undefined; date 1 has a constant
        // regressor -> singular design propagates.
        const std::vector<double> ehat = {1.0, 2.0, kNaN, 1.0, 2.0, 3.0};
        const std::vector<double> absc_small = {1.0, 2.0, 3.0, 1.0, 2.0, 3.0};
        const std::vector<std::pair<std::size_t, std::size_t>> ranges = {{0, 3}, {3, 6}};
        const auto r = deup::residualize_per_date(ehat, absc_small, ranges);
        CHECK(stats::is_missing(r[0]));
        CHECK(stats::is_missing(r[1]));
        CHECK(!stats::is_missing(r[3]));

        const std::vector<double> absc_const = {1.0, 2.0, 3.0, 7.0, 7.0, 7.0};
        const std::vector<double> ehat_full = {1.0, 2.0, 3.0, 1.0, 2.0, 3.0};
        CHECK_THROWS_AS(deup::residualize_per_date(ehat_full, absc_const, ranges),
                        SingularDesign);
    }
}

TEST_CASE("baseline dominance table") {
    // Two dates; candidate A is the loss itself, candidate B uses a
    // zero-correlation permutation on both dates.
    const std::vector<double> loss = {0.1, 0.2, 0.3, 0.4, 0.1, 0.2, 0.3, 0.4};
    const std::vector<double> zero = {2.0, 4.0, 1.0, 3.0, 2.0, 4.0, 1.0, 3.0};
    const std::vector<std::pair<std::size_t, std::size_t>> ranges = {{0, 4}, {4, 8}};

    const auto rows = deup::baseline_dominance_table(
        {{"self", std::span<const double>(loss)}, {"zero", std::span<const double>(zero)}}, loss,
        ranges);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].name == "self");
    CHECK(rows[0].mean_rho == Catch::Approx(1.0).margin(1e-12));
    CHECK(rows[0].n_dates == 2);
    CHECK(rows[1].mean_rho == Catch::Approx(0.0).margin(1e-12));

    CHECK_THROWS_AS(deup::baseline_dominance_table(
                        {{"bad", std::span<const double>(zero.data(), 3)}}, loss, ranges),
                    InvalidValue);
}

TEST_CASE("walk-forward error predictor: fold coverage and skip semantics") {
    RegimeScript script =
        build_script("2016-02-01", {{60, 0.30, 1.0, 0.3}}, 20, 5);
    const Panel panel = generate(script);
    const LabelSet labels = make_rank_labels(panel, 20);
    const auto scores = deup::primary_scores(panel, labels);
    const auto m = deup::build_gx_features(panel, labels, scores);

    gbt::GbtConfig cfg;
    cfg.n_estimators = 10;
    cfg.min_child_samples = 20;
    cfg.seed = 3;

    SECTION("two-fold toy plan: fold 1 has no predictions, fold 2 does") {
        const auto folds = walk_forward_folds(panel.n_dates(), 2, 0, 20, 1);
        REQUIRE(folds.size() == 2);
        REQUIRE(!folds[0].emits_predictions);
        REQUIRE(folds[1].emits_predictions);

        const auto result = deup::train_gx_walkforward(m, labels, folds, cfg);
        REQUIRE(result.folds_trained == 1);
        for (std::size_t i = 0; i < labels.records.size(); ++i) {
            const bool in_fold2 = labels.records[i].date_pos >= folds[1].predict_begin;
            CHECK(stats::is_missing(result.g_by_record[i]) == !in_fold2);
        }
        // Split counts aggregate over trained folds only.
        std::size_t total_splits = 0;
        for (const auto& imp : result.importance) {
            total_splits += static_cast<std::size_t>(imp.split_count);
        }
        CHECK(total_splits > 0);
    }

    SECTION("an emitting fold without trainable labeled rows is skipped with a warning") {
        auto folds = walk_forward_folds(panel.n_dates(), 2, 0, 20, 1);
        FoldPlan starved = folds[1];
        starved.fold_id = 3;
        starved.train_begin = 0;
        starved.train_end = 0;  // empty training window
        folds.push_back(starved);

        const auto result = deup::train_gx_walkforward(m, labels, folds, cfg);
        CHECK(result.folds_trained == 1);
        REQUIRE(result.warnings.size() == 1);
        CHECK(result.warnings[0].find("fold 3") != std::string::npos);
        CHECK(result.warnings[0].find("skipped") != std::string::npos);
    }

    SECTION("fold horizon must match the label horizon") {
        auto folds = walk_forward_folds(panel.n_dates(), 2, 0, 20, 1);
        folds[1].horizon = 60;
        CHECK_THROWS_AS(deup::train_gx_walkforward(m, labels, folds, cfg), ConfigError);
    }
}

namespace {

// Built once; every section of the integration test below reads from it.
struct MarketFixture {
    Panel panel;
    LabelSet labels;
    std::vector<FoldPlan> folds;
    std::vector<double> scores;
    deup::GxResult gx;
    std::vector<double> a_oracle;
    std::vector<double> a_pit;
    std::vector<double> e_oracle;
    std::vector<double> e_pit;
    std::vector<std::pair<std::size_t, std::size_t>> ranges;
    std::vector<double> loss;
    std::vector<double> abs_score;
    std::size_t first_emit = 0;
};

const MarketFixture& market() {
    static const MarketFixture fixture = [] {
        MarketFixture f;
        f.panel = generate(default_script(42));
        f.labels = make_rank_labels(f.panel, 20);
        f.folds = walk_forward_folds(f.panel.n_dates(), 30, 90, 20, 8);
        f.scores = deup::primary_scores(f.panel, f.labels);
        const auto features = deup::build_gx_features(f.panel, f.labels, f.scores);

        gbt::GbtConfig cfg;  // production error-predictor settings
        cfg.seed = 11;
        f.gx = deup::train_gx_walkforward(features, f.labels, f.folds, cfg);

        deup::AleatoricConfig oracle_cfg;
        oracle_cfg.mode = deup::AleatoricMode::kOracle;
        deup::AleatoricConfig pit_cfg;
        pit_cfg.mode = deup::AleatoricMode::kPitRolling;
        f.a_oracle = deup::aleatoric_baseline(f.panel, f.labels, oracle_cfg);
        f.a_pit = deup::aleatoric_baseline(f.panel, f.labels, pit_cfg);
        f.e_oracle = deup::epistemic_series(f.gx.g_by_record, by_record(f.a_oracle, f.labels));
        f.e_pit = deup::epistemic_series(f.gx.g_by_record, by_record(f.a_pit, f.labels));
        f.ranges = deup::record_date_ranges(f.labels);

        f.loss.reserve(f.labels.records.size());
        f.abs_score.reserve(f.labels.records.size());
        for (std::size_t i = 0; i < f.labels.records.size(); ++i) {
            f.loss.push_back(f.labels.records[i].loss);
            f.abs_score.push_back(std::fabs(f.scores[i]));
        }
        f.first_emit = f.panel.n_dates();
        for (const auto& fold : f.folds) {
            if (fold.emits_predictions) f.first_emit = std::min(f.first_emit, fold.predict_begin);
        }
        return f;
    }();
    return fixture;
}

} // namespace

TEST_CASE("learned uncertainty separates score extremes on the synthetic market") {
    const MarketFixture& fx = market();
    const Panel& panel = fx.panel;
    const LabelSet& labels = fx.labels;
    const auto& folds = fx.folds;
    const auto& gx = fx.gx;
    const auto& a_oracle = fx.a_oracle;
    const auto& a_pit = fx.a_pit;
    const auto& e_oracle = fx.e_oracle;
    const auto& e_pit = fx.e_pit;
    const auto& ranges = fx.ranges;
    const auto& loss = fx.loss;
    const auto& abs_score = fx.abs_score;
    const std::size_t first_emit = fx.first_emit;
    REQUIRE(first_emit < panel.n_dates());
    CHECK(gx.warnings.empty());

    SECTION("predictions cover exactly the emitting folds' labeled rows") {
        int expected_folds = 0;
        for (const auto& f : folds) {
            if (f.emits_predictions) ++expected_folds;
        }
        CHECK(gx.folds_trained == expected_folds);
        for (std::size_t i = 0; i < labels.records.size(); ++i) {
            const bool emitted = labels.records[i].date_pos >= first_emit;
            CHECK(stats::is_missing(gx.g_by_record[i]) == !emitted);
        }
        CHECK(!gx.importance.empty());
    }

    SECTION("date-constant floors preserve within-date ordering across baselines") {
        std::size_t dates_checked = 0;
        std::size_t sets_checked = 0;
        for (const auto& [begin, end] : ranges) {
            if (labels.records[begin].date_pos < first_emit) continue;
            std::vector<double> eo;
            std::vector<double> ep;
            std::vector<double> g;
            std::vector<std::size_t> idx;
            for (std::size_t i = begin; i < end; ++i) {
                if (stats::is_missing(e_oracle[i]) || stats::is_missing(e_pit[i])) continue;
                if (e_oracle[i] > 0.0 && e_pit[i] > 0.0) {
                    eo.push_back(e_oracle[i]);
                    ep.push_back(e_pit[i]);
                    g.push_back(gx.g_by_record[i]);
                    idx.push_back(i);
                }
            }
            if (eo.size() < 2) continue;
            const auto ro = stats::percentile_rank(eo);
            const auto rp = stats::percentile_rank(ep);
            const auto rg = stats::percentile_rank(g);
            for (std::size_t k = 0; k < ro.size(); ++k) {
                REQUIRE(ro[k] == Catch::Approx(rp[k]).margin(1e-12));
                REQUIRE(ro[k] == Catch::Approx(rg[k]).margin(1e-12));
            }
            ++dates_checked;

            // Tail sets agree whenever both floors leave >= 15% strictly positive.
            const std::size_t n_date = end - begin;
            std::vector<double> eo_all;
            std::vector<double> ep_all;
            for (std::size_t i = begin; i < end; ++i) {
                eo_all.push_back(stats::is_missing(e_oracle[i]) ? 0.0 : e_oracle[i]);
                ep_all.push_back(stats::is_missing(e_pit[i]) ? 0.0 : e_pit[i]);
            }
            const auto pos_frac = [n_date](const std::vector<double>& v) {
                std::size_t pos = 0;
                for (double x : v) {
                    if (x > 0.0) ++pos;
                }
                return static_cast<double>(pos) / static_cast<double>(n_date);
            };
            if (pos_frac(eo_all) < 0.15 || pos_frac(ep_all) < 0.15) continue;
            const double qo = stats::quantile(eo_all, 0.85);
            const double qp = stats::quantile(ep_all, 0.85);
            std::set<std::string> tail_o;
            std::set<std::string> tail_p;
            for (std::size_t i = begin; i < end; ++i) {
                if (!stats::is_missing(e_oracle[i]) && e_oracle[i] > qo) {
                    tail_o.insert(labels.records[i].asset);
                }
                if (!stats::is_missing(e_pit[i]) && e_pit[i] > qp) {
                    tail_p.insert(labels.records[i].asset);
                }
            }
            REQUIRE(tail_o == tail_p);
            ++sets_checked;
        }
        CHECK(dates_checked > 300);
        CHECK(sets_checked > 300);
    }

    SECTION("pooled quintiles of learned uncertainty are monotone in realized loss") {
        const auto table = deup::quintile_table(e_pit, loss);
        CHECK(table.spearman_of_means == 1.0);
        CHECK(table.q5_q1 > 1.1);
    }

    SECTION("uncertainty couples with score extremity date by date") {
        const auto coupling = deup::coupling_series(e_pit, abs_score, ranges);
        CHECK(coupling.median > 0.3);
        CHECK(coupling.frac_positive > 0.8);
    }

    SECTION("learned uncertainty dominates generic volatility as a loss predictor") {
        std::vector<double> vol;
        std::vector<double> vix;
        vol.reserve(labels.records.size());
        for (const auto& rec : labels.records) {
            const auto& sec = panel.section(rec.date_pos);
            const auto& row = sec.members[rec.row_id - panel.row_offset(rec.date_pos)];
            vol.push_back(row.feature("vol_20d"));
            vix.push_back(row.feature("vix_percentile_252d"));
        }
        const auto rows = deup::baseline_dominance_table({{"ehat", std::span<const double>(e_pit)},
                                                          {"g", std::span<const double>(gx.g_by_record)},
                                                          {"vol_20d", std::span<const double>(vol)},
                                                          {"vix", std::span<const double>(vix)},
                                                          {"abs_score", std::span<const double>(abs_score)}},
                                                         loss, ranges);
        double rho_ehat = 0.0;
        double rho_vol = 0.0;
        for (const auto& r : rows) {
            if (r.name == "ehat") rho_ehat = r.mean_rho;
            if (r.name == "vol_20d") rho_vol = r.mean_rho;
        }
        CHECK(rho_ehat > 0.1);
        CHECK(rho_ehat > rho_vol + 0.05);
    }

    SECTION("per-date residualization removes the linear extremity component") {
        const auto resid = deup::residualize_per_date(e_pit, abs_score, ranges);

        // OLS guarantee: in-sample Pearson with the regressor is zero, date by
        // date (skipping degenerate residuals).
        std::size_t checked = 0;
        for (const auto& [begin, end] : ranges) {
            std::vector<double> r;
            std::vector<double> x;
            for (std::size_t i = begin; i < end; ++i) {
                if (!stats::is_missing(resid[i]) && !stats::is_missing(abs_score[i])) {
                    r.push_back(resid[i]);
                    x.push_back(abs_score[i]);
                }
            }
            if (r.size() < 3 || stats::sample_std(r) < 1e-12) continue;
            const auto rho = stats::try_pearson(r, x);
            if (!rho) continue;
            REQUIRE(std::fabs(*rho) < 1e-8);
            ++checked;
        }
        CHECK(checked > 300);

        // Rank coupling drops but need not vanish: ê is a nonlinear (stepwise)
        // function of extremity, and OLS only removes the linear part.
        const auto raw = deup::coupling_series(e_pit, abs_score, ranges);
        const auto neutral = deup::coupling_series(resid, abs_score, ranges);
        CHECK(neutral.median < raw.median - 0.1);
    }

    SECTION("uncertainty table export round-trips") {
        deup::AleatoricConfig exp_cfg;
        exp_cfg.mode = deup::AleatoricMode::kExpanding;
        const auto a_exp = deup::aleatoric_baseline(panel, labels, exp_cfg);
        const std::string path = "deup_export_test.csv";
        deup::export_uncertainty_csv(path, panel, labels, gx.g_by_record, a_oracle, a_pit, a_exp);

        std::ifstream in(path);
        REQUIRE(in.good());
        std::string header;
        std::getline(in, header);
        CHECK(header == "date,asset,horizon,g,a_oracle,a_pit,a_exp,e_oracle,e_pit,rank_loss");
        std::size_t lines = 0;
        std::string line;
        std::size_t blank_g = 0;
        while (std::getline(in, line)) {
            ++lines;
            // Column 4 is g; blank during warm-up folds.
            std::stringstream ss(line);
            std::string cell;
            for (int c = 0; c < 4; ++c) std::getline(ss, cell, ',');
            if (cell.empty()) ++blank_g;
        }
        CHECK(lines == labels.records.size());
        std::size_t expected_blank = 0;
        for (const auto& rec : labels.records) {
            if (rec.date_pos < first_emit) ++expected_blank;
        }
        CHECK(blank_g == expected_blank);
        std::remove(path.c_str());

        CHECK_THROWS_AS(deup::export_uncertainty_csv(path, panel, labels,
                                                     std::vector<double>(3, 0.0), a_oracle, a_pit,
                                                     a_exp),
                        InvalidValue);
    }

    SECTION("per-stock quantile floors straddle their own median band") {
        gbt::GbtConfig t2;
        t2.seed = 11;
        t2.n_estimators = 15;
        const auto tier2 = deup::train_tier2_quantile(panel, labels, folds, t2);
        std::size_t defined = 0;
        std::size_t ordered = 0;
        double gap = 0.0;
        for (std::size_t i = 0; i < labels.records.size(); ++i) {
            const double lo = tier2.p25_by_record[i];
            const double hi = tier2.p75_by_record[i];
            if (stats::is_missing(lo) || stats::is_missing(hi)) {
                CHECK(labels.records[i].date_pos < first_emit);
                continue;
            }
            ++defined;
            if (lo <= hi) ++ordered;
            gap += hi - lo;
        }
        REQUIRE(defined > 30000);
        CHECK(static_cast<double>(ordered) / static_cast<double>(defined) > 0.8);
        CHECK(gap / static_cast<double>(defined) > 0.0);
    }
}

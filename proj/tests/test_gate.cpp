#include "rankguard/errors.hpp"
#include "rankguard/gate.hpp"
#include "rankguard/panel.hpp"
#include "rankguard/stats.hpp"
#include "rankguard/synthetic.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

using namespace rankguard;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string asset_id(std::size_t i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "A%03zu", i);
    return buf;
}

template <typename Fill>
Panel grid_panel(std::size_t n_dates, std::size_t n_assets, Fill&& fill) {
    const auto days = dates::business_days("2020-01-06", "2025-12-31");
    REQUIRE(days.size() >= n_dates);
    std::vector<CrossSection> sections(n_dates);
    for (std::size_t d = 0; d < n_dates; ++d) {
        sections[d].date = days[d];
        for (std::size_t i = 0; i < n_assets; ++i) {
            AssetDay a;
            a.asset = asset_id(i);
            a.features.fill(stats::missing());
            a.score_primary = stats::missing();
            a.score_secondary = stats::missing();
            a.fwd_ret.fill(stats::missing());
            fill(a, d, i);
            sections[d].members.push_back(std::move(a));
        }
    }
    return Panel(std::move(sections));
}

void set_feature(AssetDay& a, std::string_view name, double v) {
    a.features[static_cast<std::size_t>(feature_index(name))] = v;
}

bool same_value(double a, double b) {
    if (stats::is_missing(a) || stats::is_missing(b)) {
        return stats::is_missing(a) && stats::is_missing(b);
    }
    return a == b;
}

bool close_value(double a, double b, double tol = 1e-9) {
    if (stats::is_missing(a) || stats::is_missing(b)) {
        return stats::is_missing(a) && stats::is_missing(b);
    }
    return std::fabs(a - b) <= tol;
}

} // namespace

TEST_CASE("gate ramp algebra is exact") {
    CHECK(gate::gate_level(0.3) == 0.0);
    CHECK(gate::gate_level(0.7) == Catch::Approx(1.0).margin(1e-12));
    CHECK(gate::gate_level(0.5) == Catch::Approx(0.5).margin(1e-15));
    CHECK(gate::gate_level(0.0) == 0.0);
    CHECK(gate::gate_level(1.0) == 1.0);
    CHECK(gate::gate_level(0.4) == Catch::Approx(0.25).margin(1e-15));
    CHECK(gate::sigmoid(0.0) == 0.5);
    CHECK(gate::sigmoid(100.0) == Catch::Approx(1.0).margin(1e-12));
    CHECK(gate::sigmoid(-100.0) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("matured stream lags by the maturation horizon") {
    std::vector<double> ic(25);
    for (std::size_t t = 0; t < ic.size(); ++t) ic[t] = static_cast<double>(t);

    SECTION("zero lag is the identity") {
        const auto out = gate::matured_ic_stream(ic, 0);
        for (std::size_t t = 0; t < ic.size(); ++t) CHECK(out[t] == ic[t]);
    }

    SECTION("lag 20 on 25 dates leaves 5 defined points") {
        const auto out = gate::matured_ic_stream(ic, 20);
        std::size_t defined = 0;
        for (std::size_t t = 0; t < out.size(); ++t) {
            if (!stats::is_missing(out[t])) {
                ++defined;
                // Index audit: the stream never references anything newer than t - tau.
                CHECK(out[t] == static_cast<double>(t - 20));
            }
        }
        CHECK(defined == 5);
        for (std::size_t t = 0; t < 20; ++t) CHECK(stats::is_missing(out[t]));
    }

    SECTION("missing inputs shift as missing") {
        ic[3] = kNaN;
        const auto out = gate::matured_ic_stream(ic, 5);
        CHECK(stats::is_missing(out[8]));
        CHECK(out[9] == 4.0);
    }

    CHECK_THROWS_AS(gate::matured_ic_stream(ic, -1), ConfigError);
}

TEST_CASE("constant health components hold the gate at one half") {
    const std::size_t n = 60;
    std::vector<double> matured(n, 0.02);
    std::vector<double> h_real(n, 0.05);
    std::vector<double> h_drift(n, kNaN);
    std::vector<double> h_disagree(n, kNaN);

    gate::GateConfig cfg;
    const auto points = gate::health_and_gate(matured, h_real, h_drift, h_disagree, cfg);

    for (std::size_t t = 0; t < n; ++t) {
        const auto& p = points[t];
        REQUIRE(p.defined);
        // The std floor pins z to ~0; only rounding residue over the floor remains.
        CHECK(p.h_raw == Catch::Approx(0.0).margin(1e-6));
        CHECK(p.health == Catch::Approx(0.5).margin(1e-6));
        CHECK(p.g == Catch::Approx(0.5).margin(1e-6));
        CHECK(p.active);  // 0.5 >= theta 0.2
        CHECK(p.matured_ic == 0.02);
        if (t + 1 < static_cast<std::size_t>(cfg.min_periods)) {
            CHECK(stats::is_missing(p.z_real));
        } else {
            CHECK(p.z_real == Catch::Approx(0.0).margin(1e-6));
        }
        CHECK(stats::is_missing(p.z_drift));
    }
}

TEST_CASE("health pipeline matches a hand-computed trace") {
    const std::size_t n = 40;
    std::vector<double> matured(n), h_real(n), h_drift(n), h_disagree(n);
    for (std::size_t t = 0; t < n; ++t) {
        matured[t] = 0.01 * static_cast<double>(t % 5);
        h_real[t] = 0.01 * static_cast<double>(t) - 0.1;
        h_drift[t] = t < 10 ? kNaN : 0.5 + 0.01 * static_cast<double>(t % 7);
        h_disagree[t] = t < 5 ? kNaN : 0.3 + 0.005 * static_cast<double>((t * 3) % 11);
    }

    gate::GateConfig cfg;
    cfg.min_periods = 5;
    const auto points = gate::health_and_gate(matured, h_real, h_drift, h_disagree, cfg);

    const auto expanding_z = [&](const std::vector<double>& s, std::size_t t) {
        std::vector<double> obs;
        for (std::size_t u = 0; u <= t; ++u) {
            if (!stats::is_missing(s[u])) obs.push_back(s[u]);
        }
        if (stats::is_missing(s[t]) || obs.size() < 5) return kNaN;
        return (s[t] - stats::mean(obs)) / std::max(stats::sample_std(obs), 1e-9);
    };

    for (const std::size_t t : {7UL, 14UL, 30UL, 39UL}) {
        const auto& p = points[t];
        REQUIRE(p.defined);
        const double zr = expanding_z(h_real, t);
        const double zd = expanding_z(h_drift, t);
        const double zs = expanding_z(h_disagree, t);
        CHECK(close_value(p.z_real, zr));
        CHECK(close_value(p.z_drift, zd));
        CHECK(close_value(p.z_disagree, zs));
        const double h_raw = (stats::is_missing(zr) ? 0.0 : zr) -
                             0.3 * (stats::is_missing(zd) ? 0.0 : zd) -
                             0.3 * (stats::is_missing(zs) ? 0.0 : zs);
        CHECK(p.h_raw == Catch::Approx(h_raw).margin(1e-12));
        const double health = 1.0 / (1.0 + std::exp(-h_raw));
        CHECK(p.health == Catch::Approx(health).margin(1e-12));
        CHECK(p.g == Catch::Approx(std::clamp((health - 0.3) / 0.4, 0.0, 1.0)).margin(1e-12));
        CHECK(p.active == (p.g >= cfg.theta));
    }

    SECTION("warm-up in the realized component blanks the whole point") {
        std::vector<double> gappy = h_real;
        gappy[12] = kNaN;
        const auto pts = gate::health_and_gate(matured, gappy, h_drift, h_disagree, cfg);
        CHECK(!pts[12].defined);
        CHECK(stats::is_missing(pts[12].matured_ic));
        CHECK(stats::is_missing(pts[12].g));
        CHECK(!pts[12].active);
        CHECK(pts[13].defined);
    }

    SECTION("component weights must sum to one") {
        gate::GateConfig bad = cfg;
        bad.drift_weights = {0.5, 0.3, 0.3};
        CHECK_THROWS_AS(gate::health_and_gate(matured, h_real, h_drift, h_disagree, bad),
                        ConfigError);
        bad = cfg;
        bad.theta = 0.0;
        CHECK_THROWS_AS(gate::health_and_gate(matured, h_real, h_drift, h_disagree, bad),
                        ConfigError);
    }
}

TEST_CASE("drift components behave on crafted panels") {
    gate::GateConfig cfg;

    SECTION("identical cross-sections: zero feature and score drift") {
        Panel panel = grid_panel(70, 8, [](AssetDay& a, std::size_t, std::size_t i) {
            a.score_primary = static_cast<double>(i);
            set_feature(a, "vol_20d", 0.2 + 0.01 * static_cast<double>(i));
            set_feature(a, "mom_1m", 0.05);
            set_feature(a, "adv_20d", 1e6);
            set_feature(a, "vix_percentile_252d", 0.4);
            set_feature(a, "market_vol_21d", 0.15);
            set_feature(a, "vol_60d", 0.25);
            set_feature(a, "ret_1d", 0.001);  // constant: excluded from correlations
        });
        const auto drift = gate::h_drift_series(panel, cfg);
        // Before any component warms up the drift is undefined.
        CHECK(stats::is_missing(drift[5]));
        // t >= 60: feat ~0 (constant means), score 0 (identical ECDFs), corr undefined.
        CHECK(drift[65] == Catch::Approx(0.0).margin(1e-6));
    }

    SECTION("co-moving returns push the correlation spike to one") {
        Panel panel = grid_panel(30, 5, [](AssetDay& a, std::size_t d, std::size_t i) {
            a.score_primary = static_cast<double>(i);
            set_feature(a, "vol_20d", 0.2);
            set_feature(a, "mom_1m", 0.05);
            set_feature(a, "adv_20d", 1e6);
            set_feature(a, "vix_percentile_252d", 0.4);
            set_feature(a, "market_vol_21d", 0.15);
            set_feature(a, "vol_60d", 0.25);
            set_feature(a, "ret_1d", 0.01 * std::sin(0.7 * static_cast<double>(d) + 0.3));
        });
        const auto drift = gate::h_drift_series(panel, cfg);
        // t = 19: only the correlation component is defined -> renormalizes to it.
        CHECK(drift[19] == Catch::Approx(1.0).margin(1e-9));
        // t = 25: feature means warm (constant -> 0) and correlation 1:
        // (0.4 * 0 + 0.3 * 1) / 0.7.
        CHECK(drift[25] == Catch::Approx(0.3 / 0.7).margin(1e-9));
    }

    SECTION("opposed returns drive the spike negative") {
        Panel panel = grid_panel(25, 2, [](AssetDay& a, std::size_t d, std::size_t i) {
            a.score_primary = static_cast<double>(i);
            const double r = 0.01 * std::sin(0.9 * static_cast<double>(d));
            set_feature(a, "ret_1d", i == 0 ? r : -r);
        });
        const auto drift = gate::h_drift_series(panel, cfg);
        CHECK(drift[20] == Catch::Approx(-1.0).margin(1e-9));
    }

    SECTION("stationary synthetic market keeps feature drift modest") {
        const Panel panel = generate(default_script(42));
        const auto drift = gate::h_drift_series(panel, cfg);
        std::vector<double> defined;
        for (std::size_t t = 260; t < panel.n_dates(); ++t) {
            if (!stats::is_missing(drift[t])) defined.push_back(drift[t]);
        }
        REQUIRE(defined.size() > 400);
        CHECK(stats::median(defined) < 2.0);
    }
}

TEST_CASE("disagreement signal") {
    SECTION("secondary equal to primary: zero disagreement") {
        Panel panel = grid_panel(3, 6, [](AssetDay& a, std::size_t d, std::size_t i) {
            a.score_primary = static_cast<double>(i) + 0.1 * static_cast<double>(d);
            a.score_secondary = a.score_primary;
        });
        const auto dis = gate::h_disagree_series(panel);
        for (double v : dis) CHECK(v == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("reversed secondary: disagreement two") {
        Panel panel = grid_panel(2, 6, [](AssetDay& a, std::size_t, std::size_t i) {
            a.score_primary = static_cast<double>(i);
            a.score_secondary = -static_cast<double>(i);
        });
        const auto dis = gate::h_disagree_series(panel);
        for (double v : dis) CHECK(v == Catch::Approx(2.0).margin(1e-12));
    }

    SECTION("degenerate secondary cross-section leaves the date undefined") {
        Panel panel = grid_panel(2, 5, [](AssetDay& a, std::size_t d, std::size_t i) {
            a.score_primary = static_cast<double>(i);
            a.score_secondary = d == 0 ? 1.0 : static_cast<double>(i);
        });
        const auto dis = gate::h_disagree_series(panel);
        CHECK(stats::is_missing(dis[0]));
        CHECK(dis[1] == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("fallback: constant dispersion is zero disagreement") {
        Panel panel = grid_panel(10, 5, [](AssetDay& a, std::size_t d, std::size_t i) {
            // Same spread every date, shifted location; no secondary anywhere.
            a.score_primary = static_cast<double>(i) + static_cast<double>(d);
        });
        const auto dis = gate::h_disagree_series(panel);
        for (double v : dis) CHECK(v == Catch::Approx(0.0).margin(1e-12));
    }

    SECTION("fallback: dispersion away from its expanding mean") {
        Panel panel = grid_panel(4, 3, [](AssetDay& a, std::size_t d, std::size_t i) {
            const double scale = d == 3 ? 2.0 : 1.0;
            a.score_primary = scale * static_cast<double>(i);
        });
        const auto dis = gate::h_disagree_series(panel);
        CHECK(dis[2] == Catch::Approx(0.0).margin(1e-12));
        // Dispersion doubles: |2s / ((3s + 2s)/4... wait, mean over 4 dates.
        // sigma for dates 0..2 is s; date 3 is 2s; expanding mean = 5s/4.
        CHECK(dis[3] == Catch::Approx(2.0 / 1.25 - 1.0).margin(1e-12));
    }
}

TEST_CASE("gate evaluation as a good-day classifier") {
    SECTION("oracle predictor: perfect separation and ordered buckets") {
        std::vector<double> ic(16);
        std::vector<double> pred(16);
        for (std::size_t t = 0; t < 16; ++t) {
            ic[t] = (static_cast<double>(t) - 7.5) / 100.0;  // good for t >= 8
            pred[t] = static_cast<double>(t);
        }
        const auto eval = gate::evaluate_gate(pred, ic, 8.0);
        CHECK(eval.n_days == 16);
        CHECK(eval.auroc == 1.0);
        CHECK(eval.precision == 1.0);
        CHECK(eval.recall == 1.0);
        CHECK(eval.abstention == 0.5);
        CHECK(eval.tp == 8);
        CHECK(eval.fp == 0);
        CHECK(eval.tn == 8);
        CHECK(eval.fn == 0);
        for (std::size_t q = 0; q < 4; ++q) CHECK(eval.buckets[q].count == 4);
        CHECK(eval.buckets[0].frac_bad == 1.0);
        CHECK(eval.buckets[3].frac_bad == 0.0);
        CHECK(eval.buckets[0].mean_ic == Catch::Approx(-0.06).margin(1e-12));
        CHECK(eval.buckets[3].mean_ic == Catch::Approx(0.06).margin(1e-12));
        CHECK(eval.bucket_spearman == 1.0);
    }

    SECTION("constant predictor scores half by ties") {
        std::vector<double> ic = {0.1, -0.1, 0.2, -0.2, 0.1, -0.1, 0.3, -0.3};
        const std::vector<double> pred(8, 0.5);
        const auto eval = gate::evaluate_gate(pred, ic, 0.2);
        CHECK(eval.auroc == Catch::Approx(0.5).margin(1e-12));
        CHECK(eval.abstention == 0.0);
    }

    SECTION("undefined dates are dropped before scoring") {
        std::vector<double> ic(20, 0.1);
        std::vector<double> pred(20, 0.8);
        for (std::size_t t = 0; t < 10; ++t) pred[t] = kNaN;
        for (std::size_t t = 10; t < 20; ++t) ic[t] = (t % 2 == 0) ? 0.1 : -0.1;
        ic[3] = -5.0;  // dropped: predictor missing there
        const auto eval = gate::evaluate_gate(pred, ic, 0.2);
        CHECK(eval.n_days == 10);
    }

    SECTION("degenerate inputs throw") {
        const std::vector<double> short_ic = {0.1, -0.1, 0.1, -0.1};
        const std::vector<double> short_pred = {1.0, 0.0, 1.0, 0.0};
        CHECK_THROWS_AS(gate::evaluate_gate(short_pred, short_ic, 0.5), DataError);

        const std::vector<double> one_class(10, 0.2);
        const std::vector<double> pred(10, 0.5);
        CHECK_THROWS_AS(gate::evaluate_gate(pred, one_class, 0.5), UndefinedAUROC);
    }
}

TEST_CASE("gate is causal: prefix recompute equality") {
    const Panel panel = generate(default_script(42));
    gate::GateConfig cfg;
    const auto full = gate::gate_series(panel, cfg);

    const std::size_t cut = 300;
    std::vector<CrossSection> head(panel.sections().begin(),
                                   panel.sections().begin() + static_cast<std::ptrdiff_t>(cut));
    const Panel prefix(std::move(head));
    const auto partial = gate::gate_series(prefix, cfg);

    REQUIRE(partial.size() == cut);
    for (std::size_t t = 0; t < cut; ++t) {
        CHECK(full[t].defined == partial[t].defined);
        CHECK(same_value(full[t].matured_ic, partial[t].matured_ic));
        CHECK(same_value(full[t].h_real, partial[t].h_real));
        CHECK(same_value(full[t].h_drift, partial[t].h_drift));
        CHECK(same_value(full[t].h_disagree, partial[t].h_disagree));
        CHECK(same_value(full[t].h_raw, partial[t].h_raw));
        CHECK(same_value(full[t].g, partial[t].g));
        CHECK(full[t].active == partial[t].active);
    }
}

TEST_CASE("scripted efficacy collapse opens and closes the gate on schedule") {
    const Panel panel = generate(collapse_script(42));
    gate::GateConfig cfg;
    const auto points = gate::gate_series(panel, cfg);
    REQUIRE(points.size() == panel.n_dates());

    const auto abstain_frac = [&](std::size_t lo, std::size_t hi) {
        std::size_t defined = 0;
        std::size_t abstained = 0;
        for (std::size_t t = lo; t < hi && t < points.size(); ++t) {
            if (!points[t].defined) continue;
            ++defined;
            if (!points[t].active) ++abstained;
        }
        REQUIRE(defined > 50);
        return static_cast<double>(abstained) / static_cast<double>(defined);
    };

    // Segments: healthy [0,300), collapse [300,540), recovery [540,780);
    // the gate reacts with the maturation lag plus EWMA smoothing.
    const double healthy_early = abstain_frac(59, 320);
    const double collapsed = abstain_frac(340, 580);
    const double recovered = abstain_frac(640, panel.n_dates());
    CHECK(collapsed > healthy_early);
    CHECK(collapsed > recovered);
    CHECK(collapsed > 0.3);

    SECTION("gate outranks the stress-percentile baseline when stress is uninformative") {
        const auto ic = gate::rank_ic_series(panel, 20);
        std::vector<double> g(points.size(), kNaN);
        for (std::size_t t = 0; t < points.size(); ++t) {
            if (points[t].defined) g[t] = points[t].g;
        }
        const auto eval_g = gate::evaluate_gate(g, ic, cfg.theta);
        CHECK(eval_g.auroc > 0.6);

        std::vector<double> stress(panel.n_dates(), kNaN);
        for (std::size_t t = 0; t < panel.n_dates(); ++t) {
            stress[t] = panel.section(t).members.front().feature("vix_percentile_252d");
        }
        const auto vix = gate::vix_gate_baseline(stress, 20);
        std::vector<double> vix_pred(panel.n_dates(), kNaN);
        for (std::size_t t = 59; t < panel.n_dates(); ++t) {
            vix_pred[t] = vix.active[t] ? 1.0 : 0.0;
        }
        const auto eval_vix = gate::evaluate_gate(vix_pred, ic, 0.5);
        CHECK(eval_vix.auroc > 0.35);
        CHECK(eval_vix.auroc < 0.65);
        CHECK(eval_g.auroc > eval_vix.auroc + 0.05);
    }
}

TEST_CASE("stress-percentile baseline mechanics") {
    SECTION("constant stress never abstains") {
        const std::vector<double> stress(300, 0.4);
        const auto out = gate::vix_gate_baseline(stress, 20);
        for (std::size_t t = 0; t < stress.size(); ++t) {
            CHECK(out.exceed[t] == 0.0);
            CHECK(out.active[t]);
        }
    }

    SECTION("sustained spike flips the verdict once it owns the window majority") {
        std::vector<double> stress(320, 0.2);
        for (std::size_t t = 300; t < 320; ++t) stress[t] = 0.9;
        const auto out = gate::vix_gate_baseline(stress, 10);
        CHECK(out.exceed[299] == 0.0);
        CHECK(out.exceed[300] == 1.0);  // above the 67th percentile of trailing 0.2s
        CHECK(out.active[302]);          // 3 of 10 window days exceeded
        CHECK(!out.active[305]);         // 6 of 10: majority -> abstain
        CHECK(out.frac_exceeded[305] == Catch::Approx(0.6).margin(1e-12));
    }

    SECTION("parameter validation") {
        const std::vector<double> stress(10, 0.4);
        CHECK_THROWS_AS(gate::vix_gate_baseline(stress, 0), ConfigError);
        CHECK_THROWS_AS(gate::vix_gate_baseline(stress, 5, 1.0), ConfigError);
        CHECK_THROWS_AS(gate::vix_gate_baseline(stress, 5, 0.67, 0), ConfigError);
    }
}

TEST_CASE("gate series export") {
    const Panel panel = generate(build_script("2016-02-01", {{80, 0.3, 1.0, 0.3}}, 20, 9));
    gate::GateConfig cfg;
    const auto points = gate::gate_series(panel, cfg);

    const std::string path = "gate_export_test.csv";
    gate::export_gate_csv(path, panel.calendar(), points);

    std::ifstream in(path);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header == "date,matured_ic,h_real,h_drift,h_disagree,H,G,active");

    std::size_t lines = 0;
    std::size_t active_cells = 0;
    std::string line;
    while (std::getline(in, line)) {
        const auto last_comma = line.rfind(',');
        REQUIRE(last_comma != std::string::npos);
        const std::string active = line.substr(last_comma + 1);
        if (!points[lines].defined) {
            CHECK(active.empty());
        } else {
            CHECK((active == "0" || active == "1"));
            ++active_cells;
        }
        ++lines;
    }
    CHECK(lines == points.size());
    CHECK(active_cells > 0);
    std::remove(path.c_str());

    CHECK_THROWS_AS(gate::export_gate_csv(path, panel.calendar(),
                                          std::vector<gate::GatePoint>(3)),
                    InvalidValue);
}

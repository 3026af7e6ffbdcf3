#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "microrl/objectives.hpp"
#include "microrl/policy.hpp"
#include "testutil.hpp"

using namespace microrl;

namespace {

struct GroupFixture {
    PolicyModel cur, old, ref;
    CompletionGroup group;
    AdvantageSet adv;
    ModelDims dims;
};

// Random group sampled from real models; rewards continuous so advantages
// stay away from exact zero.
GroupFixture make_group(Rng& rng, int V, int E, int H, int G, bool distinct_old, bool with_ref) {
    GroupFixture fx;
    fx.dims = {V, E, H};
    fx.cur = testutil::random_model(rng, V, E, H);
    if (distinct_old) {
        fx.old = testutil::random_model(rng, V, E, H);
    } else {
        fx.old = snapshot(fx.cur, Role::old_snapshot);
    }
    fx.ref = testutil::random_model(rng, V, E, H);

    fx.group.prompt = testutil::random_tokens(rng, 1 + static_cast<int>(rng.next_u64() % 3), V);
    for (int i = 0; i < G; ++i) {
        const int len = 1 + static_cast<int>(rng.next_u64() % 8);
        fx.group.completions.push_back(testutil::random_tokens(rng, len, V));
        TokenSequence seq{fx.group.prompt, fx.group.completions.back()};
        fx.group.logp_current.push_back(log_probs(fx.cur, seq));
        fx.group.logp_old.push_back(log_probs(fx.old, seq));
        if (with_ref) fx.group.logp_ref.push_back(log_probs(fx.ref, seq));
    }
    while (true) {
        fx.group.rewards.clear();
        for (int i = 0; i < G; ++i) fx.group.rewards.push_back(1.2 * rng.next_double());
        const AdvantageSet a = compute_advantages(fx.group.rewards);
        if (a.stddev > 0.05) {
            fx.adv = a;
            break;
        }
    }
    return fx;
}

// True when every per-token ratio stays away from the clip boundaries, where
// the surrogate is non-differentiable and finite differences are invalid.
bool clear_of_clip_boundary(const GroupFixture& fx, double eps, double margin = 1e-3) {
    for (std::size_t i = 0; i < fx.group.completions.size(); ++i) {
        for (std::size_t t = 0; t < fx.group.logp_current[i].size(); ++t) {
            const double r = std::exp(fx.group.logp_current[i][t] - fx.group.logp_old[i][t]);
            if (std::fabs(r - (1.0 - eps)) < margin || std::fabs(r - (1.0 + eps)) < margin) {
                return false;
            }
        }
    }
    return true;
}

// Test-side objective formulas written straight from the definitions, using
// the independent forward pass.
double naive_clipped_objective(const std::vector<double>& theta, const GroupFixture& fx,
                               const std::vector<double>& advs, double eps, double beta) {
    const double G = static_cast<double>(fx.group.completions.size());
    double total = 0.0;
    for (std::size_t i = 0; i < fx.group.completions.size(); ++i) {
        const auto lp = testutil::naive_log_probs(theta, fx.dims.vocab, fx.dims.embed,
                                                  fx.dims.hidden, fx.group.prompt,
                                                  fx.group.completions[i]);
        double per = 0.0;
        for (std::size_t t = 0; t < lp.size(); ++t) {
            const double r = std::exp(lp[t] - fx.group.logp_old[i][t]);
            const double cl = std::min(std::max(r, 1.0 - eps), 1.0 + eps);
            const double surr = std::min(r * advs[i], cl * advs[i]);
            double kl = 0.0;
            if (beta != 0.0) {
                const double rho = std::exp(fx.group.logp_ref[i][t] - lp[t]);
                kl = rho - std::log(rho) - 1.0;
            }
            per += surr - beta * kl;
        }
        total += per / (G * static_cast<double>(lp.size()));
    }
    return total;
}

double naive_linear_objective(const std::vector<double>& theta, const GroupFixture& fx,
                              const std::vector<double>& coeffs, double beta) {
    const double G = static_cast<double>(fx.group.completions.size());
    double total = 0.0;
    for (std::size_t i = 0; i < fx.group.completions.size(); ++i) {
        const auto lp = testutil::naive_log_probs(theta, fx.dims.vocab, fx.dims.embed,
                                                  fx.dims.hidden, fx.group.prompt,
                                                  fx.group.completions[i]);
        double per = 0.0;
        for (std::size_t t = 0; t < lp.size(); ++t) {
            double kl = 0.0;
            if (beta != 0.0) {
                const double rho = std::exp(fx.group.logp_ref[i][t] - lp[t]);
                kl = rho - std::log(rho) - 1.0;
            }
            per += coeffs[i] * lp[t] - beta * kl;
        }
        total += per / (G * static_cast<double>(lp.size()));
    }
    return total;
}

void check_grad_against_fd(const GroupFixture& fx, const GradientBuffer& buf,
                           const std::function<double(const std::vector<double>&)>& objective) {
    std::vector<double> theta = flat_params(fx.cur);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double fd = testutil::central_diff(objective, theta, i);
        CHECK(testutil::rel_err(buf.g[i], fd) < 1e-4);
    }
}

}  // namespace

TEST_CASE("advantages: frozen examples") {
    AdvantageSet a = compute_advantages({1.0, 1.0, 1.0, 1.0});
    for (double x : a.advantages) CHECK(x == 0.0);
    for (double x : a.truncated) CHECK(x == 0.0);
    CHECK(a.stddev == 0.0);

    // constants whose running sum rounds away from an exact mean still yield
    // exactly zero advantages
    a = compute_advantages(std::vector<double>(8, 0.1));
    for (double x : a.advantages) CHECK(x == 0.0);
    CHECK(a.stddev == 0.0);
    CHECK(a.mean == 0.1);

    // one completion at 1.1, seven at 0.1
    std::vector<double> rewards{1.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
    a = compute_advantages(rewards);
    CHECK(a.mean == doctest::Approx(0.225).epsilon(1e-12));
    CHECK(a.stddev == doctest::Approx(0.33071891388307384).epsilon(1e-9));
    CHECK(a.advantages[0] == doctest::Approx(2.6457513110645906).epsilon(1e-9));  // sqrt(7)
    for (int i = 1; i < 8; ++i) {
        CHECK(a.advantages[i] == doctest::Approx(-0.3779644730092272).epsilon(1e-9));  // -1/sqrt(7)
        CHECK(a.truncated[i] == 0.0);
    }
    CHECK(a.truncated[0] == a.advantages[0]);

    a = compute_advantages({0.0, 1.0});
    CHECK(a.advantages[0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(a.advantages[1] == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS_AS(compute_advantages({1.0}), std::invalid_argument);
    CHECK_THROWS_AS(compute_advantages({1.0, 2.0}, 0.0), std::invalid_argument);
}

TEST_CASE("advantages: standardization and floor properties") {
    Rng rng(101);
    const double vals[] = {0.0, 0.1, 1.0, 1.1};
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> rewards(8);
        bool constant = true;
        for (std::size_t i = 0; i < rewards.size(); ++i) {
            rewards[i] = vals[rng.next_u64() % 4];
            if (rewards[i] != rewards[0]) constant = false;
        }
        if (constant) continue;
        const AdvantageSet a = compute_advantages(rewards);
        double mean = 0.0;
        for (double x : a.advantages) mean += x;
        mean /= 8.0;
        CHECK(std::fabs(mean) < 1e-9);
        double var = 0.0;
        for (double x : a.advantages) var += (x - mean) * (x - mean);
        var /= 8.0;
        CHECK(std::fabs(std::sqrt(var) - 1.0) < 1e-9);
        for (std::size_t i = 0; i < 8; ++i) {
            CHECK(a.truncated[i] == std::max(a.advantages[i], 0.0));
        }
    }

    // near-constant rewards engage the floor and stay finite
    const AdvantageSet tiny = compute_advantages({0.5, 0.5 + 1e-9, 0.5, 0.5});
    for (double x : tiny.advantages) {
        CHECK(std::isfinite(x));
        CHECK(std::fabs(x) < 1e-2);
    }

    // shift invariance
    Rng rng2(17);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> r(6);
        for (double& x : r) x = rng2.next_double();
        std::vector<double> shifted = r;
        for (double& x : shifted) x += 0.37;
        const AdvantageSet a = compute_advantages(r);
        const AdvantageSet b = compute_advantages(shifted);
        for (std::size_t i = 0; i < r.size(); ++i) {
            CHECK(std::fabs(a.advantages[i] - b.advantages[i]) < 1e-9);
        }
    }
}

TEST_CASE("ratio, clip and KL estimator") {
    CHECK(policy_ratio(-2.0, -2.0) == 1.0);
    CHECK(policy_ratio(-2.0, -2.5) == doctest::Approx(std::exp(0.5)).epsilon(1e-12));

    CHECK(clip(1.3, 0.8, 1.2) == 1.2);
    CHECK(clip(0.5, 0.8, 1.2) == 0.8);
    CHECK(clip(1.0, 0.8, 1.2) == 1.0);
    CHECK_THROWS_AS(clip(1.0, 2.0, 1.0), std::invalid_argument);

    CHECK(kl_estimate(-1.7, -1.7) == 0.0);
    // rho = 2 -> 2 - ln 2 - 1
    const double lc = -2.0, lr = lc + std::log(2.0);
    CHECK(kl_estimate(lc, lr) == doctest::Approx(0.30685281944005469).epsilon(1e-9));

    Rng rng(55);
    for (int i = 0; i < 10000; ++i) {
        const double a = -8.0 * rng.next_double();
        const double b = -8.0 * rng.next_double();
        const double kl = kl_estimate(a, b);
        CHECK(std::isfinite(kl));
        CHECK(kl >= 0.0);
    }
}

TEST_CASE("first update after a snapshot: clipped and unclipped paths agree") {
    Rng rng(301);
    for (double eps : {0.1, 0.2, 0.5}) {
        for (double beta : {0.0, 0.005}) {
            for (int trial = 0; trial < 15; ++trial) {
                GroupFixture fx = make_group(rng, 10, 4, 8, 8, /*distinct_old=*/false,
                                             /*with_ref=*/true);
                ObjectiveConfig cfg;
                cfg.epsilon = eps;
                cfg.kl_beta = beta;
                GradientBuffer a(fx.cur.layout().total), b(fx.cur.layout().total);
                grpo_gradient(fx.group, fx.adv, cfg, fx.cur, a);
                rgra_gradient(fx.group, fx.adv, cfg, fx.cur, b);
                for (std::size_t i = 0; i < a.g.size(); ++i) {
                    CHECK(std::fabs(a.g[i] - b.g[i]) <=
                          1e-10 * std::max(1.0, std::fabs(a.g[i])));
                }
                // ratios are exactly one here, so the buffers should be identical
                CHECK(a.g == b.g);
            }
        }
    }
}

TEST_CASE("ratios against the sampling snapshot are one right after snapshotting") {
    Rng rng(302);
    GroupFixture fx = make_group(rng, 12, 5, 9, 8, /*distinct_old=*/false, /*with_ref=*/false);
    for (std::size_t i = 0; i < fx.group.completions.size(); ++i) {
        for (std::size_t t = 0; t < fx.group.logp_current[i].size(); ++t) {
            const double r = policy_ratio(fx.group.logp_current[i][t], fx.group.logp_old[i][t]);
            CHECK(std::fabs(r - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("truncation: non-positive advantages contribute nothing when beta is zero") {
    Rng rng(303);
    for (int trial = 0; trial < 25; ++trial) {
        GroupFixture fx = make_group(rng, 9, 4, 7, 8, /*distinct_old=*/true, /*with_ref=*/false);
        ObjectiveConfig cfg;
        cfg.kl_beta = 0.0;

        GradientBuffer pos(fx.cur.layout().total);
        grpo_pos_gradient(fx.group, fx.adv, cfg, fx.cur, pos);

        // reference: clipped-surrogate accumulation restricted to completions
        // with positive advantage, same per-completion scale
        GradientBuffer restricted(fx.cur.layout().total);
        const double G = static_cast<double>(fx.group.size());
        for (int i = 0; i < fx.group.size(); ++i) {
            if (!(fx.adv.advantages[static_cast<std::size_t>(i)] > 0.0)) continue;
            const double scale =
                1.0 / (G * static_cast<double>(fx.group.completions[static_cast<std::size_t>(i)].size()));
            const TokenTerms terms = grpo_token_terms(
                fx.group.logp_current[static_cast<std::size_t>(i)],
                fx.group.logp_old[static_cast<std::size_t>(i)], nullptr,
                fx.adv.advantages[static_cast<std::size_t>(i)], cfg, scale);
            TokenSequence seq{fx.group.prompt, fx.group.completions[static_cast<std::size_t>(i)]};
            accumulate_weighted_logprob_grad(fx.cur, seq, terms.weights, restricted);
        }
        CHECK(pos.g == restricted.g);  // bit-level
    }
}

TEST_CASE("truncation: all-positive advantage sets reduce to the plain clipped update") {
    Rng rng(304);
    GroupFixture fx = make_group(rng, 9, 4, 7, 6, /*distinct_old=*/true, /*with_ref=*/true);
    AdvantageSet forced;
    for (int i = 0; i < 6; ++i) forced.advantages.push_back(0.1 + rng.next_double());
    forced.truncated = forced.advantages;
    ObjectiveConfig cfg;
    GradientBuffer a(fx.cur.layout().total), b(fx.cur.layout().total);
    grpo_gradient(fx.group, forced, cfg, fx.cur, a);
    grpo_pos_gradient(fx.group, forced, cfg, fx.cur, b);
    CHECK(a.g == b.g);
}

TEST_CASE("negative-advantage completions keep only the KL pull under truncation") {
    Rng rng(305);
    GroupFixture fx = make_group(rng, 9, 4, 7, 4, /*distinct_old=*/true, /*with_ref=*/true);
    ObjectiveConfig cfg;
    cfg.kl_beta = 0.01;
    // single-completion group view per negative completion: its truncated
    // weight must equal the pure KL weight
    for (int i = 0; i < 4; ++i) {
        if (fx.adv.advantages[static_cast<std::size_t>(i)] >= 0.0) continue;
        const TokenTerms t = grpo_token_terms(fx.group.logp_current[static_cast<std::size_t>(i)],
                                              fx.group.logp_old[static_cast<std::size_t>(i)],
                                              &fx.group.logp_ref[static_cast<std::size_t>(i)], 0.0,
                                              cfg, 1.0);
        for (std::size_t k = 0; k < t.weights.size(); ++k) {
            const double rho = std::exp(fx.group.logp_ref[static_cast<std::size_t>(i)][k] -
                                        fx.group.logp_current[static_cast<std::size_t>(i)][k]);
            CHECK(t.weights[k] == doctest::Approx(cfg.kl_beta * (rho - 1.0)).epsilon(1e-9));
        }
    }
}

TEST_CASE("clipped-surrogate gradient matches finite differences") {
    Rng rng(401);
    for (double beta : {0.0, 0.005}) {
        int done = 0;
        while (done < 2) {
            GroupFixture fx = make_group(rng, 8, 3, 6, 4, /*distinct_old=*/true, /*with_ref=*/true);
            ObjectiveConfig cfg;
            cfg.epsilon = 0.2;
            cfg.kl_beta = beta;
            if (!clear_of_clip_boundary(fx, cfg.epsilon)) continue;
            ++done;

            GradientBuffer buf(fx.cur.layout().total);
            const ObjectiveStats stats = grpo_gradient(fx.group, fx.adv, cfg, fx.cur, buf);
            auto objective = [&](const std::vector<double>& theta) {
                return naive_clipped_objective(theta, fx, fx.adv.advantages, cfg.epsilon, beta);
            };
            CHECK(stats.objective ==
                  doctest::Approx(objective(flat_params(fx.cur))).epsilon(1e-10));
            check_grad_against_fd(fx, buf, objective);
        }
    }
}

TEST_CASE("truncated-surrogate gradient matches finite differences") {
    Rng rng(402);
    int done = 0;
    while (done < 2) {
        GroupFixture fx = make_group(rng, 8, 3, 6, 4, /*distinct_old=*/true, /*with_ref=*/true);
        ObjectiveConfig cfg;
        cfg.kl_beta = 0.005;
        if (!clear_of_clip_boundary(fx, cfg.epsilon)) continue;
        ++done;
        GradientBuffer buf(fx.cur.layout().total);
        grpo_pos_gradient(fx.group, fx.adv, cfg, fx.cur, buf);
        auto objective = [&](const std::vector<double>& theta) {
            return naive_clipped_objective(theta, fx, fx.adv.truncated, cfg.epsilon, cfg.kl_beta);
        };
        check_grad_against_fd(fx, buf, objective);
    }
}

TEST_CASE("score-function gradients match finite differences") {
    Rng rng(403);
    for (double beta : {0.0, 0.005}) {
        GroupFixture fx = make_group(rng, 8, 3, 6, 4, /*distinct_old=*/false, /*with_ref=*/true);
        ObjectiveConfig cfg;
        cfg.kl_beta = beta;

        GradientBuffer buf(fx.cur.layout().total);
        const ObjectiveStats stats = rgra_gradient(fx.group, fx.adv, cfg, fx.cur, buf);
        auto objective = [&](const std::vector<double>& theta) {
            return naive_linear_objective(theta, fx, fx.adv.advantages, beta);
        };
        CHECK(stats.objective == doctest::Approx(objective(flat_params(fx.cur))).epsilon(1e-10));
        check_grad_against_fd(fx, buf, objective);

        GradientBuffer rawbuf(fx.cur.layout().total);
        reinforce_raw_gradient(fx.group, cfg, fx.cur, rawbuf);
        auto raw_objective = [&](const std::vector<double>& theta) {
            return naive_linear_objective(theta, fx, fx.group.rewards, beta);
        };
        check_grad_against_fd(fx, rawbuf, raw_objective);
    }
}

TEST_CASE("raw-reward gradient scales linearly in the rewards when beta is zero") {
    Rng rng(404);
    GroupFixture fx = make_group(rng, 8, 3, 6, 4, /*distinct_old=*/false, /*with_ref=*/false);
    ObjectiveConfig cfg;
    cfg.kl_beta = 0.0;
    GradientBuffer base(fx.cur.layout().total);
    reinforce_raw_gradient(fx.group, cfg, fx.cur, base);

    for (double c : {2.0, 3.0}) {
        CompletionGroup scaled = fx.group;
        for (double& r : scaled.rewards) r *= c;
        GradientBuffer buf(fx.cur.layout().total);
        reinforce_raw_gradient(scaled, cfg, fx.cur, buf);
        for (std::size_t i = 0; i < buf.g.size(); ++i) {
            CHECK(std::fabs(buf.g[i] - c * base.g[i]) <=
                  1e-12 * std::max(1.0, std::fabs(buf.g[i])));
        }
    }
}

TEST_CASE("KL term vanishes when the reference equals the current policy") {
    Rng rng(405);
    GroupFixture fx = make_group(rng, 8, 3, 6, 4, /*distinct_old=*/false, /*with_ref=*/false);
    fx.group.logp_ref = fx.group.logp_current;  // identical policies

    ObjectiveConfig with_kl;
    with_kl.kl_beta = 0.01;
    ObjectiveConfig no_kl;
    no_kl.kl_beta = 0.0;

    GradientBuffer a(fx.cur.layout().total), b(fx.cur.layout().total);
    const ObjectiveStats sa = rgra_gradient(fx.group, fx.adv, with_kl, fx.cur, a);
    rgra_gradient(fx.group, fx.adv, no_kl, fx.cur, b);
    CHECK(a.g == b.g);
    CHECK(sa.kl_mean == 0.0);
}

TEST_CASE("identical rewards produce a zero update when beta is zero") {
    Rng rng(406);
    GroupFixture fx = make_group(rng, 8, 3, 6, 4, /*distinct_old=*/false, /*with_ref=*/false);
    fx.group.rewards = {1.0, 1.0, 1.0, 1.0};
    const AdvantageSet adv = compute_advantages(fx.group.rewards);
    ObjectiveConfig cfg;
    cfg.kl_beta = 0.0;
    GradientBuffer a(fx.cur.layout().total);
    rgra_gradient(fx.group, adv, cfg, fx.cur, a);
    grpo_gradient(fx.group, adv, cfg, fx.cur, a);
    grpo_pos_gradient(fx.group, adv, cfg, fx.cur, a);
    for (double x : a.g) CHECK(x == 0.0);
}

TEST_CASE("objective gradients validate their inputs") {
    Rng rng(407);
    GroupFixture fx = make_group(rng, 8, 3, 6, 4, /*distinct_old=*/false, /*with_ref=*/false);
    ObjectiveConfig cfg;  // beta != 0 but no reference log-probs
    GradientBuffer buf(fx.cur.layout().total);
    CHECK_THROWS_AS(rgra_gradient(fx.group, fx.adv, cfg, fx.cur, buf), std::invalid_argument);

    CompletionGroup no_old = fx.group;
    no_old.logp_old.clear();
    cfg.kl_beta = 0.0;
    CHECK_THROWS_AS(grpo_gradient(no_old, fx.adv, cfg, fx.cur, buf), std::invalid_argument);

    AdvantageSet wrong;
    wrong.advantages = {1.0};
    wrong.truncated = {1.0};
    CHECK_THROWS_AS(rgra_gradient(fx.group, wrong, cfg, fx.cur, buf), std::invalid_argument);

    CompletionGroup empty;
    CHECK_THROWS_AS(rgra_gradient(empty, fx.adv, cfg, fx.cur, buf), std::invalid_argument);

    GradientBuffer small(3);
    CHECK_THROWS_AS(rgra_gradient(fx.group, fx.adv, cfg, fx.cur, small), std::invalid_argument);

    CHECK(method_from_name("rgra") == Method::rgra);
    CHECK(method_name(Method::grpo_pos) == "grpo_pos");
    CHECK_THROWS_AS(method_from_name("nope"), std::invalid_argument);
}

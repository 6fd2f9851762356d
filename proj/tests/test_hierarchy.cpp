#include <algorithm>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "hpipe/error.hpp"
#include "hpipe/hierarchy.hpp"

using namespace hpipe;
using test::make_tree;
using test::StageSpec;

namespace {

bool mentions(const ValidationReport& report, const std::string& needle) {
    return std::any_of(report.violations.begin(), report.violations.end(),
                       [&](const std::string& v) { return v.find(needle) != std::string::npos; });
}

// root with DNN2-style internal stage owning 6 of 10 uniform leaves
Hierarchy ten_leaf_tree() {
    std::vector<StageSpec> specs(12, StageSpec{0.01, 0.001, {}});
    specs[0] = {0.01, 0.0, {1, 2, 9, 10, 11}};
    specs[2] = {0.01, 0.001, {3, 4, 5, 6, 7, 8}};  // the 6-leaf subtree
    return make_tree(specs);
}

}  // namespace

TEST_CASE("validate accepts the worked-example fixture") {
    const Hierarchy h = test::cifar_fixture();
    CHECK(validate(h).ok());
}

TEST_CASE("validate reports probability sum violations") {
    Hierarchy h = make_tree({{0.01, 0.0, {1, 2}}, {0.01, 0.001, {}}, {0.01, 0.001, {}}},
                            {{1, 0.5}, {2, 0.4}});
    const auto report = validate(h);
    CHECK_FALSE(report.ok());
    CHECK(mentions(report, "leaf probabilities sum to 0.9"));
}

TEST_CASE("validate reports duplicate ids") {
    Hierarchy h = make_tree({{0.01, 0.0, {1, 2, 3}}, {0.01, 0.001, {}}, {0.01, 0.001, {}},
                             {0.01, 0.001, {}}});
    h.stages[3].id = 3;
    h.stages[2].id = 3;  // two stages share id 3
    const auto report = validate(h);
    CHECK_FALSE(report.ok());
    CHECK(mentions(report, "duplicate stage id 3"));
}

TEST_CASE("validate reports orphans, cycles, and bad latencies") {
    SUBCASE("orphan") {
        Hierarchy h = make_tree({{0.01, 0.0, {1}}, {0.01, 0.001, {}}, {0.01, 0.001, {}}});
        const auto report = validate(h);
        CHECK(mentions(report, "stage 2 is an orphan"));
    }
    SUBCASE("cycle") {
        Hierarchy h = make_tree({{0.01, 0.0, {}}, {0.01, 0.001, {2}}, {0.01, 0.001, {1}}});
        const auto report = validate(h);
        CHECK(mentions(report, "cycle"));
    }
    SUBCASE("nonpositive latency") {
        Hierarchy h = make_tree({{0.0, 0.0, {1}}, {0.01, 0.001, {}}});
        CHECK(mentions(validate(h), "nonpositive latency"));
    }
    SUBCASE("negative transfer") {
        Hierarchy h = make_tree({{0.01, 0.0, {1}}, {0.01, -0.001, {}}});
        CHECK(mentions(validate(h), "negative transfer"));
    }
    SUBCASE("root transfer must be zero") {
        Hierarchy h = make_tree({{0.01, 0.5, {1}}, {0.01, 0.001, {}}});
        CHECK(mentions(validate(h), "root stage must have transfer time 0"));
    }
    SUBCASE("two parents") {
        Hierarchy h = make_tree({{0.01, 0.0, {1, 2}}, {0.01, 0.001, {2}}, {0.01, 0.001, {}}});
        CHECK(mentions(validate(h), "more than one parent"));
    }
}

TEST_CASE("compute_rates matches the six-of-ten-leaves example") {
    const UsageRates rates = compute_rates(ten_leaf_tree());
    CHECK(rates.of(2) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(rates.of(0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("compute_rates identity and hand-enumerated cases") {
    SUBCASE("single stage") {
        Hierarchy h = make_tree({{0.01, 0.0, {}}}, {{0, 1.0}});
        CHECK(compute_rates(h).of(0) == doctest::Approx(1.0));
    }
    SUBCASE("internal stage holding the first two of four leaves") {
        Hierarchy h = make_tree({{0.01, 0.0, {1, 4, 5}},
                                 {0.01, 0.001, {2, 3}},
                                 {0.01, 0.001, {}},
                                 {0.01, 0.001, {}},
                                 {0.01, 0.001, {}},
                                 {0.01, 0.001, {}}},
                                {{2, 0.1}, {3, 0.2}, {4, 0.3}, {5, 0.4}});
        CHECK(compute_rates(h).of(1) == doctest::Approx(0.3).epsilon(1e-12));
    }
    SUBCASE("invalid hierarchy is rejected") {
        Hierarchy h = make_tree({{0.0, 0.0, {}}});
        CHECK_THROWS_AS(compute_rates(h), DomainError);
    }
}

TEST_CASE("depth") {
    CHECK(depth(make_tree({{0.01, 0.0, {1, 2}}, {0.01, 0.001, {}}, {0.01, 0.001, {}}})) == 2);
    CHECK(depth(test::caltech_fixture()) == 5);
    CHECK(depth(test::cifar_fixture()) == 3);
    CHECK(depth(test::svhn_fixture()) == 2);
    CHECK(depth(make_tree({{0.01, 0.0, {}}})) == 1);
}

TEST_CASE("root_leaf_paths") {
    SUBCASE("two leaves") {
        const auto paths =
            root_leaf_paths(make_tree({{0.01, 0.0, {1, 2}}, {0.01, 0.001, {}}, {0.01, 0.001, {}}}));
        REQUIRE(paths.size() == 2);
        CHECK(paths[0] == std::vector<StageId>{0, 1});
        CHECK(paths[1] == std::vector<StageId>{0, 2});
    }
    SUBCASE("chain") {
        const auto paths =
            root_leaf_paths(make_tree({{0.01, 0.0, {1}}, {0.01, 0.001, {2}}, {0.01, 0.001, {}}}));
        REQUIRE(paths.size() == 1);
        CHECK(paths[0] == std::vector<StageId>{0, 1, 2});
    }
    SUBCASE("ten-leaf tree yields ten paths") {
        CHECK(root_leaf_paths(ten_leaf_tree()).size() == 10);
    }
}

TEST_CASE("rate invariants hold on random hierarchies") {
    std::mt19937_64 rng(20240811);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> size(1, 12);
        const Hierarchy h = test::random_hierarchy(rng, size(rng));
        REQUIRE(validate(h).ok());
        const UsageRates rates = compute_rates(h);

        double leaf_sum = 0.0;
        for (StageId s = 0; s < h.size(); ++s) {
            if (h.stage(s).is_leaf()) leaf_sum += rates.of(s);
        }
        CHECK(leaf_sum == doctest::Approx(1.0).epsilon(1e-9));

        for (StageId s = 0; s < h.size(); ++s) {
            const Stage& stage = h.stage(s);
            if (stage.is_leaf()) continue;
            double child_sum = 0.0;
            for (StageId c : stage.children) child_sum += rates.of(c);
            CHECK(rates.of(s) == doctest::Approx(child_sum).epsilon(1e-9));
        }

        const auto paths = root_leaf_paths(h);
        int max_len = 0;
        for (const auto& path : paths) {
            max_len = std::max(max_len, static_cast<int>(path.size()));
            for (size_t i = 0; i + 1 < path.size(); ++i) {
                CHECK(rates.of(path[i]) >= rates.of(path[i + 1]) - 1e-12);
            }
        }
        CHECK(depth(h) == max_len);

        // pure function: same input, same output
        const UsageRates again = compute_rates(h);
        CHECK(again.rate == rates.rate);
    }
}

TEST_CASE("hierarchy json round trip") {
    const Hierarchy h = test::cifar_fixture();
    const Hierarchy reparsed = Hierarchy::from_json(h.to_json());
    CHECK(reparsed.to_json() == h.to_json());
    CHECK(reparsed.stages.size() == h.stages.size());
}

TEST_CASE("hierarchy parser rejects unknown top-level keys") {
    CHECK_THROWS_AS(Hierarchy::parse(R"({"stages": [], "extra": 1})"), ConfigError);
    CHECK_THROWS_WITH_AS(Hierarchy::parse(R"({"stages": [], "notakey": 1})"),
                         doctest::Contains("unknown key \"notakey\""), ConfigError);
}

TEST_CASE("hierarchy parser reports position of malformed input") {
    try {
        Hierarchy::parse("{\n  \"stages\": [\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line") != std::string::npos);
        CHECK(msg.find("column") != std::string::npos);
    }
}

TEST_CASE("uniform default and renormalization") {
    SUBCASE("omitted probabilities mean uniform") {
        Hierarchy h = make_tree({{0.01, 0.0, {1, 2, 3, 4}},
                                 {0.01, 0.001, {}},
                                 {0.01, 0.001, {}},
                                 {0.01, 0.001, {}},
                                 {0.01, 0.001, {}}});
        const UsageRates rates = compute_rates(h);
        for (StageId s = 1; s <= 4; ++s) {
            CHECK(rates.of(s) == doctest::Approx(0.25).epsilon(1e-12));
        }
    }
    SUBCASE("probabilities within tolerance renormalize to exactly one") {
        Hierarchy h = make_tree({{0.01, 0.0, {1, 2}}, {0.01, 0.001, {}}, {0.01, 0.001, {}}},
                                {{1, 0.5 + 2e-10}, {2, 0.5}});
        REQUIRE(validate(h).ok());
        const UsageRates rates = compute_rates(h);
        CHECK(rates.of(1) + rates.of(2) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("load reports unreadable files") {
    CHECK_THROWS_AS(Hierarchy::load("/nonexistent/h.json"), ConfigError);
}

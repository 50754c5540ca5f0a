#include <doctest.h>

#include <cmath>
#include <numeric>

#include "hvla/aggregator.hpp"
#include "hvla/rng.hpp"

using namespace hvla;

namespace {

Tensor random_map(int64_t c, int64_t h, int64_t w, uint64_t seed, bool rg = false) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(c * h * w));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor::from_data({c, h, w}, std::move(v), rg);
}

}  // namespace

TEST_CASE("keep_count formula") {
    CHECK(keep_count(256, 0.85) == 38);
    CHECK(keep_count(16, 0.85) == 2);
    CHECK(keep_count(32, 0.9) == 3);
    CHECK(keep_count(64, 0.9) == 6);
    CHECK(keep_count(128, 0.9) == 12);
    CHECK(keep_count(20, 0.9) == 2);   // exact-rational boundary
    CHECK(keep_count(1, 0.9) == 1);    // floor clamps to the 1 minimum
    CHECK(keep_count(5, 0.0) == 5);
    CHECK_THROWS_AS(keep_count(4, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(keep_count(4, -0.1), std::invalid_argument);
}

TEST_CASE("drop_channels: determinism, order, ratio zero") {
    Rng a(99), b(99);
    auto ka = drop_channels(64, 0.9, a);
    auto kb = drop_channels(64, 0.9, b);
    CHECK(ka == kb);
    CHECK(ka.size() == 6);
    CHECK(std::is_sorted(ka.begin(), ka.end()));

    Rng c(5);
    auto all = drop_channels(7, 0.0, c);
    std::vector<int64_t> want{0, 1, 2, 3, 4, 5, 6};
    CHECK(all == want);
}

TEST_CASE("pool_flatten: constants, identity grid, quadrants") {
    auto constant = Tensor::full({3, 8, 8}, 2.5);
    auto tok = pool_flatten(constant, 4);
    CHECK(tok.shape() == Shape{3, 16});
    for (double v : tok.data()) CHECK(v == doctest::Approx(2.5));

    auto m = random_map(2, 4, 4, 3);
    auto same = pool_flatten(m, 4);
    for (size_t i = 0; i < 32; ++i) CHECK(same.data()[i] == doctest::Approx(m.data()[i]));

    std::vector<double> q(16);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) q[static_cast<size_t>(y * 4 + x)] = 1.0 + (y / 2) * 2 + (x / 2);
    auto quad = pool_flatten(Tensor::from_data({1, 4, 4}, q), 2);
    CHECK(quad.at({0, 0}) == doctest::Approx(1.0));
    CHECK(quad.at({0, 1}) == doctest::Approx(2.0));
    CHECK(quad.at({0, 2}) == doctest::Approx(3.0));
    CHECK(quad.at({0, 3}) == doctest::Approx(4.0));
}

TEST_CASE("aggregate: desk-config token counts follow the keep rule") {
    AggregatorConfig cfg;
    Aggregator agg(cfg, {16, 32, 64, 128}, 11);
    std::vector<Tensor> maps{random_map(16, 16, 16, 1), random_map(32, 8, 8, 2),
                             random_map(64, 4, 4, 3), random_map(128, 2, 2, 4)};
    Rng drop(42);
    auto seq = agg.build_tokens(maps, drop);
    CHECK(seq.tokens.dim(0) == 2 + 3 + 6 + 12);
    CHECK(seq.tokens.dim(1) == 16);
    CHECK(seq.positions.size() == 23);
    // positions are global pre-drop channel ids, strictly increasing
    CHECK(std::is_sorted(seq.positions.begin(), seq.positions.end()));
    CHECK(seq.positions.back() < 16 + 32 + 64 + 128);
    CHECK(seq.level_of_origin.front() == 0);
    CHECK(seq.level_of_origin.back() == 3);

    auto z = agg.attend(seq);
    CHECK(z.shape() == Shape{cfg.d_out});
}

TEST_CASE("aggregate: deterministic given identical drop rng state") {
    AggregatorConfig cfg;
    cfg.d_out = 8;
    Aggregator agg(cfg, {4, 6, 8, 10}, 5);
    std::vector<Tensor> maps{random_map(4, 8, 8, 1), random_map(6, 4, 4, 2),
                             random_map(8, 2, 2, 3), random_map(10, 1, 1, 4)};
    Rng d1(7), d2(7);
    auto z1 = agg.forward(maps, d1);
    auto z2 = agg.forward(maps, d2);
    for (int64_t i = 0; i < z1.numel(); ++i) CHECK(z1.data()[i] == z2.data()[i]);
}

TEST_CASE("aggregate: zero weights pass the layer-normalized CLS path only") {
    AggregatorConfig cfg;
    cfg.grid = 2;
    cfg.heads = 2;
    cfg.d_out = 4;  // identity-sized output map
    Aggregator agg(cfg, {3, 4, 5, 6}, 1);
    for (auto& [name, p] : agg.params()) {
        auto v = p.raw_data();
        std::fill(v.begin(), v.end(), 0.0);
    }
    // identity output map, distinctive CLS/pos rows
    {
        auto w = agg.params().at("agg.out.w").raw_data();
        for (int64_t i = 0; i < 4; ++i) w[static_cast<size_t>(i * 4 + i)] = 1.0;
        auto cls = agg.params().at("agg.cls").raw_data();
        for (size_t i = 0; i < cls.size(); ++i) cls[i] = 0.3 * static_cast<double>(i + 1);
    }
    std::vector<Tensor> maps_a{random_map(3, 4, 4, 10), random_map(4, 2, 2, 11),
                               random_map(5, 2, 2, 12), random_map(6, 1, 1, 13)};
    std::vector<Tensor> maps_b{random_map(3, 4, 4, 20), random_map(4, 2, 2, 21),
                               random_map(5, 2, 2, 22), random_map(6, 1, 1, 23)};
    Rng d1(3), d2(3);
    auto za = agg.forward(maps_a, d1);
    auto zb = agg.forward(maps_b, d2);
    for (int64_t i = 0; i < 4; ++i) CHECK(za.data()[i] == doctest::Approx(zb.data()[i]));

    // and the value is the layer-normalized CLS embedding
    std::vector<double> cls{0.3, 0.6, 0.9, 1.2};
    double m = std::accumulate(cls.begin(), cls.end(), 0.0) / 4.0;
    double var = 0.0;
    for (double c : cls) var += (c - m) * (c - m);
    var /= 4.0;
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(za.data()[i] ==
              doctest::Approx((cls[static_cast<size_t>(i)] - m) / std::sqrt(var + 1e-5)));
    }
}

TEST_CASE("aggregate: permuting tokens with their positions leaves output unchanged") {
    AggregatorConfig cfg;
    cfg.grid = 2;
    cfg.heads = 2;
    cfg.d_out = 6;
    Aggregator agg(cfg, {4, 5, 6, 7}, 9);
    std::vector<Tensor> maps{random_map(4, 4, 4, 31), random_map(5, 2, 2, 32),
                             random_map(6, 2, 2, 33), random_map(7, 1, 1, 34)};
    Rng drop(12);
    auto seq = agg.build_tokens(maps, drop);
    auto base = agg.attend(seq);

    // permute the tokens of stage 0 together with their position ids
    TokenSequence perm = seq;
    std::vector<int64_t> order(static_cast<size_t>(seq.tokens.dim(0)));
    std::iota(order.begin(), order.end(), 0);
    int64_t s0 = 0;
    while (s0 < static_cast<int64_t>(seq.level_of_origin.size()) &&
           seq.level_of_origin[static_cast<size_t>(s0)] == 0) {
        ++s0;
    }
    REQUIRE(s0 >= 1);
    std::rotate(order.begin(), order.begin() + 1, order.begin() + s0);
    perm.tokens = gather_rows(seq.tokens, order);
    std::vector<int64_t> new_pos;
    std::vector<int> new_lvl;
    for (int64_t i : order) {
        new_pos.push_back(seq.positions[static_cast<size_t>(i)]);
        new_lvl.push_back(seq.level_of_origin[static_cast<size_t>(i)]);
    }
    perm.positions = new_pos;
    perm.level_of_origin = new_lvl;
    auto permuted = agg.attend(perm);
    for (int64_t i = 0; i < base.numel(); ++i) {
        CHECK(permuted.data()[i] == doctest::Approx(base.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("aggregate: attention rows sum to one") {
    AggregatorConfig cfg;
    Aggregator agg(cfg, {8, 12, 16, 20}, 21);
    std::vector<Tensor> maps{random_map(8, 8, 8, 1), random_map(12, 4, 4, 2),
                             random_map(16, 2, 2, 3), random_map(20, 1, 1, 4)};
    Rng drop(8);
    auto seq = agg.build_tokens(maps, drop);
    for (const auto& attn : agg.attention_matrices(seq)) {
        const int64_t n = attn.dim(0);
        for (int64_t r = 0; r < n; ++r) {
            double total = 0.0;
            for (int64_t c = 0; c < n; ++c) total += attn.at({r, c});
            CHECK(std::abs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("aggregate: gradients reach retained channels only") {
    AggregatorConfig cfg;
    cfg.grid = 2;
    cfg.heads = 2;
    cfg.d_out = 5;
    cfg.drop_ratios = {0.5, 0.5, 0.5, 0.5};
    Aggregator agg(cfg, {4, 4, 4, 4}, 33);
    std::vector<Tensor> maps{random_map(4, 4, 4, 1, true), random_map(4, 2, 2, 2, true),
                             random_map(4, 2, 2, 3, true), random_map(4, 1, 1, 4, true)};
    Rng drop(17);
    auto seq = agg.build_tokens(maps, drop);
    sum(mul(agg.attend(seq), agg.attend(seq).detach() + 1.0)).backward();

    for (size_t s = 0; s < 4; ++s) {
        // retained channel ids for stage s
        std::vector<int64_t> kept;
        for (size_t i = 0; i < seq.level_of_origin.size(); ++i) {
            if (seq.level_of_origin[i] == static_cast<int>(s)) {
                int64_t offset = 0;
                for (size_t q = 0; q < s; ++q) offset += 4;
                kept.push_back(seq.positions[i] - offset);
            }
        }
        REQUIRE(kept.size() == 2);
        auto g = maps[s].grad();
        const int64_t hw = maps[s].dim(1) * maps[s].dim(2);
        for (int64_t c = 0; c < 4; ++c) {
            double norm = 0.0;
            for (int64_t i = 0; i < hw; ++i) norm += std::abs(g[static_cast<size_t>(c * hw + i)]);
            const bool retained = std::find(kept.begin(), kept.end(), c) != kept.end();
            if (retained) {
                CHECK(norm > 0.0);
            } else {
                CHECK(norm == 0.0);
            }
        }
    }
}

TEST_CASE("aggregate: oversized stage map is rejected") {
    AggregatorConfig cfg;
    Aggregator agg(cfg, {4, 6, 8, 10}, 2);
    std::vector<Tensor> maps{random_map(5, 8, 8, 1), random_map(6, 4, 4, 2),
                             random_map(8, 2, 2, 3), random_map(10, 1, 1, 4)};
    Rng drop(1);
    CHECK_THROWS_AS(agg.build_tokens(maps, drop), std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dope/model.hpp"
#include "dope/rng.hpp"

using namespace dope;
using namespace dope::model;

namespace {

std::vector<float> random_image(const EncoderConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<float> img(static_cast<std::size_t>(cfg.in_channels) * cfg.input_size *
                           cfg.input_size);
    for (auto& v : img) v = rng.uniformf(0, 1);
    return img;
}

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.input_size = 32;
    cfg.grid_size = 8;
    cfg.stage_channels = {8, 12, 16};
    cfg.proj_channels = {16, 24, 24, 16};
    return cfg;
}

} // namespace

TEST_CASE("encode: output shapes and sigmoid range") {
    const EncoderConfig cfg = small_config();
    const EncoderParams params = init_params(cfg, 1);
    const FeatureGrid grid = encode(params.online, cfg, random_image(cfg, 2).data());
    CHECK(grid.dim == cfg.descriptor_dim());
    CHECK(grid.h == cfg.grid_size);
    CHECK(grid.w == cfg.grid_size);
    CHECK(grid.features.size() ==
          static_cast<std::size_t>(cfg.descriptor_dim()) * cfg.grid_size * cfg.grid_size);
    for (const float p : grid.mask_prob) {
        CHECK(p >= 0.0f);
        CHECK(p <= 1.0f);
    }
}

TEST_CASE("encode: unit cell norms before gating, gated = prob * unit") {
    const EncoderConfig cfg = small_config();
    const EncoderParams params = init_params(cfg, 3);
    const FeatureGrid grid = encode(params.online, cfg, random_image(cfg, 4).data());
    const int cells = grid.h * grid.w;
    for (int p = 0; p < cells; ++p) {
        double pre = 0, post = 0;
        for (int d = 0; d < grid.dim; ++d) {
            pre += static_cast<double>(grid.pre_gate[d * cells + p]) * grid.pre_gate[d * cells + p];
            post += static_cast<double>(grid.features[d * cells + p]) * grid.features[d * cells + p];
        }
        CHECK(std::abs(std::sqrt(pre) - 1.0) < 1e-5);
        CHECK(std::abs(std::sqrt(post) - grid.mask_prob[p]) < 1e-5);
        // gating is literally one multiply per element
        for (int d = 0; d < grid.dim; ++d)
            CHECK(grid.features[d * cells + p] ==
                  grid.pre_gate[d * cells + p] * grid.mask_prob[p]);
    }
}

TEST_CASE("encode: cosine similarities of cells stay within [-1, 1]") {
    const EncoderConfig cfg = small_config();
    const EncoderParams params = init_params(cfg, 5);
    const FeatureGrid a = encode(params.online, cfg, random_image(cfg, 6).data());
    const FeatureGrid b = encode(params.online, cfg, random_image(cfg, 7).data());
    for (int i = 0; i < a.h * a.w; i += 3)
        for (int j = 0; j < b.h * b.w; j += 3) {
            const float sim = a.cell_dot(i % a.w, i / a.w, b, j % b.w, j / b.w);
            CHECK(sim >= -1.0f - 1e-5f);
            CHECK(sim <= 1.0f + 1e-5f);
        }
}

TEST_CASE("encode is deterministic") {
    const EncoderConfig cfg = small_config();
    const EncoderParams params = init_params(cfg, 8);
    const auto img = random_image(cfg, 9);
    const FeatureGrid a = encode(params.online, cfg, img.data());
    const FeatureGrid b = encode(params.online, cfg, img.data());
    CHECK(a.features == b.features);
    CHECK(a.mask_prob == b.mask_prob);
}

TEST_CASE("momentum_update: EMA endpoints and midpoint") {
    const EncoderConfig cfg = small_config();
    EncoderParams p = init_params(cfg, 10);
    EncoderParams q = init_params(cfg, 11);

    // m = 1: target unchanged
    ParamDict<float> target = q.online;
    momentum_update(p.online, target, 1.0f);
    for (std::size_t i = 0; i < target.size(); ++i)
        CHECK(target[i].second.data == q.online[i].second.data);

    // m = 0: full copy
    target = q.online;
    momentum_update(p.online, target, 0.0f);
    for (std::size_t i = 0; i < target.size(); ++i)
        CHECK(target[i].second.data == p.online[i].second.data);

    // midpoint on scalars
    ParamDict<float> online_s, target_s;
    online_s.emplace_back("x", ad::Tensor<float>(ad::Shape{1}, 4.0f));
    target_s.emplace_back("x", ad::Tensor<float>(ad::Shape{1}, 2.0f));
    momentum_update(online_s, target_s, 0.5f);
    CHECK(target_s[0].second.data[0] == doctest::Approx(3.0f));

    // name mismatch
    ParamDict<float> bad = p.online;
    bad[0].first = "renamed";
    CHECK_THROWS_AS(momentum_update(p.online, bad, 0.5f), NameMismatch);
}

TEST_CASE("init_params: determinism, momentum copy, finite forward over seeds") {
    const EncoderConfig cfg = small_config();
    const EncoderParams a = init_params(cfg, 77);
    const EncoderParams b = init_params(cfg, 77);
    REQUIRE(a.online.size() == b.online.size());
    for (std::size_t i = 0; i < a.online.size(); ++i) {
        CHECK(a.online[i].first == b.online[i].first);
        CHECK(a.online[i].second.data == b.online[i].second.data);
        CHECK(a.online[i].second.data == a.momentum[i].second.data);
    }
    for (int seed = 0; seed < 100; ++seed) {
        const EncoderParams p = init_params(cfg, seed);
        const FeatureGrid g = encode(p.online, cfg, random_image(cfg, 1000 + seed).data());
        for (const float v : g.features) REQUIRE(std::isfinite(v));
        for (const float v : g.mask_prob) REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("encode: ground-truth and all-ones gating") {
    const EncoderConfig cfg = small_config();
    const EncoderParams params = init_params(cfg, 13);
    const auto img = random_image(cfg, 14);
    std::vector<float> gt(static_cast<std::size_t>(cfg.grid_size) * cfg.grid_size, 0.0f);
    gt[5] = 1.0f;
    const FeatureGrid g = encode(params.online, cfg, img.data(), GateMode::GroundTruth, gt.data());
    const int cells = cfg.grid_size * cfg.grid_size;
    for (int p = 0; p < cells; ++p) {
        double post = 0;
        for (int d = 0; d < g.dim; ++d)
            post += static_cast<double>(g.features[d * cells + p]) * g.features[d * cells + p];
        CHECK(std::sqrt(post) == doctest::Approx(gt[p]).epsilon(1e-5));
    }

    const FeatureGrid ones = encode(params.online, cfg, img.data(), GateMode::AllOnes);
    CHECK(ones.features == ones.pre_gate);
    for (const float p : ones.mask_prob) CHECK(p == 1.0f);
}

TEST_CASE("encoder config validation") {
    EncoderConfig cfg = small_config();
    cfg.grid_size = 7;
    CHECK_THROWS_AS(cfg.validate(), InvalidRange);
    cfg = small_config();
    cfg.input_size = cfg.grid_size * 8;
    CHECK_THROWS_AS(cfg.validate(), InvalidRange);
}

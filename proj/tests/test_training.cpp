#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ztrans/autodiff.hpp"
#include "ztrans/corpus.hpp"
#include "ztrans/errors.hpp"
#include "ztrans/model.hpp"
#include "ztrans/rng.hpp"
#include "ztrans/training.hpp"

using namespace ztrans;
using namespace ztrans::training;
using ad::Tensor;

namespace {

LclrItem item(std::vector<double> head, int lang, uint64_t id) {
    size_t n = head.size();
    return {Tensor::leaf({n}, std::move(head)), lang, id};
}

}  // namespace

TEST_CASE("cross_entropy: uniform logits give ln V") {
    Tensor logits = Tensor::leaf({2, 4}, std::vector<double>(8, 0.0));
    double loss = cross_entropy_loss(logits, {1, 3}, 0.0).item();
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy: confident logits, hand log-sum-exp") {
    // -log(e^10 / (e^10 + 3)) = log(1 + 3 e^-10) ~ 1.3618e-4
    Tensor logits = Tensor::leaf({1, 4}, {10, 0, 0, 0});
    double loss = cross_entropy_loss(logits, {0}, 0.0).item();
    CHECK(loss == doctest::Approx(std::log1p(3.0 * std::exp(-10.0))).epsilon(1e-12));
    CHECK(loss == doctest::Approx(1.36e-4).epsilon(0.01));
}

TEST_CASE("cross_entropy: label smoothing closed form") {
    // loss = (1-eps) * nll(y) + (eps/V) * sum_v nll(v)
    std::vector<double> row{2.0, -1.0, 0.5, 0.0};
    Tensor logits = Tensor::leaf({1, 4}, std::vector<double>(row));
    double eps = 0.1;
    double z = 0.0;
    for (double v : row) z += std::exp(v);
    double expected = 0.0;
    for (size_t v = 0; v < 4; ++v) {
        double nll = std::log(z) - row[v];
        expected += (v == 2 ? (1.0 - eps) * nll : 0.0) + (eps / 4.0) * nll;
    }
    CHECK(cross_entropy_loss(logits, {2}, eps).item() ==
          doctest::Approx(expected).epsilon(1e-10));
    // smoothing 0 equals plain NLL
    CHECK(cross_entropy_loss(logits, {2}, 0.0).item() ==
          doctest::Approx(std::log(z) - row[2]).epsilon(1e-12));
}

TEST_CASE("lclr: equal similarities give log(1 + k_eff) per anchor") {
    // all heads identical -> every cosine = 1
    std::vector<LclrItem> batch{item({1, 0}, 0, 1), item({1, 0}, 0, 2), item({1, 0}, 1, 3),
                                item({1, 0}, 1, 4)};
    // every anchor is in B', has 1 positive and 2 negatives -> k_eff = 2
    double loss = lclr_loss(batch, 30, 7).item();
    CHECK(loss == doctest::Approx(4.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("lclr: single-negative closed form ln(1+e^-2)") {
    // anchors with s+ = 1 (identical positive) and s- = -1 (opposed negative)
    std::vector<LclrItem> batch{item({1, 0}, 0, 1), item({1, 0}, 0, 2), item({-1, 0}, 1, 3),
                                item({-1, 0}, 1, 4)};
    // each of 4 anchors: one positive (cos 1), negatives are the two items of
    // the other language... k clipped to 2 -> but both negatives have cos -1
    double per_anchor = std::log(std::exp(1.0) + 2.0 * std::exp(-1.0)) - 1.0;
    CHECK(lclr_loss(batch, 30, 7).item() == doctest::Approx(4.0 * per_anchor).epsilon(1e-12));

    // with k = 1 exactly one negative is drawn: term = ln(1 + e^-2)
    CHECK(lclr_loss(batch, 1, 7).item() ==
          doctest::Approx(4.0 * std::log1p(std::exp(-2.0))).epsilon(1e-12));
}

TEST_CASE("lclr: unique target languages give zero with no graph") {
    std::vector<LclrItem> batch{item({1, 0}, 0, 1), item({0, 1}, 1, 2), item({1, 1}, 2, 3)};
    CHECK(lclr_loss(batch, 30, 7).item() == 0.0);
}

TEST_CASE("lclr: k clipped to available negatives") {
    // language 0 has 3 members, language 1 has 2: anchors of lang 1 see 3
    // negatives, anchors of lang 0 see 2; k=30 must not fail
    Rng rng(5);
    std::vector<LclrItem> batch;
    for (int i = 0; i < 5; ++i) {
        std::vector<double> h{rng.normal(), rng.normal(), rng.normal()};
        batch.push_back(item(h, i < 3 ? 0 : 1, static_cast<uint64_t>(i + 1)));
    }
    CHECK_NOTHROW(lclr_loss(batch, 30, 7).item());
    CHECK(lclr_loss(batch, 30, 7).item() > 0.0);
}

TEST_CASE("lclr: permutation invariance over batch order") {
    Rng rng(11);
    std::vector<LclrItem> batch;
    for (int i = 0; i < 8; ++i) {
        std::vector<double> h{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
        batch.push_back(item(h, i % 3, static_cast<uint64_t>(100 + i)));
    }
    double base = lclr_loss(batch, 2, 99).item();
    std::reverse(batch.begin(), batch.end());
    CHECK(lclr_loss(batch, 2, 99).item() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("lclr: per-anchor terms within the cosine-range bound") {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<LclrItem> batch;
        for (int i = 0; i < 6; ++i) {
            std::vector<double> h{rng.normal(), rng.normal(), rng.normal()};
            batch.push_back(item(h, i % 2, static_cast<uint64_t>(trial * 10 + i)));
        }
        int k = 2;
        double loss = lclr_loss(batch, k, static_cast<uint64_t>(trial)).item();
        // 6 anchors, k_eff = 2 (3 negatives available each): per-anchor term
        // in [ln(1 + 2 e^-2), ln(1 + 2 e^2)]
        CHECK(loss >= 6.0 * std::log1p(2.0 * std::exp(-2.0)) - 1e-9);
        CHECK(loss <= 6.0 * std::log1p(2.0 * std::exp(2.0)) + 1e-9);
    }
}

TEST_CASE("total_loss arithmetic and gradient additivity") {
    CHECK(total_loss(Tensor::scalar(1.0), Tensor::scalar(0.5)).item() == 1.5);
    CHECK(total_loss(Tensor::scalar(2.0), Tensor::scalar(0.0)).item() == 2.0);

    Tensor x = Tensor::leaf({3}, {0.5, -1.0, 2.0}, true);
    Tensor ce = ad::sum(ad::mul(x, x));
    Tensor ctr = ad::sum(ad::gelu(x));
    ad::backward(total_loss(ce, ctr));
    std::vector<double> got = x.grad();

    Tensor x2 = Tensor::leaf({3}, {0.5, -1.0, 2.0}, true);
    ad::backward(ad::sum(ad::mul(x2, x2)));
    Tensor x3 = Tensor::leaf({3}, {0.5, -1.0, 2.0}, true);
    ad::backward(ad::sum(ad::gelu(x3)));
    for (size_t i = 0; i < 3; ++i)
        CHECK(got[i] == doctest::Approx(x2.grad()[i] + x3.grad()[i]).epsilon(1e-12));
}

TEST_CASE("lr_schedule hand values and continuity") {
    CHECK(lr_schedule(4000, 5e-4, 4000) == doctest::Approx(5e-4).epsilon(1e-15));
    CHECK(lr_schedule(2000, 5e-4, 4000) == doctest::Approx(2.5e-4).epsilon(1e-15));
    CHECK(lr_schedule(16000, 5e-4, 4000) == doctest::Approx(2.5e-4).epsilon(1e-15));
    CHECK(lr_schedule(3999, 5e-4, 4000) ==
          doctest::Approx(lr_schedule(4001, 5e-4, 4000)).epsilon(1e-3));
}

TEST_CASE("adam: first step moves by -lr * sign(g) as eps -> 0") {
    model::ModelParams params;
    params.tensors.emplace("w", Tensor::leaf({2}, {1.0, -2.0}, true));
    auto node = params.at("w").node();
    node->ensure_grad();
    node->grad[0] = 0.3;
    node->grad[1] = -7.0;
    AdamState st;
    adam_step(params, st, 0.01, 0.9, 0.98, 1e-16);
    CHECK(params.at("w").values()[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-9));
    CHECK(params.at("w").values()[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-9));
}

TEST_CASE("adam: zero gradient is a fixed point") {
    model::ModelParams params;
    params.tensors.emplace("w", Tensor::leaf({2}, {1.5, -0.5}, true));
    params.at("w").node()->ensure_grad();
    AdamState st;
    for (int i = 0; i < 3; ++i) adam_step(params, st, 0.01, 0.9, 0.98, 1e-8);
    CHECK(params.at("w").values()[0] == 1.5);
    CHECK(params.at("w").values()[1] == -0.5);
}

TEST_CASE("adam: matches a scalar hand-rolled oracle over several steps") {
    // oracle on f(w) = 0.5 w^2, gradient w
    double w = 2.0, m = 0.0, v = 0.0;
    double lr = 0.1, b1 = 0.9, b2 = 0.98, eps = 1e-8;

    model::ModelParams params;
    params.tensors.emplace("w", Tensor::leaf({1}, {2.0}, true));
    AdamState st;
    for (int t = 1; t <= 5; ++t) {
        double g = w;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        w -= lr * mhat / (std::sqrt(vhat) + eps);

        auto node = params.at("w").node();
        node->ensure_grad();
        node->grad[0] = node->val[0];
        adam_step(params, st, lr, b1, b2, eps);
        node->grad[0] = 0.0;
        CHECK(params.at("w").values()[0] == doctest::Approx(w).epsilon(1e-12));
    }
}

TEST_CASE("train: deterministic metrics and best-checkpoint rule") {
    corpus::CorpusConfig cc;
    cc.num_languages = 3;
    cc.sentences_per_pair = 40;
    cc.valid_sentences_per_pair = 8;
    cc.test_sentences_per_pair = 8;
    cc.concept_vocab_size = 8;
    cc.min_len = 3;
    cc.max_len = 5;
    cc.seed = 4;
    auto data = corpus::build_dataset(cc);

    model::TransformerConfig mc;
    mc.enc_layers = 1;
    mc.dec_layers = 1;
    mc.d_model = 16;
    mc.heads = 2;
    mc.d_ffn = 32;
    mc.vocab_size = data.vocab_size();
    mc.num_languages = cc.num_languages;
    mc.lole_enabled = true;
    mc.d_e = 4;
    mc.lclr_enabled = true;
    mc.d_h = 4;
    mc.k = 5;

    TrainConfig tc;
    tc.max_steps = 12;
    tc.batch_tokens = 64;
    tc.checkpoint_every = 6;
    tc.log_every = 4;
    tc.warmup_steps = 100;
    tc.valid_examples_cap = 16;
    tc.seed = 2;

    auto r1 = train(mc, tc, data);
    auto r2 = train(mc, tc, data);
    CHECK(r1.metrics_jsonl == r2.metrics_jsonl);
    CHECK(!r1.metrics_jsonl.empty());
    // metrics line count: steps at log_every multiples plus final step
    CHECK(std::count(r1.metrics_jsonl.begin(), r1.metrics_jsonl.end(), '\n') == 3);  // 4,8,12

    double step0 = evaluate_ce(model::init_params(mc, tc.seed), mc, data.valid,
                               tc.label_smoothing, tc.valid_examples_cap);
    CHECK(r1.best_valid_ce <= step0 + 1e-12);

    // resume from scratch at step 0 equals a fresh run
    auto fresh = model::init_params(mc, tc.seed);
    auto r3 = train(mc, tc, data, &fresh, 0);
    CHECK(r3.metrics_jsonl == r1.metrics_jsonl);
}

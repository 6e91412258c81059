#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "ztrans/analysis.hpp"
#include "ztrans/corpus.hpp"
#include "ztrans/errors.hpp"
#include "ztrans/model.hpp"
#include "ztrans/rng.hpp"

using namespace ztrans;
using namespace ztrans::analysis;
using linalg::Matrix;

namespace {

PooledSet seeded_set(size_t n, size_t d, uint64_t seed) {
    Rng rng(seed);
    PooledSet s;
    s.vectors.assign(n, std::vector<double>(d));
    for (auto& v : s.vectors)
        for (auto& x : v) x = rng.normal();
    return s;
}

PooledSet rotated(const PooledSet& in, uint64_t seed) {
    size_t d = in.vectors[0].size();
    Rng rng(seed);
    Eigen::MatrixXd g(d, d);
    for (size_t i = 0; i < d; ++i)
        for (size_t j = 0; j < d; ++j) g(static_cast<long>(i), static_cast<long>(j)) = rng.normal();
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    PooledSet out = in;
    for (size_t i = 0; i < in.vectors.size(); ++i)
        for (size_t j = 0; j < d; ++j) {
            double acc = 0.0;
            for (size_t k = 0; k < d; ++k)
                out.vectors[i][j] += 0.0, acc += in.vectors[i][k] * q(static_cast<long>(k),
                                                                      static_cast<long>(j));
            out.vectors[i][j] = acc;
        }
    return out;
}

// Straight-line oracle for the whole SVCCA pipeline, written directly on
// Eigen with none of the library's linalg code.
std::vector<double> svcca_oracle(const PooledSet& sa, const PooledSet& sb, double threshold,
                                 double reg) {
    auto center = [](const PooledSet& s) {
        Eigen::MatrixXd m(s.vectors.size(), s.vectors[0].size());
        for (size_t i = 0; i < s.vectors.size(); ++i)
            for (size_t j = 0; j < s.vectors[i].size(); ++j)
                m(static_cast<long>(i), static_cast<long>(j)) = s.vectors[i][j];
        m.rowwise() -= m.colwise().mean();
        return m;
    };
    auto truncate = [&](const Eigen::MatrixXd& m) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinV);
        Eigen::VectorXd s = svd.singularValues();
        double total = s.squaredNorm(), acc = 0.0;
        long keep = 0;
        for (long i = 0; i < s.size(); ++i) {
            acc += s(i) * s(i);
            keep = i + 1;
            if (acc / total >= threshold - 1e-15) break;
        }
        return (m * svd.matrixV().leftCols(keep)).eval();
    };
    Eigen::MatrixXd xa = truncate(center(sa));
    Eigen::MatrixXd xb = truncate(center(sb));
    double denom = static_cast<double>(xa.rows() - 1);
    Eigen::MatrixXd sxx = xa.transpose() * xa / denom +
                          reg * Eigen::MatrixXd::Identity(xa.cols(), xa.cols());
    Eigen::MatrixXd syy = xb.transpose() * xb / denom +
                          reg * Eigen::MatrixXd::Identity(xb.cols(), xb.cols());
    Eigen::MatrixXd sxy = xa.transpose() * xb / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sxx), eb(syy);
    Eigen::MatrixXd wxa = ea.operatorInverseSqrt(), wyb = eb.operatorInverseSqrt();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(wxa * sxy * wyb,
                                          Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd wa = svd.matrixU().transpose() * wxa;
    Eigen::MatrixXd wb = svd.matrixV().transpose() * wyb;
    Eigen::MatrixXd ua = xa * wa.transpose(), ub = xb * wb.transpose();
    std::vector<double> rho(static_cast<size_t>(ua.rows()));
    for (long i = 0; i < ua.rows(); ++i)
        rho[static_cast<size_t>(i)] = ua.row(i).dot(ub.row(i)) /
                                      (ua.row(i).norm() * ub.row(i).norm());
    return rho;
}

}  // namespace

TEST_CASE("mean_pool: singleton, arithmetic, tag exclusion") {
    LayerTrace single{Side::Encoder, 1, Matrix(1, 3, {1, 2, 3}), false};
    CHECK(mean_pool(single, true) == std::vector<double>{1, 2, 3});

    LayerTrace two{Side::Encoder, 1, Matrix(2, 2, {1, 3, 3, 1}), false};
    CHECK(mean_pool(two, false) == std::vector<double>{2, 2});

    LayerTrace tagged{Side::Encoder, 1, Matrix(3, 2, {9, 9, 1, 3, 3, 1}), true};
    CHECK(mean_pool(tagged, true) == std::vector<double>{2, 2});
    CHECK(mean_pool(tagged, false) == std::vector<double>{13.0 / 3, 13.0 / 3});

    LayerTrace only_tag{Side::Encoder, 1, Matrix(1, 2, {5, 5}), true};
    CHECK_THROWS_AS(mean_pool(only_tag, true), InvalidInput);
}

TEST_CASE("svcca: self-similarity and orthogonal invariance") {
    PooledSet a = seeded_set(40, 8, 3);
    auto self = svcca_score(a, a);
    CHECK(self.mean >= 0.999);

    auto rot = svcca_score(a, rotated(a, 4));
    CHECK(rot.mean >= 0.999);

    // global positive scaling
    PooledSet scaled = a;
    for (auto& v : scaled.vectors)
        for (auto& x : v) x *= 3.7;
    CHECK(svcca_score(a, scaled).mean >= 0.999);
}

TEST_CASE("svcca: agreement with the straight-line oracle on seeded n=50 sets") {
    PooledSet a = seeded_set(50, 8, 21);
    PooledSet b = seeded_set(50, 8, 22);
    // correlate the sets so the comparison is nontrivial
    for (size_t i = 0; i < 50; ++i)
        for (size_t j = 0; j < 8; ++j) b.vectors[i][j] += 0.6 * a.vectors[i][j];

    auto got = svcca_score(a, b);
    auto want = svcca_oracle(a, b, kDefaultVarianceThreshold, kDefaultCcaRegularization);
    REQUIRE(got.per_sentence.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(std::fabs(got.per_sentence[i] - want[i]) <= 1e-8);
}

TEST_CASE("svcca: symmetry and degenerate-size rejection") {
    PooledSet a = seeded_set(30, 6, 31);
    PooledSet b = seeded_set(30, 6, 32);
    CHECK(svcca_score(a, b).mean == doctest::Approx(svcca_score(b, a).mean).epsilon(1e-8));

    PooledSet tiny = seeded_set(3, 6, 33);
    CHECK_THROWS_AS(svcca_score(tiny, tiny), DegenerateInput);
}

TEST_CASE("corpus_bleu: hand cases") {
    std::vector<std::vector<int>> ref{{1, 2, 3, 4, 6}};
    CHECK(corpus_bleu(ref, ref) == doctest::Approx(100.0).epsilon(1e-12));

    // "a b c d e" vs "a b c d f": precisions 4/5, 3/4, 2/3, 1/2
    std::vector<std::vector<int>> hyp{{1, 2, 3, 4, 5}};
    double expected =
        100.0 * std::exp(0.25 * (std::log(0.8) + std::log(0.75) + std::log(2.0 / 3.0) +
                                 std::log(0.5)));
    CHECK(corpus_bleu(hyp, ref) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(corpus_bleu(hyp, ref) == doctest::Approx(66.87).epsilon(0.001));

    // zero bucket -> 0 with warning
    std::vector<std::vector<int>> short_hyp{{1, 2}};
    std::vector<std::vector<int>> short_ref{{1, 2}};
    bool warn = false;
    CHECK(corpus_bleu(short_hyp, short_ref, 4, &warn) == 0.0);
    CHECK(warn);

    // adding an exact match never decreases the score
    std::vector<std::vector<int>> hyp2 = hyp, ref2 = ref;
    hyp2.push_back({7, 8, 9, 10, 11});
    ref2.push_back({7, 8, 9, 10, 11});
    CHECK(corpus_bleu(hyp2, ref2) >= corpus_bleu(hyp, ref) - 1e-12);

    CHECK_THROWS_AS(corpus_bleu({}, {}), InvalidInput);
}

TEST_CASE("off_target_ratio: counting") {
    auto langs = corpus::make_languages(3, 8);
    int o1 = langs[1].vocab_offset, o2 = langs[2].vocab_offset;
    std::vector<std::vector<int>> pure1{{o1, o1 + 1}, {o1 + 2, o1 + 3}};
    CHECK(off_target_ratio(pure1, 1, langs) == 0.0);
    CHECK(off_target_ratio(pure1, 2, langs) == 1.0);

    std::vector<std::vector<int>> mixed{{o1, o1 + 1}, {o1 + 2}, {o1 + 3, o1},
                                        {o2, o2 + 1}, {}};
    // expected lang 1: three on-target, one wrong-language, one undetectable
    CHECK(off_target_ratio(mixed, 1, langs) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("cluster_variance: hand cases") {
    std::vector<std::vector<double>> same{{1, 0}, {2, 0}, {5, 0}};
    CHECK(cluster_variance(same, {0, 0, 0}) == doctest::Approx(0.0).epsilon(1e-12));

    // two unit vectors (1,0) and (0,1): centroid (0.5,0.5), each squared
    // distance = 0.5 -> cluster variance 0.5
    std::vector<std::vector<double>> quarter{{3, 0}, {0, 7}};
    CHECK(cluster_variance(quarter, {0, 0}) == doctest::Approx(0.5).epsilon(1e-12));

    // merging two tight, well-separated clusters raises the value
    std::vector<std::vector<double>> pts{{1, 0}, {1, 0.01}, {0, 1}, {0.01, 1}};
    double split = cluster_variance(pts, {0, 0, 1, 1});
    double merged = cluster_variance(pts, {0, 0, 0, 0});
    CHECK(merged > split);

    CHECK_THROWS_AS(cluster_variance({{0.0, 0.0}}, {0}), DegenerateInput);
}

TEST_CASE("correlation_report: grouping, values, undersized skip") {
    std::vector<PairObservation> obs;
    // target 1: the r = 0.8 hand case
    double xs[4] = {1, 2, 3, 4}, ys[4] = {1, 3, 2, 4};
    for (int i = 0; i < 4; ++i) obs.push_back({0, 1, ys[i], xs[i]});
    // target 2: perfect correlation
    for (int i = 0; i < 3; ++i) obs.push_back({0, 2, 2.0 * i, static_cast<double>(i)});
    // target 3: undersized
    obs.push_back({0, 3, 1.0, 1.0});

    auto rep = correlation_report(obs);
    REQUIRE(rep.size() == 3);
    CHECK(rep[0].target_lang == 1);
    CHECK(rep[0].r == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(!rep[0].skipped);
    CHECK(rep[1].r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rep[2].skipped);
}

TEST_CASE("bootstrap_significance: degenerate and deterministic") {
    std::vector<double> a{3, 1, 4, 1, 5, 9, 2, 6};
    CHECK(bootstrap_significance(a, a, 500, 0.5, 7) == 1.0);  // ties count for b

    std::vector<double> lower(a.size());
    for (size_t i = 0; i < a.size(); ++i) lower[i] = a[i] - 1.0;
    CHECK(bootstrap_significance(a, lower, 500, 0.5, 7) == 0.0);

    std::vector<double> b{2, 2, 5, 0, 6, 8, 3, 6};
    double p1 = bootstrap_significance(a, b, 1000, 0.5, 42);
    double p2 = bootstrap_significance(a, b, 1000, 0.5, 42);
    CHECK(p1 == p2);
    CHECK(p1 >= 0.0);
    CHECK(p1 <= 1.0);
    // p lands on the 1/iterations grid
    CHECK(p1 * 1000.0 == doctest::Approx(std::round(p1 * 1000.0)).epsilon(1e-12));
}

TEST_CASE("run_comparison: shape contract and determinism on an untrained model") {
    corpus::CorpusConfig cc;
    cc.num_languages = 3;
    cc.sentences_per_pair = 20;
    cc.valid_sentences_per_pair = 4;
    cc.test_sentences_per_pair = 12;
    cc.concept_vocab_size = 8;
    cc.min_len = 3;
    cc.max_len = 5;
    cc.seed = 6;
    auto data = corpus::build_dataset(cc);

    model::TransformerConfig mc;
    mc.enc_layers = 2;
    mc.dec_layers = 2;
    mc.d_model = 16;
    mc.heads = 2;
    mc.d_ffn = 32;
    mc.vocab_size = data.vocab_size();
    mc.num_languages = 3;
    auto params = model::init_params(mc, 8);

    auto enc = run_comparison(params, mc, data, ComparisonCase::CaseI, 1, 2, Side::Encoder,
                              {1, 2});
    CHECK(enc.size() == 2);
    for (const auto& r : enc) CHECK(r.per_sentence.size() == 12);

    auto again = run_comparison(params, mc, data, ComparisonCase::CaseI, 1, 2, Side::Encoder,
                                {1, 2});
    CHECK(enc[0].mean == again[0].mean);  // deterministic

    for (auto cmp : {ComparisonCase::CaseII, ComparisonCase::CaseIII})
        CHECK(run_comparison(params, mc, data, cmp, 1, 2, Side::Encoder, {2}).size() == 1);
    for (auto cmp : {ComparisonCase::CaseIV, ComparisonCase::CaseV})
        CHECK(run_comparison(params, mc, data, cmp, 1, 2, Side::Decoder, {1}).size() == 1);

    CHECK_THROWS_AS(
        run_comparison(params, mc, data, ComparisonCase::CaseI, 1, 1, Side::Encoder, {1}),
        InvalidInput);
    CHECK_THROWS_AS(
        run_comparison(params, mc, data, ComparisonCase::CaseIV, 1, 2, Side::Encoder, {1}),
        InvalidInput);
}

TEST_CASE("exports: layer CSV shape and JSON round-trip") {
    SvccaReport r;
    r.per_sentence = {0.5, 0.75, 0.9};
    r.mean = (0.5 + 0.75 + 0.9) / 3.0;
    r.d_a = 6;
    r.d_b = 5;
    r.d_prime = 5;
    r.variance_threshold = 0.99;

    auto dir = std::filesystem::temp_directory_path() / "ztrans_analysis_export";
    std::filesystem::create_directories(dir);
    std::string csv = (dir / "layers.csv").string();
    export_layer_reports_csv({r, r}, {1, 2}, csv);
    std::ifstream in(csv);
    std::string line;
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);  // header + 2 layers

    auto back = svcca_report_from_json(svcca_report_to_json(r));
    CHECK(back.per_sentence == r.per_sentence);
    CHECK(back.mean == r.mean);
    CHECK(back.d_a == r.d_a);
    CHECK(back.d_prime == r.d_prime);
    CHECK_THROWS_AS(svcca_report_from_json("not json"), FormatError);
    std::filesystem::remove_all(dir);
}

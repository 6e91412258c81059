#include "ztrans/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ztrans/errors.hpp"
#include "ztrans/io.hpp"
#include "ztrans/rng.hpp"

namespace ztrans::analysis {

using json = nlohmann::json;
using linalg::Matrix;

namespace {

Matrix tensor_to_matrix(const ad::Tensor& t) {
    if (t.shape().size() != 2) throw ShapeError("analysis: expected a 2D trace");
    return Matrix(t.rows(), t.cols(), t.values());
}

Matrix center_columns(const Matrix& a) {
    Matrix out = a;
    for (size_t j = 0; j < a.cols(); ++j) {
        double mu = 0.0;
        for (size_t i = 0; i < a.rows(); ++i) mu += a(i, j);
        mu /= static_cast<double>(a.rows());
        for (size_t i = 0; i < a.rows(); ++i) out(i, j) -= mu;
    }
    return out;
}

int env_thread_cap() {
    if (const char* v = std::getenv("ZTRANS_THREADS")) {
        int n = std::atoi(v);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(size_t n, const std::function<void(size_t)>& body) {
    size_t threads = std::min<size_t>(static_cast<size_t>(env_thread_cap()), n);
    if (threads <= 1) {
        for (size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (size_t t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (size_t i = t; i < n; i += threads) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

struct Triple {
    std::vector<int> source;
    int tag = 0;
    std::vector<int> target;  // only used for decoder traces
};

// Sentence i of language `lang`, reconstructed from the identity split whose
// blocks are per-language in shared-semantics order.
const corpus::TaggedExample& aligned_identity(const corpus::DatasetSplits& data, int lang,
                                              size_t i) {
    size_t block = static_cast<size_t>(data.config.test_sentences_per_pair);
    size_t idx = static_cast<size_t>(lang) * block + i;
    if (idx >= data.test_identity.size())
        throw InvalidInput("analysis: identity split too small for requested language");
    const auto& ex = data.test_identity[idx];
    if (ex.src_lang != lang) throw InvalidInput("analysis: identity split ordering mismatch");
    return ex;
}

PooledSet pool_triples(const model::ModelParams& params, const model::TransformerConfig& config,
                       const std::vector<Triple>& triples, Side side, int layer,
                       bool exclude_tag) {
    int max_layer = side == Side::Encoder ? config.enc_layers : config.dec_layers;
    if (layer < 1 || layer > max_layer) throw InvalidInput("analysis: layer out of range");

    PooledSet set;
    set.side = side;
    set.layer = layer;
    set.tag_excluded = side == Side::Encoder && exclude_tag;
    set.vectors.resize(triples.size());
    parallel_for(triples.size(), [&](size_t i) {
        const Triple& tr = triples[i];
        if (side == Side::Encoder) {
            model::EncodeResult enc =
                model::encode(params, config, tr.source, tr.tag, /*trace=*/true);
            LayerTrace t{Side::Encoder, layer,
                         tensor_to_matrix(enc.layer_traces.at(static_cast<size_t>(layer - 1))),
                         /*has_tag_position=*/true};
            set.vectors[i] = mean_pool(t, exclude_tag);
        } else {
            model::EncodeResult enc =
                model::encode(params, config, tr.source, tr.tag, /*trace=*/false);
            model::DecodeResult dec = model::decode_teacher_forced(params, config, enc.output,
                                                                   tr.target, /*trace=*/true);
            LayerTrace t{Side::Decoder, layer,
                         tensor_to_matrix(dec.layer_traces.at(static_cast<size_t>(layer - 1))),
                         /*has_tag_position=*/false};
            set.vectors[i] = mean_pool(t, /*exclude_tag=*/false);
        }
    });
    return set;
}

// Length-normalized then SVD-truncated encoder-output pooled vectors; used to
// pick the most dissimilar partner sentence for case iv.
std::vector<size_t> dissimilar_partners(const std::vector<std::vector<double>>& pooled) {
    size_t n = pooled.size();
    Matrix a(n, pooled[0].size());
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < pooled[i].size(); ++j) a(i, j) = pooled[i][j];
    Matrix centered = center_columns(a);
    Matrix proj = linalg::truncate_by_variance(linalg::svd(centered), kDefaultVarianceThreshold);
    Matrix x = linalg::matmul(centered, proj);

    std::vector<size_t> partner(n, 0);
    for (size_t i = 0; i < n; ++i) {
        double best = 2.0;
        size_t who = i == 0 ? 1 : 0;
        for (size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double c = linalg::cosine(x.row(i), x.row(j));
            if (c < best - 1e-15) {
                best = c;
                who = j;
            }
        }
        partner[i] = who;
    }
    return partner;
}

std::map<std::string, int> ngram_counts(const std::vector<int>& tokens, int order) {
    std::map<std::string, int> counts;
    if (static_cast<int>(tokens.size()) < order) return counts;
    for (size_t i = 0; i + static_cast<size_t>(order) <= tokens.size(); ++i) {
        std::string key;
        for (int j = 0; j < order; ++j) key += std::to_string(tokens[i + static_cast<size_t>(j)]) + ",";
        ++counts[key];
    }
    return counts;
}

}  // namespace

std::vector<double> mean_pool(const LayerTrace& trace, bool exclude_tag) {
    size_t start = (exclude_tag && trace.has_tag_position) ? 1 : 0;
    if (trace.values.rows() <= start)
        throw InvalidInput("mean_pool: no positions left after dropping the tag");
    std::vector<double> out(trace.values.cols(), 0.0);
    for (size_t i = start; i < trace.values.rows(); ++i)
        for (size_t j = 0; j < trace.values.cols(); ++j) out[j] += trace.values(i, j);
    double inv = 1.0 / static_cast<double>(trace.values.rows() - start);
    for (double& v : out) v *= inv;
    return out;
}

SvccaReport svcca_score(const PooledSet& set_a, const PooledSet& set_b, double variance_threshold,
                        double regularization) {
    size_t n = set_a.vectors.size();
    if (n != set_b.vectors.size()) throw ShapeError("svcca_score: set sizes differ");
    if (n < 4) throw DegenerateInput("svcca_score: need at least 4 aligned sentences");

    auto to_centered = [n](const std::vector<std::vector<double>>& vecs) {
        size_t d = vecs[0].size();
        Matrix a(n, d);
        for (size_t i = 0; i < n; ++i) {
            if (vecs[i].size() != d) throw ShapeError("svcca_score: ragged pooled vectors");
            for (size_t j = 0; j < d; ++j) a(i, j) = vecs[i][j];
        }
        return center_columns(a);
    };

    Matrix ca = to_centered(set_a.vectors);
    Matrix cb = to_centered(set_b.vectors);
    Matrix pa = linalg::truncate_by_variance(linalg::svd(ca), variance_threshold);
    Matrix pb = linalg::truncate_by_variance(linalg::svd(cb), variance_threshold);
    Matrix xa = linalg::matmul(ca, pa);
    Matrix xb = linalg::matmul(cb, pb);

    linalg::CcaResult cca = linalg::cca_fit(xa, xb, regularization);
    Matrix ua = linalg::matmul(xa, cca.w_a.transposed());  // n x d'
    Matrix ub = linalg::matmul(xb, cca.w_b.transposed());

    SvccaReport rep;
    rep.d_a = pa.cols();
    rep.d_b = pb.cols();
    rep.d_prime = cca.w_a.rows();
    rep.variance_threshold = variance_threshold;
    rep.per_sentence.resize(n);
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        rep.per_sentence[i] = linalg::cosine(ua.row(i), ub.row(i));
        total += rep.per_sentence[i];
    }
    rep.mean = total / static_cast<double>(n);
    return rep;
}

std::vector<SvccaReport> run_comparison(const model::ModelParams& params,
                                        const model::TransformerConfig& config,
                                        const corpus::DatasetSplits& data, ComparisonCase cmp,
                                        int lang_a, int lang_b, Side side,
                                        const std::vector<int>& layers, int sentence_cap,
                                        bool exclude_tag) {
    if (lang_a == lang_b) throw InvalidInput("run_comparison: languages must differ");
    bool decoder_case = cmp == ComparisonCase::CaseIV || cmp == ComparisonCase::CaseV;
    if (decoder_case != (side == Side::Decoder))
        throw InvalidInput("run_comparison: side does not match the requested case");
    if (layers.empty()) throw InvalidInput("run_comparison: no layers requested");

    size_t n = static_cast<size_t>(data.config.test_sentences_per_pair);
    if (sentence_cap > 0) n = std::min(n, static_cast<size_t>(sentence_cap));

    int tag_a = data.language(lang_a).tag_token;
    int tag_b = data.language(lang_b).tag_token;

    std::vector<Triple> side_a(n), side_b(n);
    for (size_t i = 0; i < n; ++i) {
        const std::vector<int>& x = aligned_identity(data, lang_a, i).source;
        const std::vector<int>& y = aligned_identity(data, lang_b, i).source;
        switch (cmp) {
            case ComparisonCase::CaseI:  // (x, <a>) vs (y, <a>)
                side_a[i] = {x, tag_a, {}};
                side_b[i] = {y, tag_a, {}};
                break;
            case ComparisonCase::CaseII:  // (x, <a>) vs (x, <b>)
                side_a[i] = {x, tag_a, {}};
                side_b[i] = {x, tag_b, {}};
                break;
            case ComparisonCase::CaseIII:  // (x, <a>) vs (y, <b>)
                side_a[i] = {x, tag_a, {}};
                side_b[i] = {y, tag_b, {}};
                break;
            case ComparisonCase::CaseIV:  // a->b vs most dissimilar a'->b'
                side_a[i] = {x, tag_b, y};
                break;
            case ComparisonCase::CaseV:  // a->b vs b->b identity
                side_a[i] = {x, tag_b, y};
                side_b[i] = {y, tag_b, y};
                break;
        }
    }
    if (cmp == ComparisonCase::CaseIV) {
        // Partner choice keys off encoder final-layer pooled outputs.
        std::vector<Triple> enc_triples = side_a;
        PooledSet enc = pool_triples(params, config, enc_triples, Side::Encoder,
                                     config.enc_layers, exclude_tag);
        std::vector<size_t> partner = dissimilar_partners(enc.vectors);
        for (size_t i = 0; i < n; ++i) side_b[i] = side_a[partner[i]];
    }

    std::vector<SvccaReport> reports;
    reports.reserve(layers.size());
    for (int layer : layers) {
        PooledSet pa = pool_triples(params, config, side_a, side, layer, exclude_tag);
        PooledSet pb = pool_triples(params, config, side_b, side, layer, exclude_tag);
        reports.push_back(svcca_score(pa, pb));
    }
    return reports;
}

double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references, int max_order,
                   bool* zero_bucket_warning) {
    if (hypotheses.size() != references.size())
        throw ShapeError("corpus_bleu: hypothesis/reference counts differ");
    if (hypotheses.empty()) throw InvalidInput("corpus_bleu: empty corpus");
    if (max_order < 1) throw InvalidInput("corpus_bleu: max_order must be >= 1");
    if (zero_bucket_warning) *zero_bucket_warning = false;

    std::vector<long long> matches(static_cast<size_t>(max_order), 0);
    std::vector<long long> totals(static_cast<size_t>(max_order), 0);
    long long hyp_len = 0, ref_len = 0;
    for (size_t s = 0; s < hypotheses.size(); ++s) {
        hyp_len += static_cast<long long>(hypotheses[s].size());
        ref_len += static_cast<long long>(references[s].size());
        for (int order = 1; order <= max_order; ++order) {
            auto hyp_counts = ngram_counts(hypotheses[s], order);
            auto ref_counts = ngram_counts(references[s], order);
            for (const auto& [gram, count] : hyp_counts) {
                totals[static_cast<size_t>(order - 1)] += count;
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end())
                    matches[static_cast<size_t>(order - 1)] += std::min(count, it->second);
            }
        }
    }

    if (hyp_len == 0) return 0.0;
    double log_precision = 0.0;
    for (int order = 0; order < max_order; ++order) {
        size_t o = static_cast<size_t>(order);
        if (totals[o] == 0 || matches[o] == 0) {
            if (zero_bucket_warning) *zero_bucket_warning = true;
            return 0.0;
        }
        log_precision += std::log(static_cast<double>(matches[o]) / static_cast<double>(totals[o]));
    }
    log_precision /= static_cast<double>(max_order);
    double bp = hyp_len >= ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    return 100.0 * bp * std::exp(log_precision);
}

std::vector<std::vector<int>> translate_corpus(const model::ModelParams& params,
                                               const model::TransformerConfig& config,
                                               const std::vector<corpus::TaggedExample>& examples,
                                               int beam, int cap) {
    size_t n = examples.size();
    if (cap > 0) n = std::min(n, static_cast<size_t>(cap));
    std::vector<std::vector<int>> out(n);
    parallel_for(n, [&](size_t i) {
        out[i] = model::beam_search(params, config, examples[i].source, examples[i].tag, beam);
    });
    return out;
}

double identity_eval(const model::ModelParams& params, const model::TransformerConfig& config,
                     const corpus::DatasetSplits& data, int lang, int beam, int sentence_cap) {
    std::vector<corpus::TaggedExample> subset;
    for (const auto& ex : data.test_identity)
        if (ex.src_lang == lang) subset.push_back(ex);
    if (subset.empty()) throw InvalidInput("identity_eval: no identity sentences for language");
    if (sentence_cap > 0 && subset.size() > static_cast<size_t>(sentence_cap))
        subset.resize(static_cast<size_t>(sentence_cap));

    std::vector<std::vector<int>> hyps = translate_corpus(params, config, subset, beam);
    std::vector<std::vector<int>> refs;
    refs.reserve(subset.size());
    for (const auto& ex : subset) refs.push_back(ex.target);
    return corpus_bleu(hyps, refs);
}

double supervised_bleu(const model::ModelParams& params, const model::TransformerConfig& config,
                       const corpus::DatasetSplits& data, int beam, int sentence_cap) {
    std::vector<corpus::TaggedExample> subset = data.test_supervised;
    if (sentence_cap > 0 && subset.size() > static_cast<size_t>(sentence_cap))
        subset.resize(static_cast<size_t>(sentence_cap));
    if (subset.empty()) throw InvalidInput("supervised_bleu: empty supervised split");
    std::vector<std::vector<int>> hyps = translate_corpus(params, config, subset, beam);
    std::vector<std::vector<int>> refs;
    refs.reserve(subset.size());
    for (const auto& ex : subset) refs.push_back(ex.target);
    return corpus_bleu(hyps, refs);
}

double off_target_ratio(const std::vector<std::vector<int>>& hypotheses, int expected_lang,
                        const std::vector<corpus::SyntheticLanguage>& languages) {
    if (hypotheses.empty()) throw InvalidInput("off_target_ratio: empty hypothesis set");
    size_t off = 0;
    for (const auto& hyp : hypotheses) {
        std::optional<int> detected = corpus::detect_language(hyp, languages);
        if (!detected || *detected != expected_lang) ++off;
    }
    return static_cast<double>(off) / static_cast<double>(hypotheses.size());
}

double cluster_variance(const std::vector<std::vector<double>>& vectors,
                        const std::vector<int>& cluster_labels) {
    if (vectors.size() != cluster_labels.size())
        throw ShapeError("cluster_variance: label count mismatch");
    if (vectors.empty()) throw InvalidInput("cluster_variance: empty input");

    std::map<int, std::vector<std::vector<double>>> clusters;
    for (size_t i = 0; i < vectors.size(); ++i) {
        double norm = 0.0;
        for (double v : vectors[i]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-300) throw DegenerateInput("cluster_variance: zero-length vector");
        std::vector<double> unit(vectors[i].size());
        for (size_t j = 0; j < unit.size(); ++j) unit[j] = vectors[i][j] / norm;
        clusters[cluster_labels[i]].push_back(std::move(unit));
    }

    double total = 0.0;
    for (const auto& [label, members] : clusters) {
        size_t d = members[0].size();
        std::vector<double> centroid(d, 0.0);
        for (const auto& m : members)
            for (size_t j = 0; j < d; ++j) centroid[j] += m[j];
        for (double& c : centroid) c /= static_cast<double>(members.size());
        double spread = 0.0;
        for (const auto& m : members) {
            double dist2 = 0.0;
            for (size_t j = 0; j < d; ++j) {
                double diff = m[j] - centroid[j];
                dist2 += diff * diff;
            }
            spread += dist2;
        }
        total += spread / static_cast<double>(members.size());
    }
    return total / static_cast<double>(clusters.size());
}

std::vector<CorrelationEntry> correlation_report(const std::vector<PairObservation>& pairs) {
    std::map<int, std::vector<const PairObservation*>> by_target;
    for (const auto& p : pairs) by_target[p.tgt_lang].push_back(&p);

    std::vector<CorrelationEntry> report;
    for (const auto& [tgt, group] : by_target) {
        CorrelationEntry entry;
        entry.target_lang = tgt;
        entry.n = group.size();
        if (group.size() < 3) {
            entry.skipped = true;
        } else {
            std::vector<double> xs, ys;
            for (const auto* p : group) {
                xs.push_back(p->svcca);
                ys.push_back(p->delta_bleu);
            }
            linalg::PearsonResult r = linalg::pearson(xs, ys);
            entry.r = r.r;
            entry.p = r.p_value;
        }
        report.push_back(entry);
    }
    return report;
}

double bootstrap_significance(const std::vector<double>& scores_a,
                              const std::vector<double>& scores_b, int iterations, double ratio,
                              uint64_t seed) {
    if (scores_a.size() != scores_b.size())
        throw ShapeError("bootstrap_significance: paired sets must match in size");
    if (scores_a.empty()) throw InvalidInput("bootstrap_significance: empty input");
    if (iterations < 1) throw InvalidInput("bootstrap_significance: iterations must be >= 1");
    if (ratio <= 0.0 || ratio > 1.0)
        throw InvalidInput("bootstrap_significance: ratio must be in (0, 1]");

    size_t n = scores_a.size();
    size_t draw = std::max<size_t>(1, static_cast<size_t>(ratio * static_cast<double>(n)));
    Rng rng(mix_seed(seed, 0xb007u));
    int wins = 0;
    for (int it = 0; it < iterations; ++it) {
        double sum_a = 0.0, sum_b = 0.0;
        for (size_t d = 0; d < draw; ++d) {
            size_t i = static_cast<size_t>(rng.below(n));
            sum_a += scores_a[i];
            sum_b += scores_b[i];
        }
        if (sum_b >= sum_a) ++wins;
    }
    return static_cast<double>(wins) / static_cast<double>(iterations);
}

double token_accuracy(const model::ModelParams& params, const model::TransformerConfig& config,
                      const std::vector<corpus::TaggedExample>& examples, int cap) {
    size_t n = examples.size();
    if (cap > 0) n = std::min(n, static_cast<size_t>(cap));
    if (n == 0) throw InvalidInput("token_accuracy: empty example set");

    std::vector<size_t> hits(n, 0), totals(n, 0);
    parallel_for(n, [&](size_t i) {
        const auto& ex = examples[i];
        model::EncodeResult enc = model::encode(params, config, ex.source, ex.tag, false);
        model::DecodeResult dec =
            model::decode_teacher_forced(params, config, enc.output, ex.target, false);
        size_t vocab = dec.logits.cols();
        std::vector<int> gold = ex.target;
        gold.push_back(corpus::kEos);
        for (size_t p = 0; p < gold.size(); ++p) {
            const double* row = dec.logits.values().data() + p * vocab;
            size_t best = 0;
            for (size_t v = 1; v < vocab; ++v)
                if (row[v] > row[best]) best = v;
            if (static_cast<int>(best) == gold[p]) ++hits[i];
            ++totals[i];
        }
    });
    size_t hit = 0, total = 0;
    for (size_t i = 0; i < n; ++i) {
        hit += hits[i];
        total += totals[i];
    }
    return static_cast<double>(hit) / static_cast<double>(total);
}

// ---- exports ----

void export_layer_reports_csv(const std::vector<SvccaReport>& reports,
                              const std::vector<int>& layers, const std::string& path) {
    if (reports.size() != layers.size())
        throw ShapeError("export_layer_reports_csv: layer/report count mismatch");
    std::ostringstream out;
    out.precision(17);
    out << "layer,mean_rho,d_a,d_b,d_prime\n";
    for (size_t i = 0; i < reports.size(); ++i)
        out << layers[i] << "," << reports[i].mean << "," << reports[i].d_a << ","
            << reports[i].d_b << "," << reports[i].d_prime << "\n";
    io::atomic_write_file(path, out.str());
}

void export_vectors_csv(const std::vector<std::vector<double>>& vectors,
                        const std::string& path) {
    std::ostringstream out;
    out.precision(17);
    for (const auto& v : vectors) {
        for (size_t j = 0; j < v.size(); ++j) out << (j ? "," : "") << v[j];
        out << "\n";
    }
    io::atomic_write_file(path, out.str());
}

void export_spectral_csv(const linalg::SpectralEmbedding& embedding, const std::string& path) {
    std::ostringstream out;
    out.precision(17);
    out << "# disconnected=" << (embedding.disconnected ? 1 : 0)
        << " degenerate=" << (embedding.degenerate ? 1 : 0) << "\n";
    for (size_t i = 0; i < embedding.coordinates.rows(); ++i) {
        for (size_t j = 0; j < embedding.coordinates.cols(); ++j)
            out << (j ? "," : "") << embedding.coordinates(i, j);
        out << "\n";
    }
    io::atomic_write_file(path, out.str());
}

std::string svcca_report_to_json(const SvccaReport& report) {
    json j;
    j["mean"] = report.mean;
    j["per_sentence"] = report.per_sentence;
    j["d_a"] = report.d_a;
    j["d_b"] = report.d_b;
    j["d_prime"] = report.d_prime;
    j["variance_threshold"] = report.variance_threshold;
    return j.dump(2);
}

SvccaReport svcca_report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("svcca report: ") + e.what());
    }
    SvccaReport rep;
    try {
        rep.mean = j.at("mean").get<double>();
        rep.per_sentence = j.at("per_sentence").get<std::vector<double>>();
        rep.d_a = j.at("d_a").get<size_t>();
        rep.d_b = j.at("d_b").get<size_t>();
        rep.d_prime = j.at("d_prime").get<size_t>();
        rep.variance_threshold = j.at("variance_threshold").get<double>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("svcca report: ") + e.what());
    }
    return rep;
}

}  // namespace ztrans::analysis

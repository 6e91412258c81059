#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ztrans/corpus.hpp"
#include "ztrans/linalg.hpp"
#include "ztrans/model.hpp"

namespace ztrans::analysis {

enum class Side { Encoder, Decoder };

// Per-layer, per-position hidden states captured for analysis.
struct LayerTrace {
    Side side = Side::Encoder;
    int layer = 0;  // 1-based
    linalg::Matrix values;  // positions x d_model
    bool has_tag_position = false;  // encoder input starts with the tag
};

struct PooledSet {
    std::vector<std::vector<double>> vectors;
    Side side = Side::Encoder;
    int layer = 0;
    bool tag_excluded = true;
};

struct SvccaReport {
    std::vector<double> per_sentence;  // rho_i
    double mean = 0.0;
    size_t d_a = 0;
    size_t d_b = 0;
    size_t d_prime = 0;
    double variance_threshold = 0.0;
};

enum class ComparisonCase { CaseI, CaseII, CaseIII, CaseIV, CaseV };

inline constexpr double kDefaultVarianceThreshold = 0.99;
inline constexpr double kDefaultCcaRegularization = 1e-6;

std::vector<double> mean_pool(const LayerTrace& trace, bool exclude_tag);

SvccaReport svcca_score(const PooledSet& set_a, const PooledSet& set_b,
                        double variance_threshold = kDefaultVarianceThreshold,
                        double regularization = kDefaultCcaRegularization);

// Builds the two pooled sets per the case's triple patterns on the aligned
// test semantics and scores them for each requested layer (1-based).
std::vector<SvccaReport> run_comparison(const model::ModelParams& params,
                                        const model::TransformerConfig& config,
                                        const corpus::DatasetSplits& data, ComparisonCase cmp,
                                        int lang_a, int lang_b, Side side,
                                        const std::vector<int>& layers, int sentence_cap = 0,
                                        bool exclude_tag = true);

double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references, int max_order = 4,
                   bool* zero_bucket_warning = nullptr);

// Decodes the identity split of one language and scores against the gold
// (= the source itself).
double identity_eval(const model::ModelParams& params, const model::TransformerConfig& config,
                     const corpus::DatasetSplits& data, int lang, int beam, int sentence_cap = 0);

double off_target_ratio(const std::vector<std::vector<int>>& hypotheses, int expected_lang,
                        const std::vector<corpus::SyntheticLanguage>& languages);

// Mean over clusters of mean squared distance to the centroid, computed on
// length-normalized vectors.
double cluster_variance(const std::vector<std::vector<double>>& vectors,
                        const std::vector<int>& cluster_labels);

struct CorrelationEntry {
    int target_lang = 0;
    double r = 0.0;
    double p = 0.0;
    size_t n = 0;
    bool skipped = false;  // undersized group
};

struct PairObservation {
    int src_lang = 0;
    int tgt_lang = 0;
    double delta_bleu = 0.0;
    double svcca = 0.0;
};

std::vector<CorrelationEntry> correlation_report(const std::vector<PairObservation>& pairs);

// Paired bootstrap: p = fraction of resamples where mean(b) >= mean(a).
double bootstrap_significance(const std::vector<double>& scores_a,
                              const std::vector<double>& scores_b, int iterations = 1000,
                              double ratio = 0.5, uint64_t seed = 0);

// ---- supporting evaluation helpers ----

// Teacher-forced argmax accuracy over target tokens (incl. the closing eos).
double token_accuracy(const model::ModelParams& params, const model::TransformerConfig& config,
                      const std::vector<corpus::TaggedExample>& examples, int cap = 0);

// Beam decode over a set of examples; parallel over sentences, results in
// sentence-index order. Thread count capped by ZTRANS_THREADS.
std::vector<std::vector<int>> translate_corpus(const model::ModelParams& params,
                                               const model::TransformerConfig& config,
                                               const std::vector<corpus::TaggedExample>& examples,
                                               int beam, int cap = 0);

double supervised_bleu(const model::ModelParams& params, const model::TransformerConfig& config,
                       const corpus::DatasetSplits& data, int beam, int sentence_cap = 0);

// ---- exports ----
void export_layer_reports_csv(const std::vector<SvccaReport>& reports,
                              const std::vector<int>& layers, const std::string& path);
void export_vectors_csv(const std::vector<std::vector<double>>& vectors, const std::string& path);
void export_spectral_csv(const linalg::SpectralEmbedding& embedding, const std::string& path);
std::string svcca_report_to_json(const SvccaReport& report);
SvccaReport svcca_report_from_json(const std::string& text);

}  // namespace ztrans::analysis

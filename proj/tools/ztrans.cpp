// Command-line front end: corpus generation, training, translation, and the
// representation-analysis battery, all driven by one JSON experiment config.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ztrans/analysis.hpp"
#include "ztrans/corpus.hpp"
#include "ztrans/errors.hpp"
#include "ztrans/io.hpp"
#include "ztrans/model.hpp"
#include "ztrans/serialize.hpp"
#include "ztrans/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ztrans;

namespace {

struct AnalysisOptions {
    int beam = 4;
    double variance_threshold = analysis::kDefaultVarianceThreshold;
    double regularization = analysis::kDefaultCcaRegularization;
    int sentence_cap = 100;
    bool exclude_tag = true;
    int bootstrap_iterations = 1000;
    double bootstrap_ratio = 0.5;
    uint64_t bootstrap_seed = 1;
};

struct ExperimentConfig {
    corpus::CorpusConfig corpus_cfg;
    model::TransformerConfig model_cfg;  // vocab_size/num_languages filled from data
    training::TrainConfig train_cfg;
    AnalysisOptions analysis_cfg;
};

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ConfigError("config: unknown key \"" + where + it.key() + "\"");
}

template <typename T>
void read_into(const json& j, const char* key, T& slot) {
    if (j.contains(key)) slot = j.at(key).get<T>();
}

ExperimentConfig parse_experiment_config(const json& j) {
    reject_unknown(j, {"corpus", "model", "train", "analysis"}, "");
    ExperimentConfig cfg;

    if (j.contains("corpus")) {
        const json& c = j.at("corpus");
        reject_unknown(c,
                       {"num_languages", "sentences_per_pair", "valid_sentences_per_pair",
                        "test_sentences_per_pair", "concept_vocab_size", "min_len", "max_len",
                        "seed"},
                       "corpus.");
        read_into(c, "num_languages", cfg.corpus_cfg.num_languages);
        read_into(c, "sentences_per_pair", cfg.corpus_cfg.sentences_per_pair);
        read_into(c, "valid_sentences_per_pair", cfg.corpus_cfg.valid_sentences_per_pair);
        read_into(c, "test_sentences_per_pair", cfg.corpus_cfg.test_sentences_per_pair);
        read_into(c, "concept_vocab_size", cfg.corpus_cfg.concept_vocab_size);
        read_into(c, "min_len", cfg.corpus_cfg.min_len);
        read_into(c, "max_len", cfg.corpus_cfg.max_len);
        read_into(c, "seed", cfg.corpus_cfg.seed);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        reject_unknown(m,
                       {"enc_layers", "dec_layers", "d_model", "heads", "d_ffn", "dropout",
                        "max_positions", "activation", "lole_enabled", "lole_layer", "d_e",
                        "lclr_enabled", "lclr_layer", "d_h", "k"},
                       "model.");
        auto& mc = cfg.model_cfg;
        read_into(m, "enc_layers", mc.enc_layers);
        read_into(m, "dec_layers", mc.dec_layers);
        read_into(m, "d_model", mc.d_model);
        read_into(m, "heads", mc.heads);
        read_into(m, "d_ffn", mc.d_ffn);
        read_into(m, "dropout", mc.dropout);
        read_into(m, "max_positions", mc.max_positions);
        if (m.contains("activation")) {
            std::string act = m.at("activation").get<std::string>();
            if (act == "gelu")
                mc.activation = model::Activation::Gelu;
            else if (act == "relu")
                mc.activation = model::Activation::Relu;
            else
                throw ConfigError("config: unknown activation " + act);
        }
        read_into(m, "lole_enabled", mc.lole_enabled);
        read_into(m, "lole_layer", mc.lole_layer);
        read_into(m, "d_e", mc.d_e);
        read_into(m, "lclr_enabled", mc.lclr_enabled);
        read_into(m, "lclr_layer", mc.lclr_layer);
        read_into(m, "d_h", mc.d_h);
        read_into(m, "k", mc.k);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown(t,
                       {"base_lr", "warmup_steps", "label_smoothing", "adam_beta1", "adam_beta2",
                        "adam_eps", "max_steps", "batch_tokens", "temperature", "seed",
                        "checkpoint_every", "log_every", "lclr_mean_normalize",
                        "valid_examples_cap"},
                       "train.");
        auto& tc = cfg.train_cfg;
        read_into(t, "base_lr", tc.base_lr);
        read_into(t, "warmup_steps", tc.warmup_steps);
        read_into(t, "label_smoothing", tc.label_smoothing);
        read_into(t, "adam_beta1", tc.adam_beta1);
        read_into(t, "adam_beta2", tc.adam_beta2);
        read_into(t, "adam_eps", tc.adam_eps);
        read_into(t, "max_steps", tc.max_steps);
        read_into(t, "batch_tokens", tc.batch_tokens);
        read_into(t, "temperature", tc.temperature);
        read_into(t, "seed", tc.seed);
        read_into(t, "checkpoint_every", tc.checkpoint_every);
        read_into(t, "log_every", tc.log_every);
        read_into(t, "lclr_mean_normalize", tc.lclr_mean_normalize);
        read_into(t, "valid_examples_cap", tc.valid_examples_cap);
    }
    if (j.contains("analysis")) {
        const json& a = j.at("analysis");
        reject_unknown(a,
                       {"beam", "variance_threshold", "regularization", "sentence_cap",
                        "exclude_tag", "bootstrap_iterations", "bootstrap_ratio",
                        "bootstrap_seed"},
                       "analysis.");
        auto& ac = cfg.analysis_cfg;
        read_into(a, "beam", ac.beam);
        read_into(a, "variance_threshold", ac.variance_threshold);
        read_into(a, "regularization", ac.regularization);
        read_into(a, "sentence_cap", ac.sentence_cap);
        read_into(a, "exclude_tag", ac.exclude_tag);
        read_into(a, "bootstrap_iterations", ac.bootstrap_iterations);
        read_into(a, "bootstrap_ratio", ac.bootstrap_ratio);
        read_into(a, "bootstrap_seed", ac.bootstrap_seed);
    }
    return cfg;
}

json resolved_json(const ExperimentConfig& cfg) {
    json j;
    j["corpus"] = {{"num_languages", cfg.corpus_cfg.num_languages},
                   {"sentences_per_pair", cfg.corpus_cfg.sentences_per_pair},
                   {"valid_sentences_per_pair", cfg.corpus_cfg.valid_sentences_per_pair},
                   {"test_sentences_per_pair", cfg.corpus_cfg.test_sentences_per_pair},
                   {"concept_vocab_size", cfg.corpus_cfg.concept_vocab_size},
                   {"min_len", cfg.corpus_cfg.min_len},
                   {"max_len", cfg.corpus_cfg.max_len},
                   {"seed", cfg.corpus_cfg.seed}};
    j["model"] = to_json(cfg.model_cfg);
    j["train"] = {{"base_lr", cfg.train_cfg.base_lr},
                  {"warmup_steps", cfg.train_cfg.warmup_steps},
                  {"label_smoothing", cfg.train_cfg.label_smoothing},
                  {"adam_beta1", cfg.train_cfg.adam_beta1},
                  {"adam_beta2", cfg.train_cfg.adam_beta2},
                  {"adam_eps", cfg.train_cfg.adam_eps},
                  {"max_steps", cfg.train_cfg.max_steps},
                  {"batch_tokens", cfg.train_cfg.batch_tokens},
                  {"temperature", cfg.train_cfg.temperature},
                  {"seed", cfg.train_cfg.seed},
                  {"checkpoint_every", cfg.train_cfg.checkpoint_every},
                  {"log_every", cfg.train_cfg.log_every},
                  {"lclr_mean_normalize", cfg.train_cfg.lclr_mean_normalize},
                  {"valid_examples_cap", cfg.train_cfg.valid_examples_cap}};
    j["analysis"] = {{"beam", cfg.analysis_cfg.beam},
                     {"variance_threshold", cfg.analysis_cfg.variance_threshold},
                     {"regularization", cfg.analysis_cfg.regularization},
                     {"sentence_cap", cfg.analysis_cfg.sentence_cap},
                     {"exclude_tag", cfg.analysis_cfg.exclude_tag},
                     {"bootstrap_iterations", cfg.analysis_cfg.bootstrap_iterations},
                     {"bootstrap_ratio", cfg.analysis_cfg.bootstrap_ratio},
                     {"bootstrap_seed", cfg.analysis_cfg.bootstrap_seed}};
    return j;
}

// `--set section.key=value`; the value is parsed as JSON when possible,
// otherwise taken as a string.
void apply_override(json& doc, const std::string& spec) {
    size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("config: override must look like key=value: " + spec);
    std::string path = spec.substr(0, eq);
    std::string raw = spec.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* cursor = &doc;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        std::string part = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) throw ConfigError("config: empty path segment in " + spec);
        if (dot == std::string::npos) {
            (*cursor)[part] = value;
            break;
        }
        cursor = &(*cursor)[part];
        start = dot + 1;
    }
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    json doc = json::object();
    if (!path.empty()) {
        try {
            doc = json::parse(io::read_file(path));
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config: invalid JSON: ") + e.what());
        }
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return parse_experiment_config(doc);
}

void apply_variant(model::TransformerConfig& mc, const std::string& variant) {
    if (variant == "vanilla") {
        mc.lole_enabled = false;
        mc.lclr_enabled = false;
    } else if (variant == "lole") {
        mc.lole_enabled = true;
        mc.lclr_enabled = false;
    } else if (variant == "lclr") {
        mc.lole_enabled = false;
        mc.lclr_enabled = true;
    } else if (variant == "both") {
        mc.lole_enabled = true;
        mc.lclr_enabled = true;
    } else {
        throw ConfigError("train: unknown variant " + variant);
    }
}

std::vector<corpus::SyntheticLanguage> languages_of_checkpoint(
    const model::TransformerConfig& mc) {
    int t = mc.num_languages;
    if (t < 1 || mc.vocab_size <= 3 + t || (mc.vocab_size - 3 - t) % t != 0)
        throw ConfigError("checkpoint: vocabulary does not match the synthetic layout");
    return corpus::make_languages(t, (mc.vocab_size - 3 - t) / t);
}

int resolve_lang(const std::string& name, const std::vector<corpus::SyntheticLanguage>& langs) {
    for (const auto& l : langs)
        if (l.name == name) return l.id;
    throw InvalidInput("unknown language \"" + name + "\"");
}

std::vector<int> parse_tokens(const std::string& line) {
    std::istringstream in(line);
    std::vector<int> toks;
    int t;
    while (in >> t) toks.push_back(t);
    return toks;
}

std::string format_tokens(const std::vector<int>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += std::to_string(toks[i]);
    }
    return out;
}

std::vector<double> read_score_file(const std::string& path) {
    std::istringstream in(io::read_file(path));
    std::vector<double> scores;
    double v;
    while (in >> v) scores.push_back(v);
    if (scores.empty()) throw InvalidInput("score file is empty: " + path);
    return scores;
}

// ---- subcommands ----

int cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_dir, bool force) {
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
        throw IoError("gen-data: output directory is not empty (use --force): " + out_dir);
    corpus::DatasetSplits data = corpus::build_dataset(cfg.corpus_cfg);
    corpus::save_dataset(data, out_dir);
    std::cout << "wrote dataset: " << data.train.size() << " train, " << data.valid.size()
              << " valid, " << data.test_supervised.size() << " supervised test, "
              << data.test_zero_shot.size() << " zero-shot, " << data.test_identity.size()
              << " identity\n";
    return 0;
}

int cmd_train(ExperimentConfig cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& variant, bool resume) {
    corpus::DatasetSplits data = corpus::load_dataset(data_dir);
    cfg.model_cfg.vocab_size = data.vocab_size();
    cfg.model_cfg.num_languages = data.config.num_languages;
    if (!variant.empty()) apply_variant(cfg.model_cfg, variant);
    cfg.model_cfg.validate();

    fs::create_directories(out_dir);
    fs::path last_ck = fs::path(out_dir) / "checkpoint_last.ztrx";
    fs::path state_file = fs::path(out_dir) / "state.json";

    model::ModelParams resume_params;
    int resume_step = 0;
    if (resume) {
        if (!fs::exists(last_ck) || !fs::exists(state_file))
            throw IoError("train: --resume needs checkpoint_last.ztrx and state.json in " +
                          out_dir);
        auto [p, ck_cfg] = model::load_checkpoint(last_ck.string());
        resume_params = std::move(p);
        cfg.model_cfg = ck_cfg;
        resume_step = json::parse(io::read_file(state_file.string())).at("step").get<int>();
        std::cout << "resuming from step " << resume_step << "\n";
    }

    auto on_checkpoint = [&](int step, const model::ModelParams& params) {
        model::save_checkpoint(params, cfg.model_cfg, last_ck.string());
        io::atomic_write_file(state_file.string(), json{{"step", step}}.dump() + "\n");
    };
    training::TrainResult result =
        training::train(cfg.model_cfg, cfg.train_cfg, data, resume ? &resume_params : nullptr,
                        resume_step, on_checkpoint);

    model::save_checkpoint(result.best_params, cfg.model_cfg,
                           (fs::path(out_dir) / "checkpoint_best.ztrx").string());
    std::string metrics = result.metrics_jsonl;
    fs::path metrics_path = fs::path(out_dir) / "metrics.jsonl";
    if (resume && fs::exists(metrics_path))
        metrics = io::read_file(metrics_path.string()) + metrics;
    io::atomic_write_file(metrics_path.string(), metrics);
    io::atomic_write_file((fs::path(out_dir) / "config.json").string(),
                          resolved_json(cfg).dump(2) + "\n");
    std::cout << "best valid ce " << result.best_valid_ce << " at step " << result.best_step
              << "\n";
    return 0;
}

int cmd_translate(const std::string& checkpoint, const std::string& input,
                  const std::string& lang, const std::string& output, int beam) {
    auto [params, mc] = model::load_checkpoint(checkpoint);
    auto langs = languages_of_checkpoint(mc);
    int tgt = resolve_lang(lang, langs);
    int tag = langs[static_cast<size_t>(tgt)].tag_token;

    std::istringstream in(io::read_file(input));
    std::string line;
    std::vector<std::vector<int>> sources;
    while (std::getline(in, line)) sources.push_back(parse_tokens(line));

    std::ostringstream out;
    for (const auto& src : sources) {
        if (src.empty()) {
            out << "\n";
            continue;
        }
        out << format_tokens(model::beam_search(params, mc, src, tag, beam)) << "\n";
    }
    io::atomic_write_file(output, out.str());
    return 0;
}

analysis::ComparisonCase parse_case(const std::string& name) {
    if (name == "i") return analysis::ComparisonCase::CaseI;
    if (name == "ii") return analysis::ComparisonCase::CaseII;
    if (name == "iii") return analysis::ComparisonCase::CaseIII;
    if (name == "iv") return analysis::ComparisonCase::CaseIV;
    if (name == "v") return analysis::ComparisonCase::CaseV;
    throw ConfigError("analyze: unknown case " + name);
}

int cmd_analyze(const ExperimentConfig& cfg, const std::string& checkpoint,
                const std::string& data_dir, const std::string& out_dir,
                const std::string& case_name, const std::string& layers_arg,
                const std::string& lang_a, const std::string& lang_b, bool do_svcca,
                bool do_offtarget, bool do_correlate, const std::string& scores_a,
                const std::string& scores_b) {
    fs::create_directories(out_dir);
    const AnalysisOptions& ac = cfg.analysis_cfg;

    if (!scores_a.empty() || !scores_b.empty()) {
        if (scores_a.empty() || scores_b.empty())
            throw ConfigError("analyze: --significance needs both score files");
        double p = analysis::bootstrap_significance(read_score_file(scores_a),
                                                    read_score_file(scores_b),
                                                    ac.bootstrap_iterations, ac.bootstrap_ratio,
                                                    ac.bootstrap_seed);
        json out{{"p", p},
                 {"iterations", ac.bootstrap_iterations},
                 {"ratio", ac.bootstrap_ratio},
                 {"seed", ac.bootstrap_seed},
                 {"convention", "p is the fraction of resamples where mean(b) >= mean(a); "
                                "small p = evidence b is not better than a is weak"}};
        io::atomic_write_file((fs::path(out_dir) / "significance.json").string(),
                              out.dump(2) + "\n");
        std::cout << "p = " << p << "\n";
        return 0;
    }

    auto [params, mc] = model::load_checkpoint(checkpoint);
    corpus::DatasetSplits data = corpus::load_dataset(data_dir);
    if (mc.vocab_size != data.vocab_size() || mc.num_languages != data.config.num_languages)
        throw ConfigError("analyze: checkpoint and dataset disagree on vocabulary layout");

    if (!case_name.empty()) {
        analysis::ComparisonCase cmp = parse_case(case_name);
        bool decoder = cmp == analysis::ComparisonCase::CaseIV ||
                       cmp == analysis::ComparisonCase::CaseV;
        analysis::Side side = decoder ? analysis::Side::Decoder : analysis::Side::Encoder;
        int n_layers = decoder ? mc.dec_layers : mc.enc_layers;
        std::vector<int> layers;
        if (layers_arg == "all") {
            for (int l = 1; l <= n_layers; ++l) layers.push_back(l);
        } else {
            std::istringstream in(layers_arg);
            std::string part;
            while (std::getline(in, part, ',')) layers.push_back(std::stoi(part));
        }
        int a = resolve_lang(lang_a, data.languages);
        int b = resolve_lang(lang_b, data.languages);
        std::vector<analysis::SvccaReport> reports =
            analysis::run_comparison(params, mc, data, cmp, a, b, side, layers, ac.sentence_cap,
                                     ac.exclude_tag);
        analysis::export_layer_reports_csv(
            reports, layers, (fs::path(out_dir) / ("case_" + case_name + ".csv")).string());
        for (size_t i = 0; i < reports.size(); ++i)
            std::cout << "case " << case_name << " layer " << layers[i] << " mean rho "
                      << reports[i].mean << "\n";
        return 0;
    }

    if (do_svcca) {
        // Encoder final-layer SVCCA for every ordered language pair.
        std::ostringstream out;
        out.precision(17);
        out << "lang_a,lang_b,mean_rho\n";
        for (const auto& la : data.languages)
            for (const auto& lb : data.languages) {
                if (la.id == lb.id) continue;
                auto reports = analysis::run_comparison(
                    params, mc, data, analysis::ComparisonCase::CaseIII, la.id, lb.id,
                    analysis::Side::Encoder, {mc.enc_layers}, ac.sentence_cap, ac.exclude_tag);
                out << la.name << "," << lb.name << "," << reports[0].mean << "\n";
                std::cout << la.name << "->" << lb.name << " mean rho " << reports[0].mean
                          << "\n";
            }
        io::atomic_write_file((fs::path(out_dir) / "svcca_pairs.csv").string(), out.str());
        return 0;
    }

    if (do_offtarget || do_correlate) {
        // Per zero-shot direction: decode, off-target ratio, BLEU; correlate
        // additionally pairs BLEU with the direction's encoder SVCCA.
        std::map<std::pair<int, int>, std::vector<corpus::TaggedExample>> by_dir;
        for (const auto& ex : data.test_zero_shot) by_dir[{ex.src_lang, ex.tgt_lang}].push_back(ex);

        std::ostringstream out;
        out.precision(17);
        out << (do_correlate ? "src,tgt,bleu,off_target,svcca\n" : "src,tgt,bleu,off_target\n");
        std::vector<analysis::PairObservation> obs;
        for (auto& [dir, examples] : by_dir) {
            if (ac.sentence_cap > 0 && examples.size() > static_cast<size_t>(ac.sentence_cap))
                examples.resize(static_cast<size_t>(ac.sentence_cap));
            auto hyps = analysis::translate_corpus(params, mc, examples, ac.beam);
            std::vector<std::vector<int>> refs;
            for (const auto& ex : examples) refs.push_back(ex.target);
            double bleu = analysis::corpus_bleu(hyps, refs);
            double off = analysis::off_target_ratio(hyps, dir.second, data.languages);
            out << data.languages[static_cast<size_t>(dir.first)].name << ","
                << data.languages[static_cast<size_t>(dir.second)].name << "," << bleu << ","
                << off;
            if (do_correlate) {
                auto reports = analysis::run_comparison(
                    params, mc, data, analysis::ComparisonCase::CaseIII, dir.first, dir.second,
                    analysis::Side::Encoder, {mc.enc_layers}, ac.sentence_cap, ac.exclude_tag);
                obs.push_back({dir.first, dir.second, bleu, reports[0].mean});
                out << "," << reports[0].mean;
            }
            out << "\n";
        }
        io::atomic_write_file(
            (fs::path(out_dir) / (do_correlate ? "correlate.csv" : "offtarget.csv")).string(),
            out.str());
        if (do_correlate) {
            std::ostringstream rep;
            rep.precision(17);
            rep << "target,n,r,p,skipped\n";
            for (const auto& e : analysis::correlation_report(obs)) {
                rep << data.languages[static_cast<size_t>(e.target_lang)].name << "," << e.n
                    << "," << e.r << "," << e.p << "," << (e.skipped ? 1 : 0) << "\n";
                std::cout << "target " << data.languages[static_cast<size_t>(e.target_lang)].name
                          << (e.skipped ? " skipped (undersized group)"
                                        : " r " + std::to_string(e.r)) << "\n";
            }
            io::atomic_write_file((fs::path(out_dir) / "correlation.csv").string(), rep.str());
        }
        return 0;
    }

    throw ConfigError("analyze: pick one of --case, --svcca, --offtarget, --correlate, "
                      "--significance");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic multilingual translation laboratory"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "Experiment config (JSON)");
    app.add_option("--set", overrides, "Override config keys, e.g. --set train.max_steps=100");

    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
    gen->fallthrough();
    std::string gen_out;
    bool gen_force = false;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_flag("--force", gen_force, "Write into a non-empty directory");

    auto* train = app.add_subcommand("train", "Train a model");
    train->fallthrough();
    std::string train_data, train_out, variant;
    bool train_resume = false;
    train->add_option("--data", train_data, "Dataset directory")->required();
    train->add_option("--out", train_out, "Run directory")->required();
    train->add_option("--variant", variant, "vanilla|lole|lclr|both");
    train->add_flag("--resume", train_resume, "Resume from the run's last checkpoint");

    auto* trans = app.add_subcommand("translate", "Decode a token file");
    trans->fallthrough();
    std::string tr_ck, tr_in, tr_lang, tr_out;
    int tr_beam = 4;
    trans->add_option("--checkpoint", tr_ck, "Checkpoint file")->required();
    trans->add_option("--input", tr_in, "Input file, one token sequence per line")->required();
    trans->add_option("--lang", tr_lang, "Target language name, e.g. l2")->required();
    trans->add_option("--out", tr_out, "Output file")->required();
    trans->add_option("--beam", tr_beam, "Beam size (default 4)");

    auto* ana = app.add_subcommand("analyze", "Representation analysis battery");
    ana->fallthrough();
    std::string an_ck, an_data, an_out, an_case, an_layers = "all";
    std::string an_lang_a = "en", an_lang_b = "l1", an_scores_a, an_scores_b;
    bool an_svcca = false, an_offtarget = false, an_correlate = false;
    ana->add_option("--checkpoint", an_ck, "Checkpoint file");
    ana->add_option("--data", an_data, "Dataset directory");
    ana->add_option("--out", an_out, "Output directory")->required();
    ana->add_option("--case", an_case, "Comparison case: i|ii|iii|iv|v");
    ana->add_option("--layers", an_layers, "Comma list of 1-based layers, or 'all'");
    ana->add_option("--lang-a", an_lang_a, "First language");
    ana->add_option("--lang-b", an_lang_b, "Second language");
    ana->add_flag("--svcca", an_svcca, "Pairwise encoder SVCCA table");
    ana->add_flag("--offtarget", an_offtarget, "Zero-shot off-target ratios");
    ana->add_flag("--correlate", an_correlate, "SVCCA vs zero-shot BLEU correlation");
    ana->add_option("--significance", an_scores_a, "Score file A for the paired bootstrap");
    ana->add_option("--against", an_scores_b, "Score file B for the paired bootstrap");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        ExperimentConfig cfg = load_config(config_path, overrides);
        if (gen->parsed()) return cmd_gen_data(cfg, gen_out, gen_force);
        if (train->parsed()) return cmd_train(cfg, train_data, train_out, variant, train_resume);
        if (trans->parsed()) return cmd_translate(tr_ck, tr_in, tr_lang, tr_out, tr_beam);
        if (ana->parsed())
            return cmd_analyze(cfg, an_ck, an_data, an_out, an_case, an_layers, an_lang_a,
                               an_lang_b, an_svcca, an_offtarget, an_correlate, an_scores_a,
                               an_scores_b);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 4;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

#include "ztrans/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ztrans/errors.hpp"
#include "ztrans/io.hpp"
#include "ztrans/rng.hpp"

namespace ztrans::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

int DatasetSplits::vocab_size() const {
    return 3 + config.num_languages + config.num_languages * config.concept_vocab_size;
}

const SyntheticLanguage& DatasetSplits::language(int id) const {
    if (id < 0 || id >= static_cast<int>(languages.size()))
        throw InvalidInput("unknown language id " + std::to_string(id));
    return languages[static_cast<size_t>(id)];
}

std::optional<int> DatasetSplits::language_of_tag(int tag) const {
    for (const auto& l : languages)
        if (l.tag_token == tag) return l.id;
    return std::nullopt;
}

std::vector<SyntheticLanguage> make_languages(int count, int concept_vocab_size) {
    static const OrderRule rules[] = {OrderRule::Identity, OrderRule::Reverse,
                                      OrderRule::SwapAdjacentPairs, OrderRule::RotateByOne};
    std::vector<SyntheticLanguage> langs;
    for (int i = 0; i < count; ++i) {
        SyntheticLanguage l;
        l.id = i;
        l.tag_token = 3 + i;
        l.vocab_offset = 3 + count + i * concept_vocab_size;
        l.order_rule = rules[i % 4];
        l.name = i == 0 ? "en" : "l" + std::to_string(i);
        langs.push_back(l);
    }
    return langs;
}

std::vector<std::vector<int>> generate_semantics(int count, int min_len, int max_len,
                                                 int concept_vocab_size, uint64_t seed) {
    if (min_len < 2) throw InvalidInput("generate_semantics: min length must be >= 2");
    if (max_len < min_len) throw InvalidInput("generate_semantics: bad length range");
    if (concept_vocab_size < 8) throw InvalidInput("generate_semantics: concept vocab too small");
    Rng rng(mix_seed(seed, 0xc0de));
    std::vector<std::vector<int>> out;
    out.reserve(static_cast<size_t>(std::max(0, count)));
    for (int i = 0; i < count; ++i) {
        size_t len = static_cast<size_t>(min_len) +
                     rng.below(static_cast<uint64_t>(max_len - min_len + 1));
        std::vector<int> s(len);
        for (auto& c : s) c = static_cast<int>(rng.below(static_cast<uint64_t>(concept_vocab_size)));
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<int> render(const std::vector<int>& semantics, const SyntheticLanguage& lang) {
    std::vector<int> ordered = semantics;
    switch (lang.order_rule) {
        case OrderRule::Identity:
            break;
        case OrderRule::Reverse:
            std::reverse(ordered.begin(), ordered.end());
            break;
        case OrderRule::SwapAdjacentPairs:
            for (size_t i = 0; i + 1 < ordered.size(); i += 2) std::swap(ordered[i], ordered[i + 1]);
            break;
        case OrderRule::RotateByOne:
            if (!ordered.empty())
                std::rotate(ordered.begin(), ordered.end() - 1, ordered.end());
            break;
    }
    for (auto& c : ordered) c += lang.vocab_offset;
    return ordered;
}

namespace {

TaggedExample make_example(const std::vector<int>& sem, const SyntheticLanguage& src,
                           const SyntheticLanguage& tgt) {
    TaggedExample e;
    e.source = render(sem, src);
    e.target = render(sem, tgt);
    e.tag = tgt.tag_token;
    e.src_lang = src.id;
    e.tgt_lang = tgt.id;
    return e;
}

void assign_example_ids(DatasetSplits& d) {
    std::vector<TaggedExample>* splits[] = {&d.train, &d.valid, &d.test_supervised,
                                            &d.test_zero_shot, &d.test_identity};
    for (size_t s = 0; s < 5; ++s)
        for (size_t i = 0; i < splits[s]->size(); ++i)
            (*splits[s])[i].example_id = mix_seed(s + 1, i);
}

}  // namespace

DatasetSplits build_dataset(const CorpusConfig& config) {
    if (config.num_languages < 3) throw InvalidInput("build_dataset: need at least 3 languages");
    DatasetSplits d;
    d.config = config;
    d.languages = make_languages(config.num_languages, config.concept_vocab_size);

    auto gen = [&](int count, uint64_t salt) {
        return generate_semantics(count, config.min_len, config.max_len,
                                  config.concept_vocab_size, mix_seed(config.seed, salt));
    };
    auto train_sem = gen(config.sentences_per_pair, 1);
    auto valid_sem = gen(config.valid_sentences_per_pair, 2);
    auto test_sem = gen(config.test_sentences_per_pair, 3);

    const auto& en = d.languages[0];
    for (int x = 1; x < config.num_languages; ++x) {
        const auto& lx = d.languages[static_cast<size_t>(x)];
        for (const auto& sem : train_sem) {
            d.train.push_back(make_example(sem, en, lx));
            d.train.push_back(make_example(sem, lx, en));
        }
        for (const auto& sem : valid_sem) {
            d.valid.push_back(make_example(sem, en, lx));
            d.valid.push_back(make_example(sem, lx, en));
        }
        for (const auto& sem : test_sem) {
            d.test_supervised.push_back(make_example(sem, en, lx));
            d.test_supervised.push_back(make_example(sem, lx, en));
        }
    }
    for (int a = 1; a < config.num_languages; ++a)
        for (int b = 1; b < config.num_languages; ++b) {
            if (a == b) continue;
            for (const auto& sem : test_sem)
                d.test_zero_shot.push_back(make_example(sem, d.languages[static_cast<size_t>(a)],
                                                        d.languages[static_cast<size_t>(b)]));
        }
    for (int a = 0; a < config.num_languages; ++a)
        for (const auto& sem : test_sem)
            d.test_identity.push_back(make_example(sem, d.languages[static_cast<size_t>(a)],
                                                   d.languages[static_cast<size_t>(a)]));

    assign_example_ids(d);
    return d;
}

std::optional<int> detect_language(const std::vector<int>& tokens,
                                   const std::vector<SyntheticLanguage>& languages) {
    if (tokens.empty() || languages.empty()) return std::nullopt;
    const int concept_vocab =
        languages.size() > 1 ? languages[1].vocab_offset - languages[0].vocab_offset
                             : 1 << 30;
    std::vector<int> votes(languages.size(), 0);
    for (int t : tokens)
        for (size_t i = 0; i < languages.size(); ++i)
            if (t >= languages[i].vocab_offset && t < languages[i].vocab_offset + concept_vocab)
                ++votes[i];
    int best = -1, best_votes = 0;
    bool tie = false;
    for (size_t i = 0; i < votes.size(); ++i) {
        if (votes[i] > best_votes) {
            best = static_cast<int>(i);
            best_votes = votes[i];
            tie = false;
        } else if (votes[i] == best_votes && votes[i] > 0) {
            tie = true;
        }
    }
    if (best < 0 || best_votes == 0 || tie) return std::nullopt;
    return best;
}

std::vector<double> temperature_probabilities(const std::vector<size_t>& counts, double t) {
    if (t < 1.0) throw InvalidInput("temperature must be >= 1");
    size_t total = 0;
    for (size_t c : counts) total += c;
    if (total == 0) throw InvalidInput("temperature_probabilities: empty counts");
    std::vector<double> p(counts.size());
    double norm = 0.0;
    for (size_t i = 0; i < counts.size(); ++i) {
        double q = static_cast<double>(counts[i]) / static_cast<double>(total);
        p[i] = q > 0.0 ? std::pow(q, 1.0 / t) : 0.0;
        norm += p[i];
    }
    for (auto& v : p) v /= norm;
    return p;
}

BatchStream::BatchStream(const std::vector<TaggedExample>& examples, double temperature,
                         int batch_tokens, uint64_t seed)
    : examples_(&examples), batch_tokens_(batch_tokens), seed_(seed) {
    if (examples.empty()) throw InvalidInput("BatchStream: empty example set");
    std::map<std::pair<int, int>, std::vector<size_t>> groups;
    for (size_t i = 0; i < examples.size(); ++i)
        groups[{examples[i].src_lang, examples[i].tgt_lang}].push_back(i);
    std::vector<size_t> counts;
    for (auto& [pair, idx] : groups) {
        by_pair_.push_back(std::move(idx));
        counts.push_back(by_pair_.back().size());
    }
    pair_prob_ = temperature_probabilities(counts, temperature);
}

std::vector<TaggedExample> BatchStream::next() {
    std::vector<TaggedExample> batch;
    int tokens = 0;
    while (tokens < batch_tokens_ || batch.empty()) {
        Rng rng(mix_seed(seed_, draw_counter_++));
        double u = rng.uniform();
        size_t pair = 0;
        double acc = 0.0;
        for (size_t i = 0; i < pair_prob_.size(); ++i) {
            acc += pair_prob_[i];
            if (u < acc) {
                pair = i;
                break;
            }
            pair = i;
        }
        const auto& idx = by_pair_[pair];
        const TaggedExample& ex = (*examples_)[idx[rng.below(idx.size())]];
        tokens += static_cast<int>(ex.source.size() + ex.target.size());
        batch.push_back(ex);
    }
    return batch;
}

// ---- persistence ----

namespace {

std::string format_split(const std::vector<TaggedExample>& split) {
    std::ostringstream out;
    for (const auto& e : split) {
        for (size_t i = 0; i < e.source.size(); ++i) out << (i ? " " : "") << e.source[i];
        out << '\t' << e.tag << '\t';
        for (size_t i = 0; i < e.target.size(); ++i) out << (i ? " " : "") << e.target[i];
        out << '\n';
    }
    return out.str();
}

std::vector<int> parse_tokens(const std::string& field) {
    std::vector<int> out;
    std::istringstream in(field);
    int t;
    while (in >> t) out.push_back(t);
    return out;
}

std::vector<TaggedExample> parse_split(const std::string& text, const DatasetSplits& d) {
    std::vector<TaggedExample> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        size_t t1 = line.find('\t');
        size_t t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw FormatError("dataset line missing tab separators");
        TaggedExample e;
        e.source = parse_tokens(line.substr(0, t1));
        e.tag = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
        e.target = parse_tokens(line.substr(t2 + 1));
        auto tgt = d.language_of_tag(e.tag);
        if (!tgt) throw FormatError("dataset line has unknown tag " + std::to_string(e.tag));
        e.tgt_lang = *tgt;
        auto src = detect_language(e.source, d.languages);
        if (!src) throw FormatError("dataset line has undetectable source language");
        e.src_lang = *src;
        out.push_back(std::move(e));
    }
    return out;
}

json pair_counts(const std::vector<TaggedExample>& split) {
    std::map<std::string, size_t> counts;
    for (const auto& e : split)
        ++counts["l" + std::to_string(e.src_lang) + "-l" + std::to_string(e.tgt_lang)];
    json j = json::object();
    for (const auto& [k, v] : counts) j[k] = v;
    return j;
}

const char* kSplitFiles[] = {"train.tsv", "valid.tsv", "test_supervised.tsv",
                             "test_zero_shot.tsv", "test_identity.tsv"};

}  // namespace

void save_dataset(const DatasetSplits& d, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const std::vector<TaggedExample>* splits[] = {&d.train, &d.valid, &d.test_supervised,
                                                  &d.test_zero_shot, &d.test_identity};
    json manifest;
    manifest["config"] = {{"num_languages", d.config.num_languages},
                          {"sentences_per_pair", d.config.sentences_per_pair},
                          {"valid_sentences_per_pair", d.config.valid_sentences_per_pair},
                          {"test_sentences_per_pair", d.config.test_sentences_per_pair},
                          {"concept_vocab_size", d.config.concept_vocab_size},
                          {"min_len", d.config.min_len},
                          {"max_len", d.config.max_len},
                          {"seed", d.config.seed}};
    manifest["splits"] = json::object();
    for (size_t s = 0; s < 5; ++s) {
        io::atomic_write_file((fs::path(out_dir) / kSplitFiles[s]).string(),
                              format_split(*splits[s]));
        manifest["splits"][kSplitFiles[s]] = {{"file", kSplitFiles[s]},
                                              {"examples", splits[s]->size()},
                                              {"pairs", pair_counts(*splits[s])}};
    }
    io::atomic_write_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

DatasetSplits load_dataset(const std::string& dir) {
    json manifest;
    try {
        manifest = json::parse(io::read_file((fs::path(dir) / "manifest.json").string()));
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    DatasetSplits d;
    const auto& c = manifest.at("config");
    d.config.num_languages = c.at("num_languages").get<int>();
    d.config.sentences_per_pair = c.at("sentences_per_pair").get<int>();
    d.config.valid_sentences_per_pair = c.at("valid_sentences_per_pair").get<int>();
    d.config.test_sentences_per_pair = c.at("test_sentences_per_pair").get<int>();
    d.config.concept_vocab_size = c.at("concept_vocab_size").get<int>();
    d.config.min_len = c.at("min_len").get<int>();
    d.config.max_len = c.at("max_len").get<int>();
    d.config.seed = c.at("seed").get<uint64_t>();
    d.languages = make_languages(d.config.num_languages, d.config.concept_vocab_size);

    std::vector<TaggedExample>* splits[] = {&d.train, &d.valid, &d.test_supervised,
                                            &d.test_zero_shot, &d.test_identity};
    for (size_t s = 0; s < 5; ++s)
        *splits[s] = parse_split(io::read_file((fs::path(dir) / kSplitFiles[s]).string()), d);
    assign_example_ids(d);
    return d;
}

}  // namespace ztrans::corpus

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ztrans::corpus {

// Special token layout: pad, bos, eos, then one tag per language, then the
// disjoint per-language surface ranges.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;

enum class OrderRule { Identity, Reverse, SwapAdjacentPairs, RotateByOne };

struct SyntheticLanguage {
    int id = 0;
    int tag_token = 0;    // reserved vocabulary id
    int vocab_offset = 0; // base of its disjoint surface range
    OrderRule order_rule = OrderRule::Identity;
    std::string name;     // "en", "l1", ...
};

struct TaggedExample {
    std::vector<int> source;
    int tag = 0;
    std::vector<int> target;
    int src_lang = 0;
    int tgt_lang = 0;
    uint64_t example_id = 0;  // stable id, independent of batch position
};

struct CorpusConfig {
    int num_languages = 5;
    int sentences_per_pair = 2000;
    int valid_sentences_per_pair = 200;
    int test_sentences_per_pair = 200;
    int concept_vocab_size = 32;
    int min_len = 3;
    int max_len = 9;
    uint64_t seed = 1;
};

struct DatasetSplits {
    CorpusConfig config;
    std::vector<SyntheticLanguage> languages;
    std::vector<TaggedExample> train;
    std::vector<TaggedExample> valid;
    std::vector<TaggedExample> test_supervised;
    std::vector<TaggedExample> test_zero_shot;
    std::vector<TaggedExample> test_identity;

    int vocab_size() const;
    const SyntheticLanguage& language(int id) const;
    std::optional<int> language_of_tag(int tag) const;
};

std::vector<SyntheticLanguage> make_languages(int count, int concept_vocab_size);

// Seeded integer "concept" sequences standing in for shared meaning.
std::vector<std::vector<int>> generate_semantics(int count, int min_len, int max_len,
                                                 int concept_vocab_size, uint64_t seed);

// Applies the language's order rule, then maps concept c to vocab_offset + c.
std::vector<int> render(const std::vector<int>& semantics, const SyntheticLanguage& lang);

DatasetSplits build_dataset(const CorpusConfig& config);

// Majority vote over surface-token range membership; ties or empty -> nullopt.
std::optional<int> detect_language(const std::vector<int>& tokens,
                                   const std::vector<SyntheticLanguage>& languages);

// Temperature-flattened pair sampling over a split. Seeded single-consumer
// stream; batches are bounded by token budget (source + target).
class BatchStream {
  public:
    BatchStream(const std::vector<TaggedExample>& examples, double temperature,
                int batch_tokens, uint64_t seed);
    std::vector<TaggedExample> next();
    const std::vector<double>& pair_probabilities() const { return pair_prob_; }

  private:
    const std::vector<TaggedExample>* examples_;
    std::vector<std::vector<size_t>> by_pair_;  // indices per (src,tgt) pair
    std::vector<double> pair_prob_;
    int batch_tokens_;
    uint64_t seed_;
    uint64_t draw_counter_ = 0;
};

std::vector<double> temperature_probabilities(const std::vector<size_t>& counts, double t);

// ---- persistence ----
// One example per line: "src_tokens \t tag \t tgt_tokens", space-separated
// decimal token ids. Manifest JSON lists files and per-pair counts.
void save_dataset(const DatasetSplits& splits, const std::string& out_dir);
DatasetSplits load_dataset(const std::string& dir);

}  // namespace ztrans::corpus

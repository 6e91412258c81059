#include "ztrans/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ztrans/errors.hpp"
#include "ztrans/rng.hpp"

namespace ztrans::training {

using ad::Tensor;

void TrainConfig::validate() const {
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
        throw ConfigError("train config: label_smoothing out of range");
    if (warmup_steps < 1) throw ConfigError("train config: warmup_steps must be >= 1");
    if (max_steps < 1) throw ConfigError("train config: max_steps must be >= 1");
    if (batch_tokens < 1) throw ConfigError("train config: batch_tokens must be >= 1");
    if (temperature < 1.0) throw ConfigError("train config: temperature must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("train config: checkpoint_every must be >= 1");
}

ad::Tensor cross_entropy_loss(const ad::Tensor& logits, const std::vector<int>& targets,
                              double smoothing) {
    if (targets.empty()) throw InvalidInput("cross_entropy_loss: no targets");
    Tensor logp = ad::log_softmax_rows(logits);
    Tensor total = ad::nll_smoothed_sum(logp, targets, smoothing);
    return ad::scale(total, 1.0 / static_cast<double>(targets.size()));
}

ad::Tensor lclr_loss(const std::vector<LclrItem>& batch, int k, uint64_t seed,
                     bool mean_normalize) {
    if (k < 1) throw InvalidInput("lclr_loss: k must be >= 1");
    // B': instances whose target language is shared with >= 1 other instance
    std::map<int, size_t> lang_counts;
    for (const auto& it : batch) ++lang_counts[it.tgt_lang];
    std::vector<size_t> prime;  // indices into batch
    for (size_t i = 0; i < batch.size(); ++i)
        if (lang_counts[batch[i].tgt_lang] >= 2) prime.push_back(i);
    // canonical order by example id, so sampling ignores batch positions
    std::sort(prime.begin(), prime.end(), [&](size_t a, size_t b) {
        return batch[a].example_id < batch[b].example_id;
    });

    std::vector<Tensor> terms;
    for (size_t anchor : prime) {
        std::vector<size_t> positives, negatives;
        for (size_t other : prime) {
            if (other == anchor) continue;
            if (batch[other].tgt_lang == batch[anchor].tgt_lang)
                positives.push_back(other);
            else
                negatives.push_back(other);
        }
        if (negatives.empty()) continue;  // anchor skipped by contract
        size_t k_eff = std::min<size_t>(static_cast<size_t>(k), negatives.size());

        Rng rng(mix_seed(seed, batch[anchor].example_id));
        size_t pos = positives[rng.below(positives.size())];
        rng.shuffle(negatives);  // without replacement

        std::vector<Tensor> sims;
        Tensor s_pos = ad::cosine_sim(batch[anchor].pooled_head, batch[pos].pooled_head);
        sims.push_back(s_pos);
        for (size_t i = 0; i < k_eff; ++i)
            sims.push_back(
                ad::cosine_sim(batch[anchor].pooled_head, batch[negatives[i]].pooled_head));
        // -log(e^{s+} / (e^{s+} + sum e^{s-})) = logsumexp(all) - s+
        terms.push_back(ad::add(ad::logsumexp(ad::stack_scalars(sims)), ad::scale(s_pos, -1.0)));
    }
    if (terms.empty()) return Tensor::scalar(0.0);
    Tensor total = ad::sum(ad::stack_scalars(terms));
    if (mean_normalize) total = ad::scale(total, 1.0 / static_cast<double>(terms.size()));
    return total;
}

ad::Tensor total_loss(const ad::Tensor& ce, const ad::Tensor& ctr) { return ad::add(ce, ctr); }

double lr_schedule(int step, double base_lr, int warmup) {
    if (step < 1) throw InvalidInput("lr_schedule: step must be >= 1");
    double s = static_cast<double>(step), w = static_cast<double>(warmup);
    return base_lr * std::min(s / w, std::sqrt(w / s));
}

void adam_step(model::ModelParams& params, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, state.t);
    const double bc2 = 1.0 - std::pow(beta2, state.t);
    for (auto& [name, tensor] : params.tensors) {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != tensor.size()) m.assign(tensor.size(), 0.0);
        if (v.size() != tensor.size()) v.assign(tensor.size(), 0.0);
        const std::vector<double>& g = tensor.grad();
        auto& vals = tensor.values();
        for (size_t i = 0; i < vals.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            vals[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    }
}

namespace {

std::vector<int> labels_for(const corpus::TaggedExample& ex) {
    std::vector<int> labels = ex.target;
    labels.push_back(corpus::kEos);
    return labels;
}

model::ModelParams snapshot(const model::ModelParams& params) {
    model::ModelParams copy;
    for (const auto& [name, t] : params.tensors)
        copy.tensors.emplace(name, Tensor::leaf(t.shape(), t.values(), /*requires_grad=*/true));
    return copy;
}

std::string format_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

double evaluate_ce(const model::ModelParams& params, const model::TransformerConfig& config,
                   const std::vector<corpus::TaggedExample>& examples, double smoothing,
                   int cap) {
    size_t n = examples.size();
    if (cap > 0) n = std::min(n, static_cast<size_t>(cap));
    if (n == 0) throw DegenerateInput("evaluate_ce: empty example set");
    double total = 0.0;
    size_t tokens = 0;
    for (size_t i = 0; i < n; ++i) {
        const auto& ex = examples[i];
        auto enc = model::encode(params, config, ex.source, ex.tag, /*trace=*/false);
        auto dec = model::decode_teacher_forced(params, config, enc.output, ex.target,
                                                /*trace=*/false);
        std::vector<int> labels = labels_for(ex);
        Tensor logp = ad::log_softmax_rows(dec.logits);
        total += ad::nll_smoothed_sum(logp, labels, smoothing).item();
        tokens += labels.size();
    }
    return total / static_cast<double>(tokens);
}

TrainResult train(const model::TransformerConfig& model_config, const TrainConfig& train_config,
                  const corpus::DatasetSplits& data, const model::ModelParams* resume_params,
                  int resume_step,
                  const std::function<void(int, const model::ModelParams&)>& on_checkpoint) {
    model_config.validate();
    train_config.validate();
    if (data.train.empty() || data.valid.empty())
        throw InvalidInput("train: dataset has empty train or valid split");
    if (resume_step < 0 || resume_step >= train_config.max_steps)
        throw ConfigError("train: resume step outside the configured run");

    model::ModelParams params = resume_params ? snapshot(*resume_params)
                                              : init_params(model_config, train_config.seed);
    AdamState adam;
    corpus::BatchStream stream(data.train, train_config.temperature, train_config.batch_tokens,
                               mix_seed(train_config.seed, 0xba7c4));
    for (int s = 0; s < resume_step; ++s) stream.next();  // replay the consumed draws
    Rng dropout_rng(mix_seed(train_config.seed, 0xd20));

    std::ostringstream metrics;
    TrainResult result;
    result.best_valid_ce = evaluate_ce(params, model_config, data.valid,
                                       train_config.label_smoothing,
                                       train_config.valid_examples_cap);
    result.best_step = resume_step;
    result.best_params = snapshot(params);
    double last_valid_ce = result.best_valid_ce;

    for (int step = resume_step + 1; step <= train_config.max_steps; ++step) {
        std::vector<corpus::TaggedExample> batch = stream.next();
        params.clear_grads();

        std::vector<Tensor> nll_sums;
        std::vector<LclrItem> lclr_items;
        size_t total_tokens = 0;
        for (const auto& ex : batch) {
            auto enc = model::encode(params, model_config, ex.source, ex.tag, /*trace=*/false,
                                     model::Mode::Train, &dropout_rng);
            auto dec = model::decode_teacher_forced(params, model_config, enc.output, ex.target,
                                                    /*trace=*/false, model::Mode::Train,
                                                    &dropout_rng);
            std::vector<int> labels = labels_for(ex);
            Tensor logp = ad::log_softmax_rows(dec.logits);
            nll_sums.push_back(
                ad::nll_smoothed_sum(logp, labels, train_config.label_smoothing));
            total_tokens += labels.size();
            if (model_config.lclr_enabled) {
                Tensor pooled = ad::mean_over_rows(dec.lclr_layer_output);
                lclr_items.push_back({ad::slice_head(pooled, static_cast<size_t>(model_config.d_h)),
                                      ex.tgt_lang, ex.example_id});
            }
        }
        // Both terms are corpus-sums in the objective; the token-mean CE is
        // derived from the same graph for reporting only.
        Tensor ce_sum = ad::sum(ad::stack_scalars(nll_sums));
        Tensor ce = ad::scale(ce_sum, 1.0 / static_cast<double>(total_tokens));
        Tensor ctr = model_config.lclr_enabled
                         ? lclr_loss(lclr_items, model_config.k,
                                     mix_seed(train_config.seed, static_cast<uint64_t>(step)),
                                     train_config.lclr_mean_normalize)
                         : Tensor::scalar(0.0);
        Tensor loss = total_loss(ce_sum, ctr);
        if (!std::isfinite(loss.item()))
            throw Error("train: non-finite loss at step " + std::to_string(step) +
                        " (ce=" + format_double(ce.item()) + ", ctr=" + format_double(ctr.item()) +
                        ")");

        ad::backward(loss);
        double lr = lr_schedule(step, train_config.base_lr, train_config.warmup_steps);
        adam_step(params, adam, lr, train_config.adam_beta1, train_config.adam_beta2,
                  train_config.adam_eps);

        bool validate_now =
            step % train_config.checkpoint_every == 0 || step == train_config.max_steps;
        if (validate_now) {
            last_valid_ce = evaluate_ce(params, model_config, data.valid,
                                        train_config.label_smoothing,
                                        train_config.valid_examples_cap);
            if (last_valid_ce < result.best_valid_ce) {
                result.best_valid_ce = last_valid_ce;
                result.best_step = step;
                result.best_params = snapshot(params);
            }
            if (on_checkpoint) on_checkpoint(step, params);
        }
        if (step % train_config.log_every == 0 || step == train_config.max_steps) {
            metrics << "{\"step\":" << step << ",\"lr\":" << format_double(lr)
                    << ",\"loss_ce\":" << format_double(ce.item())
                    << ",\"loss_ctr\":" << format_double(ctr.item())
                    << ",\"valid_ce\":" << format_double(last_valid_ce) << "}\n";
        }
    }
    result.metrics_jsonl = metrics.str();
    return result;
}

}  // namespace ztrans::training

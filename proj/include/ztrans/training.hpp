#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ztrans/autodiff.hpp"
#include "ztrans/corpus.hpp"
#include "ztrans/model.hpp"

namespace ztrans::training {

struct TrainConfig {
    double base_lr = 5e-4;
    int warmup_steps = 4000;
    double label_smoothing = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-8;
    int max_steps = 2000;
    int batch_tokens = 512;
    double temperature = 5.0;
    uint64_t seed = 1;
    int checkpoint_every = 200;
    int log_every = 50;
    bool lclr_mean_normalize = false;  // Eq. 4 is a plain sum over anchors
    int valid_examples_cap = 400;

    void validate() const;
};

// Token-mean label-smoothed negative log-likelihood for one example.
ad::Tensor cross_entropy_loss(const ad::Tensor& logits, const std::vector<int>& targets,
                              double smoothing);

// One batch entry for the contrastive objective: the pooled head of the
// configured decoder layer plus the example's target language.
struct LclrItem {
    ad::Tensor pooled_head;  // 1-D, d_h
    int tgt_lang = 0;
    uint64_t example_id = 0;
};

// Contrastive loss over same-target-language positives and cross-language
// negatives, with per-anchor sampling seeded from example ids so batch
// order does not matter. Degenerate batches yield exactly 0.
ad::Tensor lclr_loss(const std::vector<LclrItem>& batch, int k, uint64_t seed,
                     bool mean_normalize = false);

ad::Tensor total_loss(const ad::Tensor& ce, const ad::Tensor& ctr);

// base_lr * min(step / warmup, sqrt(warmup / step))
double lr_schedule(int step, double base_lr, int warmup);

struct AdamState {
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
    int t = 0;
};

void adam_step(model::ModelParams& params, AdamState& state, double lr, double beta1,
               double beta2, double eps);

double evaluate_ce(const model::ModelParams& params, const model::TransformerConfig& config,
                   const std::vector<corpus::TaggedExample>& examples, double smoothing,
                   int cap);

struct TrainResult {
    model::ModelParams best_params;
    double best_valid_ce = 0.0;
    int best_step = 0;
    std::string metrics_jsonl;  // one JSON object per line
};

// Optional resume: start from `resume_params` at `resume_step` (optimizer
// moments restart; the schedule and batch stream continue from the step).
// `on_checkpoint` fires at every validation point with the live parameters.
TrainResult train(const model::TransformerConfig& model_config, const TrainConfig& train_config,
                  const corpus::DatasetSplits& data,
                  const model::ModelParams* resume_params = nullptr, int resume_step = 0,
                  const std::function<void(int, const model::ModelParams&)>& on_checkpoint = {});

}  // namespace ztrans::training

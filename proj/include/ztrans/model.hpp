#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ztrans/autodiff.hpp"
#include "ztrans/rng.hpp"

namespace ztrans::model {

enum class Activation { Gelu, Relu };

struct TransformerConfig {
    int enc_layers = 6;
    int dec_layers = 6;
    int d_model = 512;
    int heads = 4;
    int d_ffn = 1024;
    double dropout = 0.0;
    int vocab_size = 0;
    int num_languages = 0;
    int max_positions = 512;
    Activation activation = Activation::Gelu;

    bool lole_enabled = false;
    int lole_layer = 0;  // 1-based; 0 -> default enc_layers - 1 (second-top)
    int d_e = 128;

    bool lclr_enabled = false;
    int lclr_layer = 0;  // 1-based; 0 -> default by combination rule
    int d_h = 64;
    int k = 30;

    void validate() const;
    int effective_lole_layer() const;
    int effective_lclr_layer() const;
};

// Named learnable arrays. std::map keeps iteration order deterministic for
// the optimizer and the checkpoint writer.
struct ModelParams {
    std::map<std::string, ad::Tensor> tensors;

    ad::Tensor& at(const std::string& name);
    const ad::Tensor& at(const std::string& name) const;
    size_t parameter_count() const;
    void clear_grads();
};

ModelParams init_params(const TransformerConfig& config, uint64_t seed);

enum class Mode { Train, Eval };

struct EncodeResult {
    ad::Tensor output;                    // (n+1) x d, after final norm
    std::vector<ad::Tensor> layer_traces; // per-layer block outputs, when traced
    ad::Tensor pre_ffn_trace;             // at the LoLE layer, when traced
};

struct DecodeResult {
    ad::Tensor logits;                    // m x vocab
    std::vector<ad::Tensor> layer_traces; // per-layer block outputs, when traced
    ad::Tensor lclr_layer_output;         // configured layer output, when lclr_enabled
};

// Eq. 3 head biasing: the first e_l.size() features of every position
// receive +e_l; the rest pass through.
ad::Tensor lole_bias(const ad::Tensor& h_pre_ffn, const ad::Tensor& e_l);

EncodeResult encode(const ModelParams& params, const TransformerConfig& config,
                    const std::vector<int>& source, int tag, bool trace, Mode mode = Mode::Eval,
                    Rng* dropout_rng = nullptr);

// Teacher-forced decoder pass: input is [bos] ++ target, logits predict
// target ++ [eos].
DecodeResult decode_teacher_forced(const ModelParams& params, const TransformerConfig& config,
                                   const ad::Tensor& encoder_output,
                                   const std::vector<int>& target, bool trace,
                                   Mode mode = Mode::Eval, Rng* dropout_rng = nullptr);

std::vector<int> beam_search(const ModelParams& params, const TransformerConfig& config,
                             const std::vector<int>& source, int tag, int beam_size = 4,
                             int max_len = 64, double length_penalty = 1.0);

// Checkpoint format: magic "ZTRX", u16 version, u32 header length, JSON
// header (config + per-tensor name/shape/offset), little-endian f64 payload.
void save_checkpoint(const ModelParams& params, const TransformerConfig& config,
                     const std::string& path);
std::pair<ModelParams, TransformerConfig> load_checkpoint(const std::string& path);

}  // namespace ztrans::model

#include "ztrans/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "ztrans/corpus.hpp"
#include "ztrans/errors.hpp"
#include "ztrans/io.hpp"
#include "ztrans/serialize.hpp"

namespace ztrans::model {

using ad::Tensor;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

void TransformerConfig::validate() const {
    if (enc_layers < 1 || dec_layers < 1) throw ConfigError("config: need at least one layer");
    if (d_model < 1 || heads < 1 || d_ffn < 1) throw ConfigError("config: bad widths");
    if (d_model % heads != 0) throw ConfigError("config: d_model must be divisible by heads");
    if (vocab_size < 4) throw ConfigError("config: vocab_size too small");
    if (num_languages < 1) throw ConfigError("config: num_languages missing");
    if (lole_enabled) {
        if (d_e < 1 || d_e > d_model) throw ConfigError("config: d_e must be in [1, d_model]");
        if (lole_layer != 0 && (lole_layer < 1 || lole_layer > enc_layers))
            throw ConfigError("config: lole_layer out of range");
    }
    if (lclr_enabled) {
        if (d_h < 1 || d_h > d_model) throw ConfigError("config: d_h must be in [1, d_model]");
        if (lclr_layer != 0 && (lclr_layer < 1 || lclr_layer > dec_layers))
            throw ConfigError("config: lclr_layer out of range");
        if (k < 1) throw ConfigError("config: k must be >= 1");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("config: dropout out of range");
}

int TransformerConfig::effective_lole_layer() const {
    if (lole_layer > 0) return lole_layer;
    return std::max(1, enc_layers - 1);  // second-top
}

int TransformerConfig::effective_lclr_layer() const {
    if (lclr_layer > 0) return lclr_layer;
    // bottom layer alone, second-bottom when combined with the encoder bias
    return lole_enabled ? std::min(2, dec_layers) : 1;
}

ad::Tensor& ModelParams::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

const ad::Tensor& ModelParams::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error("unknown parameter: " + name);
    return it->second;
}

size_t ModelParams::parameter_count() const {
    size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
}

void ModelParams::clear_grads() {
    for (auto& [name, t] : tensors) t.clear_grad();
}

namespace {

// shapes in deterministic creation order; shared by init and checkpoint checks
std::vector<std::pair<std::string, std::vector<size_t>>> param_shapes(
    const TransformerConfig& c) {
    const auto d = static_cast<size_t>(c.d_model);
    const auto dffn = static_cast<size_t>(c.d_ffn);
    std::vector<std::pair<std::string, std::vector<size_t>>> shapes;
    shapes.push_back({"tok_emb", {static_cast<size_t>(c.vocab_size), d}});
    auto block_common = [&](const std::string& p) {
        shapes.push_back({p + ".attn.wq", {d, d}});
        shapes.push_back({p + ".attn.wk", {d, d}});
        shapes.push_back({p + ".attn.wv", {d, d}});
        shapes.push_back({p + ".attn.wo", {d, d}});
        shapes.push_back({p + ".ln1.g", {d}});
        shapes.push_back({p + ".ln1.b", {d}});
    };
    for (int i = 0; i < c.enc_layers; ++i) {
        std::string p = "enc" + std::to_string(i);
        block_common(p);
        shapes.push_back({p + ".ffn.w1", {d, dffn}});
        shapes.push_back({p + ".ffn.b1", {dffn}});
        shapes.push_back({p + ".ffn.w2", {dffn, d}});
        shapes.push_back({p + ".ffn.b2", {d}});
        shapes.push_back({p + ".ln2.g", {d}});
        shapes.push_back({p + ".ln2.b", {d}});
    }
    for (int i = 0; i < c.dec_layers; ++i) {
        std::string p = "dec" + std::to_string(i);
        block_common(p);
        shapes.push_back({p + ".xattn.wq", {d, d}});
        shapes.push_back({p + ".xattn.wk", {d, d}});
        shapes.push_back({p + ".xattn.wv", {d, d}});
        shapes.push_back({p + ".xattn.wo", {d, d}});
        shapes.push_back({p + ".lnx.g", {d}});
        shapes.push_back({p + ".lnx.b", {d}});
        shapes.push_back({p + ".ffn.w1", {d, dffn}});
        shapes.push_back({p + ".ffn.b1", {dffn}});
        shapes.push_back({p + ".ffn.w2", {dffn, d}});
        shapes.push_back({p + ".ffn.b2", {d}});
        shapes.push_back({p + ".ln2.g", {d}});
        shapes.push_back({p + ".ln2.b", {d}});
    }
    shapes.push_back({"enc_final_ln.g", {d}});
    shapes.push_back({"enc_final_ln.b", {d}});
    shapes.push_back({"dec_final_ln.g", {d}});
    shapes.push_back({"dec_final_ln.b", {d}});
    if (c.lole_enabled)
        shapes.push_back(
            {"lang_emb", {static_cast<size_t>(c.num_languages), static_cast<size_t>(c.d_e)}});
    return shapes;
}

bool is_norm_gain(const std::string& name) {
    return name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0 &&
           name.find("ln") != std::string::npos;
}

bool is_bias_like(const std::string& name) {
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0) return true;
    return name.find(".b1") != std::string::npos || name.find(".b2") != std::string::npos;
}

}  // namespace

ModelParams init_params(const TransformerConfig& config, uint64_t seed) {
    config.validate();
    ModelParams p;
    Rng rng(mix_seed(seed, 0x5eed));
    for (const auto& [name, shape] : param_shapes(config)) {
        size_t total = 1;
        for (size_t s : shape) total *= s;
        std::vector<double> vals(total, 0.0);
        if (name == "lang_emb") {
            // zeros: training starts exactly at the unbiased baseline
        } else if (is_norm_gain(name)) {
            std::fill(vals.begin(), vals.end(), 1.0);
        } else if (is_bias_like(name)) {
            // zeros
        } else if (name == "tok_emb") {
            double s = 1.0 / std::sqrt(static_cast<double>(config.d_model));
            for (auto& v : vals) v = rng.normal() * s;
        } else {
            // xavier-style for 2-D weights
            double fan_in = static_cast<double>(shape[0]);
            double fan_out = static_cast<double>(shape.size() > 1 ? shape[1] : shape[0]);
            double s = std::sqrt(2.0 / (fan_in + fan_out));
            for (auto& v : vals) v = rng.normal() * s;
        }
        p.tensors.emplace(name, Tensor::leaf(shape, std::move(vals), /*requires_grad=*/true));
    }
    return p;
}

namespace {

Tensor sinusoidal_positions(size_t len, size_t d) {
    std::vector<double> vals(len * d);
    for (size_t pos = 0; pos < len; ++pos)
        for (size_t i = 0; i < d; ++i) {
            double angle = static_cast<double>(pos) /
                           std::pow(10000.0, 2.0 * std::floor(i / 2.0) / static_cast<double>(d));
            vals[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return Tensor::leaf({len, d}, std::move(vals));
}

Tensor maybe_dropout(const Tensor& t, double p, Mode mode, Rng* rng) {
    if (mode != Mode::Train || p <= 0.0 || rng == nullptr) return t;
    std::vector<double> mask(t.size());
    double keep = 1.0 - p;
    for (auto& m : mask) m = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
    return ad::mul(t, Tensor::leaf(t.shape(), std::move(mask)));
}

struct AttnWeights {
    const Tensor &wq, &wk, &wv, &wo;
};

Tensor attention(const Tensor& q_in, const Tensor& kv_in, const AttnWeights& w, int heads,
                 const Tensor* mask) {
    const size_t d = q_in.cols();
    const size_t dk = d / static_cast<size_t>(heads);
    Tensor q = ad::matmul(q_in, w.wq);
    Tensor kmat = ad::matmul(kv_in, w.wk);
    Tensor v = ad::matmul(kv_in, w.wv);
    std::vector<Tensor> head_outs;
    for (int h = 0; h < heads; ++h) {
        size_t off = static_cast<size_t>(h) * dk;
        Tensor qh = ad::slice_cols(q, off, dk);
        Tensor kh = ad::slice_cols(kmat, off, dk);
        Tensor vh = ad::slice_cols(v, off, dk);
        Tensor scores = ad::scale(ad::matmul(qh, ad::transpose(kh)),
                                  1.0 / std::sqrt(static_cast<double>(dk)));
        if (mask) scores = ad::add(scores, *mask);
        head_outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    return ad::matmul(ad::concat_cols(head_outs), w.wo);
}

Tensor causal_mask(size_t n) {
    std::vector<double> vals(n * n, 0.0);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i + 1; j < n; ++j) vals[i * n + j] = -1e30;
    return Tensor::leaf({n, n}, std::move(vals));
}

Tensor ffn(const Tensor& x, const ModelParams& p, const std::string& prefix,
           Activation activation) {
    Tensor h = ad::add(ad::matmul(x, p.at(prefix + ".ffn.w1")), p.at(prefix + ".ffn.b1"));
    h = activation == Activation::Gelu ? ad::gelu(h) : ad::relu(h);
    return ad::add(ad::matmul(h, p.at(prefix + ".ffn.w2")), p.at(prefix + ".ffn.b2"));
}

Tensor embed(const ModelParams& p, const TransformerConfig& c, const std::vector<int>& ids) {
    if (static_cast<int>(ids.size()) > c.max_positions)
        throw Error("sequence length exceeds positional table");
    Tensor e = ad::scale(ad::embedding_lookup(p.at("tok_emb"), ids),
                         std::sqrt(static_cast<double>(c.d_model)));
    return ad::add(e, sinusoidal_positions(ids.size(), static_cast<size_t>(c.d_model)));
}

}  // namespace

ad::Tensor lole_bias(const ad::Tensor& h_pre_ffn, const ad::Tensor& e_l) {
    const size_t d = h_pre_ffn.cols();
    const size_t de = e_l.size();
    if (de > d) throw ShapeError("lole_bias: embedding wider than hidden state");
    Tensor padded = e_l;
    if (de < d) {
        Tensor row = ad::reshape(e_l, {1, de});
        Tensor zeros = Tensor::zeros({1, d - de});
        padded = ad::reshape(ad::concat_cols({row, zeros}), {d});
    }
    return ad::add(h_pre_ffn, padded);  // broadcast over positions
}

EncodeResult encode(const ModelParams& params, const TransformerConfig& config,
                    const std::vector<int>& source, int tag, bool trace, Mode mode,
                    Rng* dropout_rng) {
    if (source.empty()) throw InvalidInput("encode: empty source");
    if (tag < 3 || tag >= 3 + config.num_languages)
        throw InvalidInput("encode: unknown tag " + std::to_string(tag));
    std::vector<int> ids;
    ids.reserve(source.size() + 1);
    ids.push_back(tag);
    ids.insert(ids.end(), source.begin(), source.end());

    EncodeResult result;
    Tensor x = embed(params, config, ids);
    const int lole_at = config.effective_lole_layer();
    for (int layer = 1; layer <= config.enc_layers; ++layer) {
        std::string p = "enc" + std::to_string(layer - 1);
        AttnWeights aw{params.at(p + ".attn.wq"), params.at(p + ".attn.wk"),
                       params.at(p + ".attn.wv"), params.at(p + ".attn.wo")};
        Tensor normed =
            ad::layer_norm(x, params.at(p + ".ln1.g"), params.at(p + ".ln1.b"));
        Tensor attn_out =
            maybe_dropout(attention(normed, normed, aw, config.heads, nullptr), config.dropout,
                          mode, dropout_rng);
        Tensor mid = ad::add(x, attn_out);

        if (layer == lole_at) {
            if (config.lole_enabled) {
                int lang = tag - 3;
                Tensor e_row = ad::embedding_lookup(params.at("lang_emb"), {lang});
                mid = lole_bias(mid, ad::reshape(e_row, {static_cast<size_t>(config.d_e)}));
            }
            if (trace) result.pre_ffn_trace = mid;
        }

        Tensor normed2 =
            ad::layer_norm(mid, params.at(p + ".ln2.g"), params.at(p + ".ln2.b"));
        Tensor ffn_out = maybe_dropout(ffn(normed2, params, p, config.activation),
                                       config.dropout, mode, dropout_rng);
        x = ad::add(mid, ffn_out);
        if (trace) result.layer_traces.push_back(x);
    }
    result.output =
        ad::layer_norm(x, params.at("enc_final_ln.g"), params.at("enc_final_ln.b"));
    return result;
}

DecodeResult decode_teacher_forced(const ModelParams& params, const TransformerConfig& config,
                                   const ad::Tensor& encoder_output,
                                   const std::vector<int>& target, bool trace, Mode mode,
                                   Rng* dropout_rng) {
    std::vector<int> ids;
    ids.reserve(target.size() + 1);
    ids.push_back(corpus::kBos);
    ids.insert(ids.end(), target.begin(), target.end());

    DecodeResult result;
    Tensor x = embed(params, config, ids);
    Tensor mask = causal_mask(ids.size());
    const int lclr_at = config.effective_lclr_layer();
    for (int layer = 1; layer <= config.dec_layers; ++layer) {
        std::string p = "dec" + std::to_string(layer - 1);
        AttnWeights self_w{params.at(p + ".attn.wq"), params.at(p + ".attn.wk"),
                           params.at(p + ".attn.wv"), params.at(p + ".attn.wo")};
        Tensor normed = ad::layer_norm(x, params.at(p + ".ln1.g"), params.at(p + ".ln1.b"));
        Tensor self_out = maybe_dropout(attention(normed, normed, self_w, config.heads, &mask),
                                        config.dropout, mode, dropout_rng);
        Tensor y = ad::add(x, self_out);

        AttnWeights cross_w{params.at(p + ".xattn.wq"), params.at(p + ".xattn.wk"),
                            params.at(p + ".xattn.wv"), params.at(p + ".xattn.wo")};
        Tensor normed_x =
            ad::layer_norm(y, params.at(p + ".lnx.g"), params.at(p + ".lnx.b"));
        Tensor cross_out =
            maybe_dropout(attention(normed_x, encoder_output, cross_w, config.heads, nullptr),
                          config.dropout, mode, dropout_rng);
        y = ad::add(y, cross_out);

        Tensor normed2 = ad::layer_norm(y, params.at(p + ".ln2.g"), params.at(p + ".ln2.b"));
        Tensor ffn_out = maybe_dropout(ffn(normed2, params, p, config.activation),
                                       config.dropout, mode, dropout_rng);
        x = ad::add(y, ffn_out);
        if (trace) result.layer_traces.push_back(x);
        if (config.lclr_enabled && layer == lclr_at) result.lclr_layer_output = x;
    }
    Tensor out = ad::layer_norm(x, params.at("dec_final_ln.g"), params.at("dec_final_ln.b"));
    // output projection tied to the token embedding
    result.logits = ad::matmul(out, ad::transpose(params.at("tok_emb")));
    return result;
}

std::vector<int> beam_search(const ModelParams& params, const TransformerConfig& config,
                             const std::vector<int>& source, int tag, int beam_size, int max_len,
                             double length_penalty) {
    if (beam_size < 1) throw InvalidInput("beam_search: beam_size must be >= 1");
    EncodeResult enc = encode(params, config, source, tag, /*trace=*/false);

    struct Hyp {
        std::vector<int> tokens;
        double logprob = 0.0;
        bool finished = false;
        double score(double penalty) const {
            double len = static_cast<double>(tokens.size()) + 1.0;
            return logprob / std::pow(len, penalty);
        }
    };
    std::vector<Hyp> beam{Hyp{}};

    for (int step = 0; step < max_len; ++step) {
        bool any_live = false;
        std::vector<Hyp> candidates;
        for (const auto& h : beam) {
            if (h.finished) {
                candidates.push_back(h);
                continue;
            }
            any_live = true;
            DecodeResult dec =
                decode_teacher_forced(params, config, enc.output, h.tokens, /*trace=*/false);
            Tensor logp = ad::log_softmax_rows(dec.logits);
            const size_t last = logp.rows() - 1;
            const size_t vocab = logp.cols();
            std::vector<std::pair<double, int>> top;
            for (size_t v = 0; v < vocab; ++v) {
                if (static_cast<int>(v) == corpus::kPad || static_cast<int>(v) == corpus::kBos)
                    continue;
                top.emplace_back(logp.values()[last * vocab + v], static_cast<int>(v));
            }
            std::partial_sort(top.begin(),
                              top.begin() + std::min<size_t>(top.size(),
                                                             static_cast<size_t>(beam_size)),
                              top.end(), [](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first > b.first;
                                  return a.second < b.second;
                              });
            for (int c = 0; c < beam_size && c < static_cast<int>(top.size()); ++c) {
                Hyp nh = h;
                nh.logprob += top[static_cast<size_t>(c)].first;
                int tok = top[static_cast<size_t>(c)].second;
                if (tok == corpus::kEos) {
                    nh.finished = true;
                } else {
                    nh.tokens.push_back(tok);
                }
                candidates.push_back(std::move(nh));
            }
        }
        if (!any_live) break;
        std::stable_sort(candidates.begin(), candidates.end(),
                         [length_penalty](const Hyp& a, const Hyp& b) {
                             return a.score(length_penalty) > b.score(length_penalty);
                         });
        candidates.resize(std::min<size_t>(candidates.size(), static_cast<size_t>(beam_size)));
        beam = std::move(candidates);
    }
    for (auto& h : beam) h.finished = true;  // max_len closes hypotheses
    auto best = std::max_element(beam.begin(), beam.end(),
                                 [length_penalty](const Hyp& a, const Hyp& b) {
                                     return a.score(length_penalty) < b.score(length_penalty);
                                 });
    return best->tokens;
}

// ---- checkpoint I/O ----

namespace {

constexpr char kMagic[4] = {'Z', 'T', 'R', 'X'};
constexpr uint16_t kVersion = 1;

template <typename T>
void append_raw(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

}  // namespace

void save_checkpoint(const ModelParams& params, const TransformerConfig& config,
                     const std::string& path) {
    auto expected = param_shapes(config);
    if (expected.size() != params.tensors.size())
        throw ConfigError("checkpoint: parameter set does not match config");
    for (const auto& [name, shape] : expected) {
        auto it = params.tensors.find(name);
        if (it == params.tensors.end())
            throw ConfigError("checkpoint: missing tensor " + name + " for config");
        if (it->second.shape() != shape)
            throw ConfigError("checkpoint: tensor " + name + " shape mismatch vs config");
    }
    json header;
    header["config"] = to_json(config);
    json tensors = json::array();
    size_t offset = 0;
    for (const auto& [name, t] : params.tensors) {
        tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size() * sizeof(double);
    }
    header["tensors"] = tensors;
    std::string header_str = header.dump();

    std::string blob;
    blob.append(kMagic, 4);
    append_raw(blob, kVersion);
    append_raw(blob, static_cast<uint32_t>(header_str.size()));
    blob += header_str;
    for (const auto& [name, t] : params.tensors)
        blob.append(reinterpret_cast<const char*>(t.values().data()),
                    t.size() * sizeof(double));
    io::atomic_write_file(path, blob);
}

std::pair<ModelParams, TransformerConfig> load_checkpoint(const std::string& path) {
    std::string blob = io::read_file(path);
    if (blob.size() < 10 || std::memcmp(blob.data(), kMagic, 4) != 0)
        throw FormatError("checkpoint: bad magic bytes in " + path);
    uint16_t version;
    std::memcpy(&version, blob.data() + 4, 2);
    if (version != kVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    uint32_t header_len;
    std::memcpy(&header_len, blob.data() + 6, 4);
    if (blob.size() < 10 + static_cast<size_t>(header_len))
        throw FormatError("checkpoint: truncated header in " + path);

    json header;
    try {
        header = json::parse(blob.substr(10, header_len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("checkpoint: bad header JSON: ") + e.what());
    }
    TransformerConfig config = transformer_config_from_json(header.at("config"));

    std::map<std::string, std::vector<size_t>> expected;
    for (const auto& [name, shape] : param_shapes(config)) expected[name] = shape;

    const size_t payload_start = 10 + header_len;
    ModelParams params;
    for (const auto& entry : header.at("tensors")) {
        std::string name = entry.at("name").get<std::string>();
        std::vector<size_t> shape = entry.at("shape").get<std::vector<size_t>>();
        auto it = expected.find(name);
        if (it == expected.end())
            throw ConfigError("checkpoint: tensor " + name + " not expected by config");
        if (it->second != shape)
            throw ConfigError("checkpoint: tensor " + name + " shape mismatch vs config");
        size_t total = 1;
        for (size_t s : shape) total *= s;
        size_t offset = payload_start + entry.at("offset").get<size_t>();
        if (offset + total * sizeof(double) > blob.size())
            throw FormatError("checkpoint: truncated payload in " + path);
        std::vector<double> vals(total);
        std::memcpy(vals.data(), blob.data() + offset, total * sizeof(double));
        params.tensors.emplace(name,
                               Tensor::leaf(shape, std::move(vals), /*requires_grad=*/true));
        expected.erase(it);
    }
    if (!expected.empty())
        throw ConfigError("checkpoint: missing tensor " + expected.begin()->first);
    return {std::move(params), config};
}

}  // namespace ztrans::model

namespace ztrans {

using model::Activation;
using model::TransformerConfig;

nlohmann::json to_json(const TransformerConfig& c) {
    return {{"enc_layers", c.enc_layers},
            {"dec_layers", c.dec_layers},
            {"d_model", c.d_model},
            {"heads", c.heads},
            {"d_ffn", c.d_ffn},
            {"dropout", c.dropout},
            {"vocab_size", c.vocab_size},
            {"num_languages", c.num_languages},
            {"max_positions", c.max_positions},
            {"activation", c.activation == Activation::Gelu ? "gelu" : "relu"},
            {"lole_enabled", c.lole_enabled},
            {"lole_layer", c.lole_layer},
            {"d_e", c.d_e},
            {"lclr_enabled", c.lclr_enabled},
            {"lclr_layer", c.lclr_layer},
            {"d_h", c.d_h},
            {"k", c.k}};
}

TransformerConfig transformer_config_from_json(const nlohmann::json& j) {
    TransformerConfig c;
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.heads = j.at("heads").get<int>();
    c.d_ffn = j.at("d_ffn").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.num_languages = j.at("num_languages").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    std::string act = j.at("activation").get<std::string>();
    if (act == "gelu")
        c.activation = Activation::Gelu;
    else if (act == "relu")
        c.activation = Activation::Relu;
    else
        throw ConfigError("config: unknown activation " + act);
    c.lole_enabled = j.at("lole_enabled").get<bool>();
    c.lole_layer = j.at("lole_layer").get<int>();
    c.d_e = j.at("d_e").get<int>();
    c.lclr_enabled = j.at("lclr_enabled").get<bool>();
    c.lclr_layer = j.at("lclr_layer").get<int>();
    c.d_h = j.at("d_h").get<int>();
    c.k = j.at("k").get<int>();
    c.validate();
    return c;
}

}  // namespace ztrans

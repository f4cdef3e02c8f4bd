// Miniature transformer serving as the frozen base language model.
// Pre-layer-norm residual blocks, learned absolute positions, tied
// input/output embedding. Attention keys/values can be augmented with
// per-layer prefix matrices that live in the model width (they pass
// through the key/value projections and are visible to every query).
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "kgprefix/param_store.hpp"

namespace kgprefix {

enum class Architecture { encoder_decoder, decoder_only };
enum class AttentionKind { encoder_self = 0, decoder_cross = 1, decoder_self = 2 };

constexpr int kAttentionKindCount = 3;
const char* attention_kind_name(AttentionKind k);
// encoder_decoder uses all three kinds; decoder_only only masked self-attention
std::vector<AttentionKind> attention_kinds_for(Architecture arch);

struct ModelConfig {
    long embed_dim = 64;
    long n_layers = 2;
    long n_heads = 2;
    long ffn_dim = 128;
    long vocab_size = 512;
    long max_seq_len = 96;
    Architecture architecture = Architecture::encoder_decoder;
    DType dtype = DType::f32;

    long head_dim() const { return embed_dim / n_heads; }
    void validate() const;
};

// Per-layer key/value prefix pair (rows: total prefix length, cols: embed_dim).
struct LayerKV {
    Var key;
    Var value;
};

// Prefix injections for one forward pass, per attention kind per layer.
struct InjectionVars {
    std::array<std::vector<LayerKV>, kAttentionKindCount> per_kind;

    bool has(AttentionKind k) const {
        return !per_kind[static_cast<size_t>(k)].empty();
    }
    const std::vector<LayerKV>& layers(AttentionKind k) const {
        return per_kind[static_cast<size_t>(k)];
    }
    void set(AttentionKind k, std::vector<LayerKV> layers) {
        per_kind[static_cast<size_t>(k)] = std::move(layers);
    }
    long prefix_len(AttentionKind k, Tape& tape) const;
};

// Registers all base weights under "lm." names.
void init_base_weights(ParamStore& store, const ModelConfig& cfg, Rng& rng);

// Scaled dot-product attention for one head:
//   softmax(q Wq (k_aug Wk)^T / sqrt(head_dim) + mask) (v_aug Wv)
// where k_aug/v_aug are [prefix; k] and [prefix; v] when a prefix pair is
// given. `mask` covers only the real key positions; prefix columns are
// always visible. head_dim for the scale is taken from Wq's column count.
Var attention_head(Var q, Var k, Var v, Var wq, Var wk, Var wv,
                   const std::optional<LayerKV>& prefix, const Tensor* mask);

// Teacher-forced forward pass: returns next-token logits, one row per
// target position. encoder_decoder runs source through the encoder and
// decodes target with cross attention; decoder_only scores the single
// sequence [source; SEP; target] and returns the target rows.
Var forward_teacher_forced(BoundParams& params, const ModelConfig& cfg,
                           const InjectionVars& injections,
                           const std::vector<long>& source_tokens,
                           const std::vector<long>& target_tokens, long sep_token_id);

// Closed-form base-model parameter count (same arithmetic as enumerating
// the store); lets large presets be sized without allocating them.
long lm_param_count(const ModelConfig& cfg);

}  // namespace kgprefix

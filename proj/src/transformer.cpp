#include "kgprefix/transformer.hpp"

#include <cmath>

namespace kgprefix {

const char* attention_kind_name(AttentionKind k) {
    switch (k) {
        case AttentionKind::encoder_self: return "enc_self";
        case AttentionKind::decoder_cross: return "dec_cross";
        case AttentionKind::decoder_self: return "dec_self";
    }
    return "?";
}

std::vector<AttentionKind> attention_kinds_for(Architecture arch) {
    if (arch == Architecture::decoder_only) return {AttentionKind::decoder_self};
    return {AttentionKind::encoder_self, AttentionKind::decoder_cross,
            AttentionKind::decoder_self};
}

void ModelConfig::validate() const {
    if (embed_dim < 1 || n_layers < 1 || n_heads < 1 || ffn_dim < 1 || vocab_size < 1 ||
        max_seq_len < 1)
        throw ConfigError("model dimensions must all be >= 1");
    if (embed_dim % n_heads != 0)
        throw ConfigError("embed_dim must be divisible by n_heads");
}

long InjectionVars::prefix_len(AttentionKind k, Tape& tape) const {
    const auto& layers = per_kind[static_cast<size_t>(k)];
    if (layers.empty()) return 0;
    return tape.value(layers[0].key).dim(0);
}

// ----------------------------- weights -----------------------------

namespace {

std::string layer_name(const char* stack, long l) {
    return std::string("lm.") + stack + "." + std::to_string(l) + ".";
}

void init_layer_norm(ParamStore& store, const std::string& base, long d, DType dt) {
    store.insert(base + ".g", Tensor::full({d}, 1.0, dt));
    store.insert(base + ".b", Tensor({d}, dt));
}

void init_attention(ParamStore& store, const std::string& base, const ModelConfig& cfg, Rng& rng) {
    const long d = cfg.embed_dim, dh = cfg.head_dim();
    for (long h = 0; h < cfg.n_heads; ++h) {
        const std::string hb = base + ".h" + std::to_string(h);
        store.insert(hb + ".wq", Tensor::randn({d, dh}, rng, 0.02, cfg.dtype));
        store.insert(hb + ".wk", Tensor::randn({d, dh}, rng, 0.02, cfg.dtype));
        store.insert(hb + ".wv", Tensor::randn({d, dh}, rng, 0.02, cfg.dtype));
    }
    store.insert(base + ".wo", Tensor::randn({d, d}, rng, 0.02, cfg.dtype));
}

void init_ffn(ParamStore& store, const std::string& base, const ModelConfig& cfg, Rng& rng) {
    store.insert(base + ".w1", Tensor::randn({cfg.embed_dim, cfg.ffn_dim}, rng, 0.02, cfg.dtype));
    store.insert(base + ".b1", Tensor({cfg.ffn_dim}, cfg.dtype));
    store.insert(base + ".w2", Tensor::randn({cfg.ffn_dim, cfg.embed_dim}, rng, 0.02, cfg.dtype));
    store.insert(base + ".b2", Tensor({cfg.embed_dim}, cfg.dtype));
}

std::vector<long> iota(long n) {
    std::vector<long> v(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) v[static_cast<size_t>(i)] = i;
    return v;
}

// rows×cols additive mask; zero columns for `prefix_cols`, then `real`
// (nullptr means fully visible)
Tensor extend_mask(const Tensor* real, long rows, long prefix_cols, long real_cols, DType dt) {
    Tensor full({rows, prefix_cols + real_cols}, dt);
    if (real != nullptr) {
        if (real->rank() != 2 || real->dim(0) != rows || real->dim(1) != real_cols)
            throw DimensionError("attention mask shape mismatch");
        for (long r = 0; r < rows; ++r)
            for (long c = 0; c < real_cols; ++c)
                full.at(r, prefix_cols + c) = real->at(r, c);
    }
    return full;
}

Tensor causal_mask(long n, DType dt) {
    Tensor m({n, n}, dt);
    for (long r = 0; r < n; ++r)
        for (long c = r + 1; c < n; ++c) m.at(r, c) = -1e9;
    return m;
}

struct LayerRef {
    BoundParams& params;
    const ModelConfig& cfg;
    std::string base;

    Var operator()(const std::string& suffix) { return params(base + suffix); }
};

Var multi_head_attention(LayerRef layer, const std::string& attn, Var q_in, Var kv_in,
                         const std::optional<LayerKV>& prefix, const Tensor* mask) {
    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(layer.cfg.n_heads));
    for (long h = 0; h < layer.cfg.n_heads; ++h) {
        const std::string hb = attn + ".h" + std::to_string(h);
        heads.push_back(attention_head(q_in, kv_in, kv_in, layer(hb + ".wq"), layer(hb + ".wk"),
                                       layer(hb + ".wv"), prefix, mask));
    }
    return matmul(concat(heads, 1), layer(attn + ".wo"));
}

Var feed_forward(LayerRef layer, Var x) {
    Var h = add(matmul(x, layer("ffn.w1")), layer("ffn.b1"));
    return add(matmul(relu(h), layer("ffn.w2")), layer("ffn.b2"));
}

std::optional<LayerKV> injection_at(const InjectionVars& inj, AttentionKind kind, long l) {
    if (!inj.has(kind)) return std::nullopt;
    const auto& layers = inj.layers(kind);
    if (l >= static_cast<long>(layers.size()))
        throw ConfigError("prefix bank has fewer layers than the model");
    return layers[static_cast<size_t>(l)];
}

Var embed_sequence(BoundParams& params, const std::vector<long>& tokens,
                   const std::string& pos_table) {
    Var tok = gather_rows(params("lm.embed"), tokens);
    Var pos = gather_rows(params(pos_table), iota(static_cast<long>(tokens.size())));
    return add(tok, pos);
}

Var run_encoder(BoundParams& params, const ModelConfig& cfg, const InjectionVars& inj,
                const std::vector<long>& src) {
    Var x = embed_sequence(params, src, "lm.enc.pos");
    for (long l = 0; l < cfg.n_layers; ++l) {
        LayerRef layer{params, cfg, layer_name("enc", l)};
        Var h = layer_norm(x, layer("ln1.g"), layer("ln1.b"));
        x = add(x, multi_head_attention(layer, "attn", h, h,
                                        injection_at(inj, AttentionKind::encoder_self, l),
                                        nullptr));
        Var h2 = layer_norm(x, layer("ln2.g"), layer("ln2.b"));
        x = add(x, feed_forward(layer, h2));
    }
    return layer_norm(x, params("lm.enc.ln_f.g"), params("lm.enc.ln_f.b"));
}

Var run_decoder(BoundParams& params, const ModelConfig& cfg, const InjectionVars& inj,
                const std::optional<Var>& memory, const std::vector<long>& dec_input,
                const std::string& pos_table) {
    const bool cross = memory.has_value();
    const long n = static_cast<long>(dec_input.size());
    const Tensor cmask = causal_mask(n, cfg.dtype);
    Var x = embed_sequence(params, dec_input, pos_table);
    for (long l = 0; l < cfg.n_layers; ++l) {
        LayerRef layer{params, cfg, layer_name("dec", l)};
        Var h = layer_norm(x, layer("ln1.g"), layer("ln1.b"));
        x = add(x, multi_head_attention(layer, "self", h, h,
                                        injection_at(inj, AttentionKind::decoder_self, l),
                                        &cmask));
        if (cross) {
            Var h2 = layer_norm(x, layer("ln2.g"), layer("ln2.b"));
            x = add(x, multi_head_attention(layer, "cross", h2, *memory,
                                            injection_at(inj, AttentionKind::decoder_cross, l),
                                            nullptr));
        }
        const std::string ffn_ln = cross ? "ln3" : "ln2";
        Var h3 = layer_norm(x, layer(ffn_ln + ".g"), layer(ffn_ln + ".b"));
        x = add(x, feed_forward(layer, h3));
    }
    return layer_norm(x, params("lm.dec.ln_f.g"), params("lm.dec.ln_f.b"));
}

}  // namespace

void init_base_weights(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const long d = cfg.embed_dim;
    store.insert("lm.embed", Tensor::randn({cfg.vocab_size, d}, rng, 0.02, cfg.dtype));
    const bool enc_dec = cfg.architecture == Architecture::encoder_decoder;
    if (enc_dec) {
        store.insert("lm.enc.pos", Tensor::randn({cfg.max_seq_len, d}, rng, 0.01, cfg.dtype));
        store.insert("lm.dec.pos", Tensor::randn({cfg.max_seq_len, d}, rng, 0.01, cfg.dtype));
        for (long l = 0; l < cfg.n_layers; ++l) {
            const std::string base = layer_name("enc", l);
            init_layer_norm(store, base + "ln1", d, cfg.dtype);
            init_attention(store, base + "attn", cfg, rng);
            init_layer_norm(store, base + "ln2", d, cfg.dtype);
            init_ffn(store, base + "ffn", cfg, rng);
        }
        init_layer_norm(store, "lm.enc.ln_f", d, cfg.dtype);
    } else {
        store.insert("lm.pos", Tensor::randn({cfg.max_seq_len, d}, rng, 0.01, cfg.dtype));
    }
    for (long l = 0; l < cfg.n_layers; ++l) {
        const std::string base = layer_name("dec", l);
        init_layer_norm(store, base + "ln1", d, cfg.dtype);
        init_attention(store, base + "self", cfg, rng);
        if (enc_dec) {
            init_layer_norm(store, base + "ln2", d, cfg.dtype);
            init_attention(store, base + "cross", cfg, rng);
            init_layer_norm(store, base + "ln3", d, cfg.dtype);
        } else {
            init_layer_norm(store, base + "ln2", d, cfg.dtype);
        }
        init_ffn(store, base + "ffn", cfg, rng);
    }
    init_layer_norm(store, "lm.dec.ln_f", d, cfg.dtype);
}

Var attention_head(Var q, Var k, Var v, Var wq, Var wk, Var wv,
                   const std::optional<LayerKV>& prefix, const Tensor* mask) {
    Tape& tape = *q.tape;
    Var k_aug = k, v_aug = v;
    long prefix_rows = 0;
    if (prefix.has_value()) {
        const Tensor& pk = tape.value(prefix->key);
        const Tensor& pv = tape.value(prefix->value);
        if (pk.dim(0) != pv.dim(0))
            throw DimensionError("prefix key/value lengths disagree: " + pk.shape_str() + " vs " +
                                 pv.shape_str());
        prefix_rows = pk.dim(0);
        if (prefix_rows > 0) {
            k_aug = concat({prefix->key, k}, 0);
            v_aug = concat({prefix->value, v}, 0);
        }
    }
    Var qp = matmul(q, wq);
    Var kp = matmul(k_aug, wk);
    Var vp = matmul(v_aug, wv);
    const long head_dim = tape.value(wq).dim(1);
    Var scores = scale(matmul(qp, transpose(kp)), 1.0 / std::sqrt(static_cast<double>(head_dim)));
    if (mask != nullptr) {
        const long rows = tape.value(scores).dim(0);
        const long real_cols = tape.value(k).dim(0);
        // prefix columns stay unmasked: every query may attend to them
        Tensor full = extend_mask(mask, rows, prefix_rows, real_cols, tape.value(scores).dtype());
        scores = add(scores, tape.constant(std::move(full)));
    }
    return matmul(softmax(scores, 1), vp);
}

Var forward_teacher_forced(BoundParams& params, const ModelConfig& cfg,
                           const InjectionVars& injections,
                           const std::vector<long>& source_tokens,
                           const std::vector<long>& target_tokens, long sep_token_id) {
    cfg.validate();
    Tape& tape = params.tape();
    if (target_tokens.empty()) throw DimensionError("teacher forcing requires target tokens");
    for (AttentionKind k : {AttentionKind::encoder_self, AttentionKind::decoder_cross}) {
        if (cfg.architecture == Architecture::decoder_only && injections.has(k))
            throw ConfigError(std::string("decoder_only model cannot inject ") +
                              attention_kind_name(k) + " prefixes");
    }
    long rho_total = 0;
    for (int ki = 0; ki < kAttentionKindCount; ++ki)
        rho_total = std::max(rho_total,
                             injections.prefix_len(static_cast<AttentionKind>(ki), tape));

    if (cfg.architecture == Architecture::encoder_decoder) {
        if (source_tokens.empty()) throw DimensionError("encoder requires source tokens");
        const long budget = cfg.max_seq_len - rho_total;
        if (static_cast<long>(source_tokens.size()) > budget ||
            static_cast<long>(target_tokens.size()) > budget)
            throw DimensionError("sequence length exceeds max_seq_len minus prefix length");
        Var memory = run_encoder(params, cfg, injections, source_tokens);
        std::vector<long> dec_input;
        dec_input.reserve(target_tokens.size());
        dec_input.push_back(sep_token_id >= 0 ? sep_token_id : 0);
        dec_input.insert(dec_input.end(), target_tokens.begin(), target_tokens.end() - 1);
        Var hidden = run_decoder(params, cfg, injections, memory, dec_input, "lm.dec.pos");
        return matmul(hidden, transpose(params("lm.embed")));
    }

    // decoder_only: score [source; SEP; target] as one causal sequence
    std::vector<long> full;
    full.reserve(source_tokens.size() + target_tokens.size() + 1);
    full.insert(full.end(), source_tokens.begin(), source_tokens.end());
    full.push_back(sep_token_id);
    full.insert(full.end(), target_tokens.begin(), target_tokens.end() - 1);
    if (static_cast<long>(full.size()) > cfg.max_seq_len - rho_total)
        throw DimensionError("sequence length exceeds max_seq_len minus prefix length");
    Var hidden = run_decoder(params, cfg, injections, std::nullopt, full, "lm.pos");
    Var logits = matmul(hidden, transpose(params("lm.embed")));
    return slice_rows(logits, static_cast<long>(source_tokens.size()),
                      static_cast<long>(target_tokens.size()));
}

long lm_param_count(const ModelConfig& cfg) {
    const long d = cfg.embed_dim, f = cfg.ffn_dim;
    const long ln = 2 * d;
    const long attn = 3 * d * cfg.head_dim() * cfg.n_heads + d * d;  // q/k/v heads + wo
    const long ffn = d * f + f + f * d + d;
    long total = cfg.vocab_size * d;  // tied embedding
    if (cfg.architecture == Architecture::encoder_decoder) {
        total += 2 * cfg.max_seq_len * d;                         // enc/dec positions
        total += cfg.n_layers * (ln + attn + ln + ffn) + ln;      // encoder stack + final LN
        total += cfg.n_layers * (ln + attn + ln + attn + ln + ffn) + ln;  // decoder stack
    } else {
        total += cfg.max_seq_len * d;
        total += cfg.n_layers * (ln + attn + ln + ffn) + ln;
    }
    return total;
}

}  // namespace kgprefix

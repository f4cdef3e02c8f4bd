#include "kgprefix/prefix.hpp"

namespace kgprefix {

void PrefixSpec::validate() const {
    if (length < 1) throw ConfigError("prefix length must be >= 1");
    if (reparam_hidden < 1) throw ConfigError("reparam_hidden must be >= 1");
    if (interact_heads < 1 || reparam_hidden % interact_heads != 0)
        throw ConfigError("reparam_hidden must be divisible by interact_heads");
}

namespace {

std::string kind_base(const std::string& group, AttentionKind kind) {
    return group + "." + attention_kind_name(kind) + ".";
}

// splits a length x (2*L*d) matrix into per-layer (key, value) pairs
std::vector<LayerKV> split_bank(Var flat, const ModelConfig& cfg) {
    std::vector<LayerKV> bank;
    bank.reserve(static_cast<size_t>(cfg.n_layers));
    const long d = cfg.embed_dim;
    for (long l = 0; l < cfg.n_layers; ++l) {
        Var key = slice_cols(flat, l * 2 * d, d);
        Var value = slice_cols(flat, l * 2 * d + d, d);
        bank.push_back(LayerKV{key, value});
    }
    return bank;
}

void require_group(const ParamStore& store, const std::string& group, AttentionKind kind) {
    if (!store.contains(kind_base(group, kind) + "embed"))
        throw ConfigError("missing " + group + " parameters for attention kind " +
                          attention_kind_name(kind));
}

}  // namespace

void init_prefix_group(ParamStore& store, const std::string& group, const PrefixSpec& spec,
                       const ModelConfig& cfg, Rng& rng, bool interactive) {
    spec.validate();
    const long d = cfg.embed_dim;
    const long dm = spec.reparam_hidden;
    const long dh = spec.interact_head_dim();
    const long out = 2 * cfg.n_layers * d;
    const long in_width = interactive ? 2 * d : d;
    for (AttentionKind kind : attention_kinds_for(cfg.architecture)) {
        const std::string base = kind_base(group, kind);
        store.insert(base + "embed", Tensor::randn({spec.length, d}, rng, 0.1, cfg.dtype));
        if (interactive) {
            for (long j = 0; j < spec.interact_heads; ++j) {
                const std::string hb = base + "inter.h" + std::to_string(j) + ".";
                store.insert(hb + "wq1", Tensor::randn({dh, dh}, rng, 0.05, cfg.dtype));
                store.insert(hb + "wk1", Tensor::randn({dh, dh}, rng, 0.05, cfg.dtype));
                store.insert(hb + "wv1", Tensor::randn({dh, dh}, rng, 0.05, cfg.dtype));
                store.insert(hb + "wq2", Tensor::randn({d, dh}, rng, 0.05, cfg.dtype));
                store.insert(hb + "wk2", Tensor::randn({d, dh}, rng, 0.05, cfg.dtype));
                store.insert(hb + "wv2", Tensor::randn({d, dh}, rng, 0.05, cfg.dtype));
            }
            store.insert(base + "inter.wo", Tensor::randn({dm, d}, rng, 0.05, cfg.dtype));
        }
        // zero-initialized output layer: a fresh group starts as an empty
        // (all-zero) bank, so tuning begins from the base model's behavior
        store.insert(base + "mlp.w1", Tensor::randn({in_width, dm}, rng, 0.05, cfg.dtype));
        store.insert(base + "mlp.b1", Tensor({dm}, cfg.dtype));
        store.insert(base + "mlp.w2", Tensor({dm, out}, cfg.dtype));
        store.insert(base + "mlp.b2", Tensor({out}, cfg.dtype));
    }
}

std::vector<LayerKV> reparam_mlp(BoundParams& params, const std::string& group,
                                 AttentionKind kind, const ModelConfig& cfg) {
    require_group(params.store(), group, kind);
    const std::string base = kind_base(group, kind);
    Var embed = params(base + "embed");
    Var hidden = tanh_op(add(matmul(embed, params(base + "mlp.w1")), params(base + "mlp.b1")));
    Var flat = add(matmul(hidden, params(base + "mlp.w2")), params(base + "mlp.b2"));
    return split_bank(flat, cfg);
}

Var interactive_attention(BoundParams& params, AttentionKind kind, const PrefixSpec& spec) {
    require_group(params.store(), kKnowledgeGroup, kind);
    require_group(params.store(), kResponseGroup, kind);
    const std::string ybase = kind_base(kResponseGroup, kind);
    const std::string kbase = kind_base(kKnowledgeGroup, kind);
    Var e_resp = params(ybase + "embed");
    Var e_know = params(kbase + "embed");
    std::vector<Var> heads;
    heads.reserve(static_cast<size_t>(spec.interact_heads));
    for (long j = 0; j < spec.interact_heads; ++j) {
        const std::string hb = ybase + "inter.h" + std::to_string(j) + ".";
        Var q = tanh_op(matmul(e_resp, params(hb + "wq2")));
        Var k = tanh_op(matmul(e_know, params(hb + "wk2")));
        Var v = tanh_op(matmul(e_know, params(hb + "wv2")));
        heads.push_back(attention_head(q, k, v, params(hb + "wq1"), params(hb + "wk1"),
                                       params(hb + "wv1"), std::nullopt, nullptr));
    }
    return matmul(concat(heads, 1), params(ybase + "inter.wo"));
}

InteractionTerm interaction_term(BoundParams& params, Var state) {
    Var embed = params("lm.embed");
    Var distribution = softmax(matmul(state, transpose(embed)), 1);
    Var mix = matmul(distribution, embed);
    return InteractionTerm{distribution, mix};
}

InteractiveReparam reparam_interactive(BoundParams& params, AttentionKind kind,
                                       const PrefixSpec& spec, const ModelConfig& cfg) {
    const std::string base = kind_base(kResponseGroup, kind);
    Var state = interactive_attention(params, kind, spec);
    InteractionTerm term = interaction_term(params, state);
    Var cat = concat({params(base + "embed"), term.embedding_mix}, 1);
    Var hidden = tanh_op(add(matmul(cat, params(base + "mlp.w1")), params(base + "mlp.b1")));
    Var flat = add(matmul(hidden, params(base + "mlp.w2")), params(base + "mlp.b2"));
    return InteractiveReparam{split_bank(flat, cfg), state, term};
}

std::vector<LayerKV> combine_banks(const std::vector<LayerKV>& knowledge,
                                   const std::vector<LayerKV>& response) {
    if (knowledge.empty()) return response;
    if (response.empty()) return knowledge;
    if (knowledge.size() != response.size())
        throw ConfigError("prefix banks disagree on layer count");
    std::vector<LayerKV> out;
    out.reserve(knowledge.size());
    for (size_t l = 0; l < knowledge.size(); ++l) {
        Var key = concat({knowledge[l].key, response[l].key}, 0);
        Var value = concat({knowledge[l].value, response[l].value}, 0);
        out.push_back(LayerKV{key, value});
    }
    return out;
}

std::string bank_tensor_name(const std::string& group, AttentionKind kind, long layer,
                             const char* part) {
    return "bank." + group + "." + attention_kind_name(kind) + "." + std::to_string(layer) + "." +
           part;
}

void materialize_bank_to_store(ParamStore& store, const std::string& group,
                               const PrefixSpec& spec, const ModelConfig& cfg, bool interactive) {
    store.erase_with_prefix("bank." + group + ".");
    Tape tape;
    BoundParams params(tape, store);
    for (AttentionKind kind : attention_kinds_for(cfg.architecture)) {
        std::vector<LayerKV> bank;
        if (interactive)
            bank = reparam_interactive(params, kind, spec, cfg).bank;
        else
            bank = reparam_mlp(params, group, kind, cfg);
        for (long l = 0; l < static_cast<long>(bank.size()); ++l) {
            store.insert(bank_tensor_name(group, kind, l, "key"),
                         tape.value(bank[static_cast<size_t>(l)].key));
            store.insert(bank_tensor_name(group, kind, l, "value"),
                         tape.value(bank[static_cast<size_t>(l)].value));
        }
    }
}

bool store_has_bank(const ParamStore& store, const std::string& group) {
    return store.any_with_prefix("bank." + group + ".");
}

InjectionVars injections_from_store(Tape& tape, ParamStore& store, const ModelConfig& cfg) {
    InjectionVars inj;
    const bool has_k = store_has_bank(store, kKnowledgeGroup);
    const bool has_y = store_has_bank(store, kResponseGroup);
    for (AttentionKind kind : attention_kinds_for(cfg.architecture)) {
        std::vector<LayerKV> layers;
        for (long l = 0; l < cfg.n_layers; ++l) {
            std::vector<Var> keys, values;
            if (has_k) {
                keys.push_back(tape.constant(store.value(bank_tensor_name(kKnowledgeGroup, kind, l, "key"))));
                values.push_back(
                    tape.constant(store.value(bank_tensor_name(kKnowledgeGroup, kind, l, "value"))));
            }
            if (has_y) {
                keys.push_back(tape.constant(store.value(bank_tensor_name(kResponseGroup, kind, l, "key"))));
                values.push_back(
                    tape.constant(store.value(bank_tensor_name(kResponseGroup, kind, l, "value"))));
            }
            if (keys.empty()) break;
            layers.push_back(LayerKV{concat(keys, 0), concat(values, 0)});
        }
        if (!layers.empty()) inj.set(kind, std::move(layers));
    }
    return inj;
}

long prefix_group_param_count(const PrefixSpec& spec, const ModelConfig& cfg, bool interactive) {
    const long d = cfg.embed_dim;
    const long dm = spec.reparam_hidden;
    const long dh = spec.interact_head_dim();
    const long out = 2 * cfg.n_layers * d;
    const long n_kinds = static_cast<long>(attention_kinds_for(cfg.architecture).size());
    long per_kind = spec.length * d;  // embedding table
    if (interactive) {
        per_kind += spec.interact_heads * (3 * dh * dh + 3 * d * dh);  // head projections
        per_kind += dm * d;                                            // output projection
        per_kind += 2 * d * dm + dm * out;                             // MLP weights
    } else {
        per_kind += d * dm + dm * out;
    }
    per_kind += dm + out;  // MLP biases
    return n_kinds * per_kind;
}

long materialized_bank_param_count(const PrefixSpec& spec, const ModelConfig& cfg) {
    const long n_kinds = static_cast<long>(attention_kinds_for(cfg.architecture).size());
    return n_kinds * 2 * spec.length * cfg.n_layers * cfg.embed_dim;
}

}  // namespace kgprefix

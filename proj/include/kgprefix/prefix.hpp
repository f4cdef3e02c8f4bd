// Prefix parameter groups and their re-parameterization networks.
//
// Two groups exist: the knowledge prefix ("kprefix.*", tuned while
// generating grounded knowledge) and the response prefix ("yprefix.*",
// tuned while generating responses with the knowledge group frozen).
// Each group owns a per-kind prefix embedding table plus a network that
// maps it to per-layer key/value pairs. The response group can use an
// interactive network that attends from response-prefix embeddings to
// knowledge-prefix embeddings and mixes base-model token embeddings
// through a vocabulary distribution before re-parameterizing.
#pragma once

#include <string>
#include <vector>

#include "kgprefix/transformer.hpp"

namespace kgprefix {

struct PrefixSpec {
    long length = 20;          // prefix tokens per attention kind
    long reparam_hidden = 128; // hidden width of every re-parameterization net
    long interact_heads = 2;   // heads in the interactive attention

    long interact_head_dim() const { return reparam_hidden / interact_heads; }
    void validate() const;
};

constexpr const char* kKnowledgeGroup = "kprefix";
constexpr const char* kResponseGroup = "yprefix";

// Parameter registration. The response group grows interactive weights
// only when `interactive` is set; otherwise it mirrors the plain MLP
// layout of the knowledge group.
void init_prefix_group(ParamStore& store, const std::string& group, const PrefixSpec& spec,
                       const ModelConfig& cfg, Rng& rng, bool interactive);

// Plain re-parameterization: per-kind embedding through a tanh MLP into
// n_layers (key,value) pairs of shape length x embed_dim.
std::vector<LayerKV> reparam_mlp(BoundParams& params, const std::string& group,
                                 AttentionKind kind, const ModelConfig& cfg);

// Interactive attention between response- and knowledge-prefix embeddings;
// returns the per-prefix-token output state (length x embed_dim).
Var interactive_attention(BoundParams& params, AttentionKind kind, const PrefixSpec& spec);

struct InteractionTerm {
    Var vocab_distribution;  // length x vocab, row-stochastic
    Var embedding_mix;       // length x embed_dim
};

// Softmax similarity of `state` against the (frozen) token embedding,
// then the distribution-weighted embedding mixture.
InteractionTerm interaction_term(BoundParams& params, Var state);

struct InteractiveReparam {
    std::vector<LayerKV> bank;
    Var state;               // interactive attention output
    InteractionTerm interaction;
};

// Full interactive path: [embedding ; mixture] through the output MLP.
InteractiveReparam reparam_interactive(BoundParams& params, AttentionKind kind,
                                       const PrefixSpec& spec, const ModelConfig& cfg);

// Key/value pairs with the knowledge bank rows placed before the response
// bank rows. Either side may be empty.
std::vector<LayerKV> combine_banks(const std::vector<LayerKV>& knowledge,
                                   const std::vector<LayerKV>& response);

// ----- materialized banks (plain tensors stored alongside parameters) -----
std::string bank_tensor_name(const std::string& group, AttentionKind kind, long layer,
                             const char* part);
// Evaluates the group's bank with current parameters and stores the
// resulting tensors under "bank.<group>.*".
void materialize_bank_to_store(ParamStore& store, const std::string& group,
                               const PrefixSpec& spec, const ModelConfig& cfg, bool interactive);
// Builds injections from stored banks; uses the groups that are present
// (knowledge rows first when both exist).
InjectionVars injections_from_store(Tape& tape, ParamStore& store, const ModelConfig& cfg);
bool store_has_bank(const ParamStore& store, const std::string& group);

// ----- closed-form parameter counts (mirrors registration arithmetic) -----
long prefix_group_param_count(const PrefixSpec& spec, const ModelConfig& cfg, bool interactive);
// Size of the materialized bank tensors for one group (what generation
// actually consumes: 2 * length * n_layers * embed_dim per kind).
long materialized_bank_param_count(const PrefixSpec& spec, const ModelConfig& cfg);

}  // namespace kgprefix

#include "kgprefix/training.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace kgprefix {

const char* stage_name(StageKind s) {
    switch (s) {
        case StageKind::base: return "base";
        case StageKind::stage1: return "stage1";
        case StageKind::stage2: return "stage2";
        case StageKind::finetune_baseline: return "finetune_baseline";
        case StageKind::prefix_baseline: return "prefix_baseline";
    }
    return "?";
}

StageKind stage_from_name(const std::string& name) {
    if (name == "base") return StageKind::base;
    if (name == "stage1") return StageKind::stage1;
    if (name == "stage2") return StageKind::stage2;
    if (name == "finetune" || name == "finetune_baseline") return StageKind::finetune_baseline;
    if (name == "prefix-baseline" || name == "prefix_baseline") return StageKind::prefix_baseline;
    throw ParseError("unknown stage: " + name);
}

std::set<std::string> trainable_prefixes_for(StageKind stage) {
    switch (stage) {
        case StageKind::base: return {"lm."};
        case StageKind::stage1: return {"kprefix."};
        case StageKind::stage2: return {"yprefix."};
        case StageKind::finetune_baseline: return {"lm."};
        case StageKind::prefix_baseline: return {"kprefix."};
    }
    return {};
}

void StageConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
    if (prefix_length < 1) throw ConfigError("prefix_length must be >= 1");
    if (bow_loss_enabled && !interactive_enabled)
        throw ConfigError("bag-of-words loss requires the interactive path");
}

// ----------------------------- optimizer -----------------------------

void AdamW::step(ParamStore& store, const std::map<std::string, Tensor>& grads, double lr) {
    for (const auto& [name, g] : grads) {
        if (!store.trainable(name))
            throw Error("optimizer received gradient for frozen tensor " + name);
        for (long i = 0; i < g.size(); ++i) {
            if (!std::isfinite(g.data()[i]))
                throw NumericError("non-finite gradient for " + name + "; step aborted");
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        Tensor& p = store.mutable_value(name);
        auto it = state_.find(name);
        if (it == state_.end()) {
            Moments m;
            m.m = Tensor(p.shape(), p.dtype());
            m.v = Tensor(p.shape(), p.dtype());
            it = state_.emplace(name, std::move(m)).first;
        }
        Tensor& m = it->second.m;
        Tensor& v = it->second.v;
        for (long i = 0; i < p.size(); ++i) {
            const double gi = g.data()[i];
            m.data()[i] = cfg_.beta1 * m.data()[i] + (1.0 - cfg_.beta1) * gi;
            v.data()[i] = cfg_.beta2 * v.data()[i] + (1.0 - cfg_.beta2) * gi * gi;
            const double mhat = m.data()[i] / bc1;
            const double vhat = v.data()[i] / bc2;
            p.data()[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                 cfg_.weight_decay * p.data()[i]);
        }
        m.enforce_dtype();
        v.enforce_dtype();
        p.enforce_dtype();
        p.check_finite("adamw update");
    }
}

double lr_schedule(long step, long warmup, long total_steps, double base_lr) {
    if (step < 0) throw ConfigError("lr_schedule: step must be >= 0");
    if (warmup > 0 && step < warmup)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
    if (step >= total_steps) return 0.0;
    if (total_steps <= warmup) return base_lr;
    return base_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

// ----------------------------- examples -----------------------------

namespace {

std::vector<long> encode_target(const Tokenizer& tok, const std::string& text) {
    std::vector<long> t = tok.encode(text);
    t.push_back(Tokenizer::eos_id);
    return t;
}

long context_budget(const ModelConfig& cfg, const PrefixSpec& spec) {
    // worst case injects both banks
    const long budget = cfg.max_seq_len - 2 * spec.length;
    if (budget < 3) throw ConfigError("max_seq_len leaves no room for contexts beside prefixes");
    return budget;
}

}  // namespace

std::vector<SeqExample> make_stage_examples(StageKind stage, const Corpus& corpus,
                                            const std::string& split_name, const Tokenizer& tok,
                                            const ModelConfig& cfg, const PrefixSpec& spec,
                                            long* skipped) {
    if (stage == StageKind::base) throw ConfigError("base stage trains on sentences, not turns");
    const bool knowledge_target = stage == StageKind::stage1;
    const long budget = context_budget(cfg, spec);
    long skip_count = 0;
    std::vector<SeqExample> out;
    for (const auto* conv : corpus.split(split_name)) {
        for (long ti = 1; ti <= static_cast<long>(conv->turns.size()); ++ti) {
            const DialogueTurn& turn = conv->turns[static_cast<size_t>(ti - 1)];
            const std::string& target_text = knowledge_target ? turn.knowledge : turn.response;
            if (target_text.empty()) {
                ++skip_count;
                continue;
            }
            SeqExample ex;
            ex.source = build_context(*conv, ti, tok, budget);
            ex.target = encode_target(tok, target_text);
            if (static_cast<long>(ex.target.size()) > budget) {
                ++skip_count;
                continue;
            }
            if (!knowledge_target) {
                const auto bag = extract_bow(turn.response, tok);
                ex.bag.assign(bag.begin(), bag.end());
            }
            ex.conv_id = conv->id;
            ex.turn_index = ti;
            out.push_back(std::move(ex));
        }
    }
    if (skipped) *skipped = skip_count;
    return out;
}

std::vector<std::vector<long>> base_sentences(const Corpus& corpus, const Tokenizer& tok,
                                              const ModelConfig& cfg) {
    std::vector<std::vector<long>> out;
    const long cap = cfg.max_seq_len - 2;
    for (const auto& conv : corpus.conversations) {
        for (const auto& turn : conv.turns) {
            for (const std::string& text : {turn.knowledge, turn.response}) {
                if (text.empty()) continue;
                std::vector<long> ids = tok.encode(text);
                if (static_cast<long>(ids.size()) > cap)
                    ids.resize(static_cast<size_t>(cap));
                out.push_back(std::move(ids));
            }
        }
    }
    return out;
}

// ----------------------------- losses -----------------------------

namespace {

Var example_nll(BoundParams& params, const ModelConfig& cfg, const InjectionVars& inj,
                const SeqExample& ex) {
    Var logits = forward_teacher_forced(params, cfg, inj, ex.source, ex.target,
                                        Tokenizer::sep_id);
    std::vector<uint8_t> mask(ex.target.size(), 1);
    return cross_entropy(logits, ex.target, mask);
}

Var mean_of(std::vector<Var> terms) {
    if (terms.empty()) throw Error("mean over zero loss terms");
    Var acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

InjectionVars graph_injections(const ModelConfig& cfg,
                               const std::array<std::vector<LayerKV>, kAttentionKindCount>& banks) {
    InjectionVars inj;
    for (AttentionKind kind : attention_kinds_for(cfg.architecture))
        inj.set(kind, banks[static_cast<size_t>(kind)]);
    return inj;
}

// knowledge bank tensors materialized after stage 1, wrapped as constants
std::vector<LayerKV> frozen_knowledge_bank(BoundParams& params, const ModelConfig& cfg,
                                           AttentionKind kind) {
    Tape& tape = params.tape();
    ParamStore& store = params.store();
    std::vector<LayerKV> bank;
    for (long l = 0; l < cfg.n_layers; ++l) {
        bank.push_back(
            LayerKV{tape.constant(store.value(bank_tensor_name(kKnowledgeGroup, kind, l, "key"))),
                    tape.constant(store.value(bank_tensor_name(kKnowledgeGroup, kind, l, "value")))});
    }
    return bank;
}

void track_row_sums(const Tensor& distribution, double* lo, double* hi) {
    const long rows = distribution.dim(0), cols = distribution.dim(1);
    for (long r = 0; r < rows; ++r) {
        double s = 0.0;
        for (long c = 0; c < cols; ++c) s += distribution.at(r, c);
        *lo = std::min(*lo, s);
        *hi = std::max(*hi, s);
    }
}

}  // namespace

Var stage1_batch_loss(BoundParams& params, const ModelConfig& cfg,
                      const std::vector<const SeqExample*>& batch) {
    std::array<std::vector<LayerKV>, kAttentionKindCount> banks;
    for (AttentionKind kind : attention_kinds_for(cfg.architecture))
        banks[static_cast<size_t>(kind)] = reparam_mlp(params, kKnowledgeGroup, kind, cfg);
    const InjectionVars inj = graph_injections(cfg, banks);
    std::vector<Var> losses;
    losses.reserve(batch.size());
    for (const SeqExample* ex : batch) losses.push_back(example_nll(params, cfg, inj, *ex));
    return mean_of(std::move(losses));
}

Stage2LossParts stage2_batch_loss(BoundParams& params, const ModelConfig& cfg,
                                  const PrefixSpec& spec, const StageConfig& stage,
                                  const std::vector<const SeqExample*>& batch) {
    if (stage.bow_loss_enabled && !stage.interactive_enabled)
        throw ConfigError("bag-of-words loss requires the interactive path");
    Tape& tape = params.tape();
    Stage2LossParts parts{};

    std::array<std::vector<LayerKV>, kAttentionKindCount> banks;
    std::vector<Var> distributions;  // one per kind, for optional averaging
    Var dec_self_distribution{};
    for (AttentionKind kind : attention_kinds_for(cfg.architecture)) {
        std::vector<LayerKV> response_bank;
        if (stage.interactive_enabled) {
            InteractiveReparam rep = reparam_interactive(params, kind, spec, cfg);
            response_bank = std::move(rep.bank);
            track_row_sums(tape.value(rep.interaction.vocab_distribution), &parts.ie_row_sum_min,
                           &parts.ie_row_sum_max);
            distributions.push_back(rep.interaction.vocab_distribution);
            if (kind == AttentionKind::decoder_self)
                dec_self_distribution = rep.interaction.vocab_distribution;
        } else {
            response_bank = reparam_mlp(params, kResponseGroup, kind, cfg);
        }
        banks[static_cast<size_t>(kind)] =
            combine_banks(frozen_knowledge_bank(params, cfg, kind), response_bank);
    }
    const InjectionVars inj = graph_injections(cfg, banks);

    std::vector<Var> nlls;
    nlls.reserve(batch.size());
    for (const SeqExample* ex : batch) nlls.push_back(example_nll(params, cfg, inj, *ex));
    parts.nll = mean_of(std::move(nlls));
    parts.total = parts.nll;

    if (stage.bow_loss_enabled) {
        Var supervision;
        if (stage.bow_average_kinds && distributions.size() > 1) {
            Var acc = distributions[0];
            for (size_t i = 1; i < distributions.size(); ++i) acc = add(acc, distributions[i]);
            supervision = scale(acc, 1.0 / static_cast<double>(distributions.size()));
        } else {
            if (!dec_self_distribution.valid())
                throw ConfigError("interactive path produced no decoder-self distribution");
            supervision = dec_self_distribution;
        }
        std::vector<Var> bows;
        for (const SeqExample* ex : batch) {
            if (ex->bag.empty()) {
                ++parts.empty_bags;
                continue;
            }
            bows.push_back(bow_loss(supervision, ex->bag));
        }
        if (!bows.empty()) {
            parts.bow = mean_of(std::move(bows));
            parts.total = add(parts.total, *parts.bow);
        }
    }
    return parts;
}

Var prefix_baseline_batch_loss(BoundParams& params, const ModelConfig& cfg,
                               const PrefixSpec& spec,
                               const std::vector<const SeqExample*>& batch) {
    std::array<std::vector<LayerKV>, kAttentionKindCount> banks;
    for (AttentionKind kind : attention_kinds_for(cfg.architecture))
        banks[static_cast<size_t>(kind)] = reparam_mlp(params, kKnowledgeGroup, kind, cfg);
    const InjectionVars inj = graph_injections(cfg, banks);
    std::vector<Var> losses;
    losses.reserve(batch.size());
    for (const SeqExample* ex : batch) losses.push_back(example_nll(params, cfg, inj, *ex));
    return mean_of(std::move(losses));
}

Var plain_batch_loss(BoundParams& params, const ModelConfig& cfg,
                     const std::vector<const SeqExample*>& batch) {
    const InjectionVars none;
    std::vector<Var> losses;
    losses.reserve(batch.size());
    for (const SeqExample* ex : batch) losses.push_back(example_nll(params, cfg, none, *ex));
    return mean_of(std::move(losses));
}

// ----------------------------- stage driver -----------------------------

namespace {

double clip_gradients(std::map<std::string, Tensor>& grads, double clip) {
    double sq = 0.0;
    for (const auto& [name, g] : grads)
        for (long i = 0; i < g.size(); ++i) sq += g.data()[i] * g.data()[i];
    const double norm = std::sqrt(sq);
    if (clip > 0.0 && norm > clip) {
        const double s = clip / norm;
        for (auto& [name, g] : grads) {
            for (long i = 0; i < g.size(); ++i) g.data()[i] *= s;
            g.enforce_dtype();
        }
    }
    return norm;
}

void require_group_present(const ParamStore& store, const char* prefix, const char* needed_by,
                           const char* producing_stage) {
    if (!store.any_with_prefix(prefix))
        throw DependencyError(std::string(needed_by) + " requires parameters \"" + prefix +
                              "\" produced by stage " + producing_stage);
}

struct PreparedStage {
    PrefixSpec spec;          // spec with the stage's prefix length applied
    bool response_group = false;  // whether the trainable group is yprefix
};

PreparedStage prepare_stage(ParamStore& store, StageKind stage, const ModelConfig& cfg,
                            const PrefixSpec& base_spec, const StageConfig& stage_cfg,
                            Rng& rng) {
    PrefixSpec spec = base_spec;
    spec.length = stage_cfg.prefix_length;
    switch (stage) {
        case StageKind::base:
            if (store.any_with_prefix("lm."))
                throw DependencyError("base stage must start from an empty store");
            init_base_weights(store, cfg, rng);
            break;
        case StageKind::stage1:
            require_group_present(store, "lm.", "stage1", "base");
            store.erase_with_prefix("kprefix.");
            store.erase_with_prefix("bank.");
            init_prefix_group(store, kKnowledgeGroup, spec, cfg, rng, /*interactive=*/false);
            break;
        case StageKind::stage2:
            require_group_present(store, "lm.", "stage2", "base");
            require_group_present(store, "kprefix.", "stage2", "stage1");
            require_group_present(store, "bank.kprefix.", "stage2", "stage1");
            store.erase_with_prefix("yprefix.");
            store.erase_with_prefix("bank.yprefix.");
            init_prefix_group(store, kResponseGroup, spec, cfg, rng,
                              stage_cfg.interactive_enabled);
            break;
        case StageKind::finetune_baseline:
            require_group_present(store, "lm.", "finetune_baseline", "base");
            break;
        case StageKind::prefix_baseline:
            require_group_present(store, "lm.", "prefix_baseline", "base");
            store.erase_with_prefix("kprefix.");
            store.erase_with_prefix("yprefix.");
            store.erase_with_prefix("bank.");
            init_prefix_group(store, kKnowledgeGroup, spec, cfg, rng, /*interactive=*/false);
            break;
    }
    PreparedStage prepared;
    prepared.spec = spec;
    prepared.response_group = stage == StageKind::stage2;
    return prepared;
}

std::vector<long> corrupt_tokens(const std::vector<long>& clean, double mask_prob, Rng& rng) {
    std::vector<long> out = clean;
    for (long& id : out)
        if (rng.uniform01() < mask_prob) id = Tokenizer::unk_id;
    return out;
}

}  // namespace

StageSummary run_stage(ParamStore& store, StageKind stage, const ModelConfig& cfg,
                       const PrefixSpec& base_spec, const StageConfig& stage_cfg,
                       const Corpus& corpus, const Tokenizer& tok, std::ostream* metrics) {
    stage_cfg.validate();
    cfg.validate();
    Rng rng(stage_cfg.seed);
    const PreparedStage prepared = prepare_stage(store, stage, cfg, base_spec, stage_cfg, rng);
    const PrefixSpec& spec = prepared.spec;
    store.apply_freeze_schedule(trainable_prefixes_for(stage));

    StageSummary summary{};
    summary.stage = stage;

    // training set
    std::vector<SeqExample> turn_examples;
    std::vector<std::vector<long>> sentences;
    size_t n_examples = 0;
    if (stage == StageKind::base) {
        sentences = base_sentences(corpus, tok, cfg);
        n_examples = sentences.size();
    } else {
        long skipped = 0;
        turn_examples = make_stage_examples(stage, corpus, "train", tok, cfg, spec, &skipped);
        summary.skipped_examples = skipped;
        n_examples = turn_examples.size();
    }
    if (n_examples == 0) throw ConfigError("no usable training examples for this stage");

    const long steps_per_epoch =
        static_cast<long>((n_examples + stage_cfg.batch_size - 1) / stage_cfg.batch_size);
    const long total_steps = steps_per_epoch * stage_cfg.epochs;
    AdamW optimizer;
    std::vector<size_t> order(n_examples);
    for (size_t i = 0; i < n_examples; ++i) order[i] = i;

    long step = 0;
    for (long epoch = 0; epoch < stage_cfg.epochs; ++epoch) {
        rng.shuffle(order);
        // base-stage corruption is redrawn every epoch
        std::vector<SeqExample> epoch_base;
        if (stage == StageKind::base) {
            epoch_base.reserve(sentences.size());
            for (const auto& s : sentences) {
                SeqExample ex;
                if (cfg.architecture == Architecture::encoder_decoder) {
                    ex.source.push_back(Tokenizer::bos_id);
                    const auto noisy = corrupt_tokens(s, stage_cfg.base_mask_prob, rng);
                    ex.source.insert(ex.source.end(), noisy.begin(), noisy.end());
                    ex.source.push_back(Tokenizer::eos_id);
                }
                ex.target = s;
                ex.target.push_back(Tokenizer::eos_id);
                epoch_base.push_back(std::move(ex));
            }
        }
        for (long bi = 0; bi < steps_per_epoch; ++bi, ++step) {
            std::vector<const SeqExample*> batch;
            for (long k = bi * stage_cfg.batch_size;
                 k < std::min<long>(static_cast<long>(n_examples),
                                    (bi + 1) * stage_cfg.batch_size);
                 ++k) {
                const size_t idx = order[static_cast<size_t>(k)];
                batch.push_back(stage == StageKind::base ? &epoch_base[idx]
                                                         : &turn_examples[idx]);
            }
            Tape tape;
            BoundParams params(tape, store);
            Var loss{};
            double nll_value = 0.0, bow_value = 0.0;
            switch (stage) {
                case StageKind::base:
                case StageKind::finetune_baseline:
                    loss = plain_batch_loss(params, cfg, batch);
                    nll_value = tape.value(loss).item();
                    break;
                case StageKind::stage1:
                    loss = stage1_batch_loss(params, cfg, batch);
                    nll_value = tape.value(loss).item();
                    break;
                case StageKind::prefix_baseline:
                    loss = prefix_baseline_batch_loss(params, cfg, batch);
                    nll_value = tape.value(loss).item();
                    break;
                case StageKind::stage2: {
                    Stage2LossParts parts = stage2_batch_loss(params, cfg, spec, stage_cfg, batch);
                    loss = parts.total;
                    nll_value = tape.value(parts.nll).item();
                    if (parts.bow) bow_value = tape.value(*parts.bow).item();
                    summary.ie_row_sum_min = std::min(summary.ie_row_sum_min, parts.ie_row_sum_min);
                    summary.ie_row_sum_max = std::max(summary.ie_row_sum_max, parts.ie_row_sum_max);
                    break;
                }
            }
            tape.backward(loss);
            std::map<std::string, Tensor> grads;
            for (const auto& [name, var] : params.bound()) {
                if (!store.trainable(name)) continue;
                grads.emplace(name, tape.grad_or_zero(var));
            }
            const double grad_norm = clip_gradients(grads, stage_cfg.grad_clip_norm);
            const double lr =
                lr_schedule(step, stage_cfg.warmup_steps, total_steps, stage_cfg.learning_rate);
            optimizer.step(store, grads, lr);
            summary.final_loss = tape.value(loss).item();
            if (metrics) {
                nlohmann::json rec = {{"step", step},
                                      {"stage", stage_name(stage)},
                                      {"epoch", epoch},
                                      {"loss", summary.final_loss},
                                      {"nll", nll_value},
                                      {"bow", bow_value},
                                      {"lr", lr},
                                      {"grad_norm", grad_norm},
                                      {"skipped", summary.skipped_examples}};
                if (stage == StageKind::stage2) {
                    rec["ie_row_sum_min"] = summary.ie_row_sum_min;
                    rec["ie_row_sum_max"] = summary.ie_row_sum_max;
                }
                (*metrics) << rec.dump() << "\n";
            }
        }
    }
    summary.steps = step;

    // freeze what was tuned and materialize its bank for generation
    if (stage == StageKind::stage1 || stage == StageKind::prefix_baseline) {
        materialize_bank_to_store(store, kKnowledgeGroup, spec, cfg, /*interactive=*/false);
    } else if (stage == StageKind::stage2) {
        materialize_bank_to_store(store, kResponseGroup, spec, cfg,
                                  stage_cfg.interactive_enabled);
    }
    store.apply_freeze_schedule({});
    return summary;
}

}  // namespace kgprefix

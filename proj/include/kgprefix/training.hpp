// Training stages and objectives.
//
// Stage "base" pre-trains the full miniature language model on corpus
// sentence text (denoising for encoder-decoder, causal for decoder-only).
// Stage 1 freezes it and tunes the knowledge prefix to generate grounded
// knowledge from the dialogue context. Stage 2 additionally freezes the
// knowledge prefix and tunes the response prefix (interactive path plus
// bag-of-words supervision by default). Baseline stages cover whole-model
// fine-tuning and single-bank prefix tuning.
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "kgprefix/data.hpp"
#include "kgprefix/prefix.hpp"

namespace kgprefix {

enum class StageKind { base, stage1, stage2, finetune_baseline, prefix_baseline };

const char* stage_name(StageKind s);
StageKind stage_from_name(const std::string& name);
std::set<std::string> trainable_prefixes_for(StageKind stage);

struct StageConfig {
    double learning_rate = 3e-5;
    long epochs = 40;
    long warmup_steps = 2000;
    long batch_size = 32;
    double grad_clip_norm = 1.0;
    uint64_t seed = 1;
    bool bow_loss_enabled = true;
    bool interactive_enabled = true;
    // supervise the pooled distribution from every attention kind instead
    // of the decoder-self kind alone
    bool bow_average_kinds = false;
    long prefix_length = 20;
    double base_mask_prob = 0.3;  // token corruption rate for the base stage

    void validate() const;
};

// ----------------------------- optimizer -----------------------------

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // Applies one decoupled-weight-decay update to exactly the tensors
    // named in `grads` (all must be trainable). A non-finite gradient
    // aborts the step before any tensor is touched.
    void step(ParamStore& store, const std::map<std::string, Tensor>& grads, double lr);
    long step_count() const { return t_; }

private:
    struct Moments {
        Tensor m, v;
    };
    std::map<std::string, Moments> state_;
    AdamWConfig cfg_;
    long t_ = 0;
};

// Linear warmup from zero to base_lr over `warmup` steps, then linear
// decay to zero at `total_steps`.
double lr_schedule(long step, long warmup, long total_steps, double base_lr);

// ----------------------------- examples -----------------------------

struct SeqExample {
    std::vector<long> source;
    std::vector<long> target;  // includes trailing EOS
    std::vector<long> bag;     // content-word ids of the gold response
    std::string conv_id;
    long turn_index = 0;  // 1-based
};

// Builds (context -> knowledge) or (context -> response) examples for the
// stage. Examples with an empty generation target are skipped and counted.
std::vector<SeqExample> make_stage_examples(StageKind stage, const Corpus& corpus,
                                            const std::string& split_name, const Tokenizer& tok,
                                            const ModelConfig& cfg, const PrefixSpec& spec,
                                            long* skipped);

// Sentence list for base pre-training (knowledge + response text of every
// split; the base model is the substrate the prefixes later query).
std::vector<std::vector<long>> base_sentences(const Corpus& corpus, const Tokenizer& tok,
                                              const ModelConfig& cfg);

// ----------------------------- losses -----------------------------

struct Stage2LossParts {
    Var total;
    Var nll;
    std::optional<Var> bow;
    double ie_row_sum_min = 1.0;
    double ie_row_sum_max = 1.0;
    long empty_bags = 0;
};

// Knowledge-generation objective with the knowledge bank injected
// (re-parameterized on the fly; the bank group is the trainable one).
Var stage1_batch_loss(BoundParams& params, const ModelConfig& cfg,
                      const std::vector<const SeqExample*>& batch);

// Response objective with frozen materialized knowledge bank plus the
// trainable response bank; optionally adds the bag-of-words term taken
// from the interactive network's vocabulary distribution.
Stage2LossParts stage2_batch_loss(BoundParams& params, const ModelConfig& cfg,
                                  const PrefixSpec& spec, const StageConfig& stage,
                                  const std::vector<const SeqExample*>& batch);

// Single-bank prefix baseline on the response objective.
Var prefix_baseline_batch_loss(BoundParams& params, const ModelConfig& cfg,
                               const std::vector<const SeqExample*>& batch);

// Plain teacher-forced objective without prefixes (base / fine-tuning).
Var plain_batch_loss(BoundParams& params, const ModelConfig& cfg,
                     const std::vector<const SeqExample*>& batch);

// ----------------------------- stage driver -----------------------------

struct StageSummary {
    StageKind stage;
    long steps = 0;
    long skipped_examples = 0;
    double final_loss = 0.0;
    double ie_row_sum_min = 1.0;
    double ie_row_sum_max = 1.0;
};

// Runs one full stage over `corpus`: validates prerequisites, initializes
// the stage's parameter group, applies the freeze schedule, trains, and
// materializes the group's bank. Per-step metrics go to `metrics` as
// line-delimited JSON when provided.
StageSummary run_stage(ParamStore& store, StageKind stage, const ModelConfig& cfg,
                       const PrefixSpec& base_spec, const StageConfig& stage_cfg,
                       const Corpus& corpus, const Tokenizer& tok, std::ostream* metrics);

}  // namespace kgprefix

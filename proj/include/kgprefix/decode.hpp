// Beam-search decoding with minimum-length EOS masking, repeated-n-gram
// blocking inside each hypothesis, length-normalized selection, and
// deterministic tie-breaking by token id.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kgprefix/data.hpp"
#include "kgprefix/prefix.hpp"

namespace kgprefix {

struct BeamConfig {
    long beam_size = 3;
    long min_length = 20;
    long no_repeat_ngram = 3;  // 0 disables blocking
    long max_length = 40;

    void validate() const;
};

struct GenerationOutput {
    std::vector<long> tokens;            // ends with EOS when the beam finished
    std::string text;
    std::vector<double> token_logprobs;  // one per token, EOS included
    double score = 0.0;                  // sum of token_logprobs
    long dropped_hypotheses = 0;         // blocking deadlocks reported by the search
};

// Raw next-token logits given the generated prefix.
using NextLogits = std::function<std::vector<double>(const std::vector<long>& prefix)>;

GenerationOutput beam_search(const NextLogits& next_logits, const BeamConfig& cfg, long eos_id,
                             const std::vector<long>& banned_tokens);
// Identical masks and tie-breaking with a single hypothesis.
GenerationOutput greedy_decode(const NextLogits& next_logits, const BeamConfig& cfg, long eos_id,
                               const std::vector<long>& banned_tokens);

// Next-token logits of the model conditioned on `source`, with whatever
// prefix banks the store holds injected.
NextLogits model_next_logits(ParamStore& store, const ModelConfig& cfg,
                             const std::vector<long>& source);

// Special tokens that generation may never emit.
std::vector<long> default_banned_tokens();

}  // namespace kgprefix

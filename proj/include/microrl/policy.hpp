#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "microrl/rng.hpp"

namespace microrl {

struct ModelDims {
    int vocab = 0;
    int embed = 0;
    int hidden = 0;
};

// Offsets of each weight block inside the flat parameter vector.
// Blocks are row-major:
//   emb   : vocab x embed   token embeddings
//   w_xh  : hidden x embed  input projection of the recurrent cell
//   w_hh  : hidden x hidden recurrent weights
//   b_h   : hidden          cell bias
//   w_out : vocab x hidden  softmax head
//   b_out : vocab           head bias
struct ParamLayout {
    ModelDims dims;
    std::size_t emb = 0, w_xh = 0, w_hh = 0, b_h = 0, w_out = 0, b_out = 0;
    std::size_t total = 0;
    static ParamLayout make(ModelDims d);
};

// Snapshot roles. Only the live policy may be mutated; the sampling-time
// and step-0 snapshots stay frozen for ratio and KL terms.
enum class Role { current, old_snapshot, reference };

struct PolicyModel {
    ModelDims dims;
    Role role = Role::current;
    std::uint64_t init_seed = 0;
    std::vector<double> params;

    ParamLayout layout() const { return ParamLayout::make(dims); }
};

struct TokenSequence {
    std::vector<int> prompt;
    std::vector<int> completion;
};

struct SampleOptions {
    double temperature = 1.0;
    int max_new_tokens = 64;
    int eos_id = -1;
    bool greedy = false;
};

// Flat gradient accumulator matching the parameter layout.
struct GradientBuffer {
    std::vector<double> g;

    explicit GradientBuffer(std::size_t n = 0) : g(n, 0.0) {}
    void zero() { std::fill(g.begin(), g.end(), 0.0); }
    void add(const GradientBuffer& other);
    void scale(double c);
};

// Fresh model with weights ~ N(0, 1/sqrt(fan_in)) per block and zero biases.
// Rejects non-positive dims.
PolicyModel init_policy(ModelDims dims, std::uint64_t seed);

// Log-probability of each completion token given the prompt and all earlier
// completion tokens. Requires a non-empty completion and in-range ids.
std::vector<double> log_probs(const PolicyModel& m, const TokenSequence& seq);

// Autoregressive sampling at a temperature (> 0), or greedy argmax when
// opts.greedy. Stops after emitting eos or at the token cap; the emitted eos
// is part of the completion.
TokenSequence sample_completion(const PolicyModel& m, const std::vector<int>& prompt,
                                const SampleOptions& opts, Rng& rng);

// Adds sum_t weights[t] * d log pi(completion[t] | prefix) / d theta to buf,
// backpropagating through the softmax head, the recurrence (including the
// prompt span) and the embeddings. weights.size() must equal the completion
// length; buf must match the parameter count.
void accumulate_weighted_logprob_grad(const PolicyModel& m, const TokenSequence& seq,
                                      const std::vector<double>& weights, GradientBuffer& buf);

std::vector<double> flat_params(const PolicyModel& m);

// Replaces the parameters of a live model. Rejects length mismatches and
// frozen snapshots.
void set_flat_params(PolicyModel& m, const std::vector<double>& flat);

// Deep copy with a new role.
PolicyModel snapshot(const PolicyModel& m, Role role);

// Versioned binary model file: header {magic, version, dims, seed} then the
// parameter vector as 64-bit floats. The loader validates the header and the
// parameter count and throws std::runtime_error with a diagnostic otherwise.
void save_model(const PolicyModel& m, const std::string& path);
PolicyModel load_model(const std::string& path);

}  // namespace microrl

#pragma once

// Fixed-window autoregressive categorical policy.
//
//   features(context) = concat_j one_hot(token at window slot j), zero for
//                       slots before the start of the sequence
//   hidden            = tanh(features * w_in + b_in)
//   logits            = hidden * w_out + b_out
//
// The context for response position t is the last `context_width` tokens of
// prompt ++ response[0, t).

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxlab/autodiff.hpp"
#include "proxlab/tensor.hpp"

namespace proxlab {

using Token = std::int32_t;

struct SamplingParams {
  // 0 selects greedy (argmax) decoding.
  double temperature = 1.0;
  double top_p = 1.0;
  // 0 keeps the whole vocabulary.
  std::size_t top_k = 0;
};

enum class DoneReason { kEndToken, kMaxLength };

struct PolicyParams {
  static constexpr std::array<const char*, 4> kLayerNames = {"w_in", "b_in", "w_out", "b_out"};
  enum Layer : std::size_t { kWIn = 0, kBIn = 1, kWOut = 2, kBOut = 3 };

  std::size_t vocab_size = 0;
  std::size_t context_width = 0;
  std::size_t hidden = 0;
  // Number of optimizer steps applied since initialization.
  std::int64_t version = 0;
  std::vector<Tensor> layers;

  std::size_t parameter_count() const;
  bool all_finite() const;
};

PolicyParams init_policy(std::uint64_t seed, std::size_t vocab_size, std::size_t context_width,
                         std::size_t hidden);
// All weights zero: uniform logits everywhere.
PolicyParams zero_policy(std::size_t vocab_size, std::size_t context_width, std::size_t hidden);

// Parameters bound into an autodiff graph.
struct PolicyGraph {
  std::size_t vocab_size = 0;
  std::size_t context_width = 0;
  std::array<ad::Value, 4> layers;

  static PolicyGraph bind(const PolicyParams& params, bool requires_grad);
};

struct SequenceView {
  std::span<const Token> prompt;
  std::span<const Token> response;
};

struct TokenForward {
  ad::Value logp;                // (T) log-prob of each response token
  std::vector<double> entropy;   // (T) entropy of the full distribution at each step
};

// Batched forward over every response token of every sequence, in order.
TokenForward forward_tokens(const PolicyGraph& graph, std::span<const SequenceView> seqs);

// Log-probs of the response under the policy.
std::vector<double> logp_sequence(const PolicyParams& params, std::span<const Token> prompt,
                                  std::span<const Token> response);
ad::Value logp_sequence(const PolicyGraph& graph, std::span<const Token> prompt,
                        std::span<const Token> response);

// Unrestricted log-softmax for one context window (no temperature, no truncation).
std::vector<double> next_token_logp(const PolicyParams& params, std::span<const Token> history);

struct SampleResult {
  std::vector<Token> tokens;
  // Log-probs of the sampled tokens under the unrestricted model distribution.
  std::vector<double> logp;
  DoneReason done = DoneReason::kMaxLength;
};

SampleResult sample_sequence(const PolicyParams& params, std::span<const Token> prompt,
                             const SamplingParams& sampling, std::size_t max_len,
                             std::uint64_t rng_seed, std::optional<Token> end_token);

// Mean per-step entropy in nats; 0 for an empty response.
double entropy(const PolicyParams& params, std::span<const Token> prompt,
               std::span<const Token> response);

// Checkpoint format: JSON object
//   {"format": "proxlab.policy", "format_version": 1, "vocab_size": V,
//    "context_width": w, "hidden": h, "version": k,
//    "tensors": {"w_in": {"shape": [w*V, h], "values": [...row-major...]}, ...}}
nlohmann::json policy_to_json(const PolicyParams& params);
PolicyParams policy_from_json(const nlohmann::json& j);
void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path);
PolicyParams load_checkpoint(const std::filesystem::path& path);

}  // namespace proxlab

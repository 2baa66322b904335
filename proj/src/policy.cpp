#include "proxlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "proxlab/error.hpp"
#include "proxlab/random.hpp"

namespace proxlab {

namespace {

void check_dims(std::size_t vocab_size, std::size_t context_width, std::size_t hidden) {
  if (vocab_size < 2) throw DomainError("policy: vocab_size must be >= 2");
  if (context_width < 1) throw DomainError("policy: context_width must be >= 1");
  if (hidden < 1) throw DomainError("policy: hidden must be >= 1");
}

std::vector<Shape> layer_shapes(std::size_t vocab, std::size_t width, std::size_t hidden) {
  return {Shape{width * vocab, hidden}, Shape{hidden}, Shape{hidden, vocab}, Shape{vocab}};
}

void check_tokens(std::span<const Token> tokens, std::size_t vocab) {
  for (Token t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw DomainError("policy: token " + std::to_string(t) + " outside vocabulary of " +
                        std::to_string(vocab));
    }
  }
}

// Feature column of every occupied window slot, in increasing order.
void window_features(std::span<const Token> history, std::size_t width, std::size_t vocab,
                     std::vector<std::size_t>& cols) {
  cols.clear();
  const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(history.size());
  for (std::size_t j = 0; j < width; ++j) {
    const std::ptrdiff_t pos = len - static_cast<std::ptrdiff_t>(width) + static_cast<std::ptrdiff_t>(j);
    if (pos < 0) continue;
    cols.push_back(j * vocab + static_cast<std::size_t>(history[static_cast<std::size_t>(pos)]));
  }
}

// Same accumulation order as the batched route so both agree bit for bit.
std::vector<double> plain_logits(const PolicyParams& p, std::span<const Token> history) {
  const std::size_t V = p.vocab_size, H = p.hidden;
  std::vector<std::size_t> cols;
  window_features(history, p.context_width, V, cols);
  const auto& w_in = p.layers[PolicyParams::kWIn].values;
  const auto& b_in = p.layers[PolicyParams::kBIn].values;
  const auto& w_out = p.layers[PolicyParams::kWOut].values;
  const auto& b_out = p.layers[PolicyParams::kBOut].values;

  std::vector<double> h(H, 0.0);
  for (std::size_t c : cols) {
    for (std::size_t j = 0; j < H; ++j) h[j] += 1.0 * w_in[c * H + j];
  }
  for (std::size_t j = 0; j < H; ++j) h[j] = std::tanh(h[j] + b_in[j]);

  std::vector<double> logits(V, 0.0);
  for (std::size_t k = 0; k < H; ++k) {
    if (h[k] == 0.0) continue;
    for (std::size_t v = 0; v < V; ++v) logits[v] += h[k] * w_out[k * V + v];
  }
  for (std::size_t v = 0; v < V; ++v) logits[v] += b_out[v];
  return logits;
}

std::vector<double> log_softmax_row(const std::vector<double>& x) {
  double mx = x[0];
  for (std::size_t j = 1; j < x.size(); ++j) mx = std::max(mx, x[j]);
  double z = 0.0;
  for (double v : x) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = x[j] - lse;
  return out;
}

double row_entropy(const double* lp, std::size_t n) {
  double e = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double p = std::exp(lp[j]);
    if (p > 0.0) e -= p * lp[j];
  }
  return e;
}

std::size_t argmax(const std::vector<double>& x) {
  return static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
}

// Draws from the temperature / top-k / top-p restricted distribution.
std::size_t draw(const std::vector<double>& logits, const SamplingParams& s, Rng& rng) {
  if (s.temperature == 0.0) return argmax(logits);
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / s.temperature;
  const std::vector<double> lp = log_softmax_row(scaled);
  std::vector<double> prob(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) prob[i] = std::exp(lp[i]);

  const bool truncate = (s.top_k != 0 && s.top_k < prob.size()) || s.top_p < 1.0;
  if (truncate) {
    std::vector<std::size_t> order(prob.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });
    std::size_t keep = s.top_k == 0 ? order.size() : std::min(s.top_k, order.size());
    if (s.top_p < 1.0) {
      double cum = 0.0;
      for (std::size_t i = 0; i < keep; ++i) {
        cum += prob[order[i]];
        if (cum >= s.top_p) {
          keep = i + 1;
          break;
        }
      }
    }
    for (std::size_t i = keep; i < order.size(); ++i) prob[order[i]] = 0.0;
  }

  const double total = std::accumulate(prob.begin(), prob.end(), 0.0);
  const double u = rng.uniform() * total;
  double cum = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    if (prob[i] == 0.0) continue;
    last_nonzero = i;
    cum += prob[i];
    if (u < cum) return i;
  }
  return last_nonzero;
}

}  // namespace

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : layers) n += t.numel();
  return n;
}

bool PolicyParams::all_finite() const {
  for (const auto& t : layers) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

PolicyParams init_policy(std::uint64_t seed, std::size_t vocab_size, std::size_t context_width,
                         std::size_t hidden) {
  check_dims(vocab_size, context_width, hidden);
  PolicyParams p{vocab_size, context_width, hidden, 0, {}};
  Rng rng(seed);
  const auto shapes = layer_shapes(vocab_size, context_width, hidden);
  const double fan_in[] = {static_cast<double>(context_width * vocab_size),
                           static_cast<double>(context_width * vocab_size),
                           static_cast<double>(hidden), static_cast<double>(hidden)};
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    Tensor t(shapes[l]);
    const double scale = 1.0 / std::sqrt(fan_in[l]);
    for (double& v : t.values) v = rng.uniform(-scale, scale);
    p.layers.push_back(std::move(t));
  }
  return p;
}

PolicyParams zero_policy(std::size_t vocab_size, std::size_t context_width, std::size_t hidden) {
  check_dims(vocab_size, context_width, hidden);
  PolicyParams p{vocab_size, context_width, hidden, 0, {}};
  for (const auto& s : layer_shapes(vocab_size, context_width, hidden)) p.layers.emplace_back(s);
  return p;
}

PolicyGraph PolicyGraph::bind(const PolicyParams& params, bool requires_grad) {
  PolicyGraph g;
  g.vocab_size = params.vocab_size;
  g.context_width = params.context_width;
  for (std::size_t l = 0; l < 4; ++l) {
    g.layers[l] = requires_grad ? ad::Value::variable(params.layers[l])
                                : ad::Value::constant(params.layers[l]);
  }
  return g;
}

TokenForward forward_tokens(const PolicyGraph& graph, std::span<const SequenceView> seqs) {
  const std::size_t V = graph.vocab_size, W = graph.context_width;
  std::size_t total = 0;
  for (const auto& s : seqs) {
    check_tokens(s.prompt, V);
    check_tokens(s.response, V);
    total += s.response.size();
  }
  TokenForward out;
  if (total == 0) {
    out.logp = ad::Value::constant(Tensor(Shape{0}));
    return out;
  }

  Tensor features(Shape{total, W * V});
  std::vector<std::size_t> targets;
  targets.reserve(total);
  std::vector<Token> history;
  std::vector<std::size_t> cols;
  std::size_t row = 0;
  for (const auto& s : seqs) {
    history.assign(s.prompt.begin(), s.prompt.end());
    for (Token t : s.response) {
      window_features(history, W, V, cols);
      for (std::size_t c : cols) features[row * W * V + c] = 1.0;
      targets.push_back(static_cast<std::size_t>(t));
      history.push_back(t);
      ++row;
    }
  }

  using namespace ad;
  Value x = Value::constant(std::move(features));
  Value hidden = tanh(add_rowwise(matmul(x, graph.layers[PolicyParams::kWIn]),
                                  graph.layers[PolicyParams::kBIn]));
  Value logits = add_rowwise(matmul(hidden, graph.layers[PolicyParams::kWOut]),
                             graph.layers[PolicyParams::kBOut]);
  Value lsm = log_softmax(logits);
  out.entropy.resize(total);
  for (std::size_t r = 0; r < total; ++r) out.entropy[r] = row_entropy(&lsm.data().values[r * V], V);
  out.logp = gather(lsm, targets);
  return out;
}

std::vector<double> logp_sequence(const PolicyParams& params, std::span<const Token> prompt,
                                  std::span<const Token> response) {
  if (response.empty()) return {};
  return logp_sequence(PolicyGraph::bind(params, false), prompt, response).data().values;
}

ad::Value logp_sequence(const PolicyGraph& graph, std::span<const Token> prompt,
                        std::span<const Token> response) {
  const SequenceView view{prompt, response};
  return forward_tokens(graph, std::span<const SequenceView>(&view, 1)).logp;
}

std::vector<double> next_token_logp(const PolicyParams& params, std::span<const Token> history) {
  check_tokens(history, params.vocab_size);
  return log_softmax_row(plain_logits(params, history));
}

SampleResult sample_sequence(const PolicyParams& params, std::span<const Token> prompt,
                             const SamplingParams& sampling, std::size_t max_len,
                             std::uint64_t rng_seed, std::optional<Token> end_token) {
  if (max_len < 1) throw DomainError("sample_sequence: max_len must be >= 1");
  check_tokens(prompt, params.vocab_size);
  Rng rng(rng_seed);
  SampleResult out;
  std::vector<Token> history(prompt.begin(), prompt.end());
  while (out.tokens.size() < max_len) {
    const std::vector<double> logits = plain_logits(params, history);
    const std::size_t tok = draw(logits, sampling, rng);
    out.tokens.push_back(static_cast<Token>(tok));
    out.logp.push_back(log_softmax_row(logits)[tok]);
    history.push_back(static_cast<Token>(tok));
    if (end_token && static_cast<Token>(tok) == *end_token) {
      out.done = DoneReason::kEndToken;
      return out;
    }
  }
  out.done = DoneReason::kMaxLength;
  return out;
}

double entropy(const PolicyParams& params, std::span<const Token> prompt,
               std::span<const Token> response) {
  if (response.empty()) return 0.0;
  const SequenceView view{prompt, response};
  TokenForward f = forward_tokens(PolicyGraph::bind(params, false),
                                  std::span<const SequenceView>(&view, 1));
  double s = 0.0;
  for (double e : f.entropy) s += e;
  return s / static_cast<double>(f.entropy.size());
}

nlohmann::json policy_to_json(const PolicyParams& params) {
  nlohmann::json tensors = nlohmann::json::object();
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    tensors[PolicyParams::kLayerNames[l]] = {{"shape", params.layers[l].shape.dims()},
                                             {"values", params.layers[l].values}};
  }
  return {{"format", "proxlab.policy"},
          {"format_version", 1},
          {"vocab_size", params.vocab_size},
          {"context_width", params.context_width},
          {"hidden", params.hidden},
          {"version", params.version},
          {"tensors", tensors}};
}

PolicyParams policy_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "proxlab.policy" || j.value("format_version", 0) != 1) {
    throw SchemaError("policy checkpoint: unrecognized format");
  }
  PolicyParams p = zero_policy(j.at("vocab_size").get<std::size_t>(),
                               j.at("context_width").get<std::size_t>(),
                               j.at("hidden").get<std::size_t>());
  p.version = j.at("version").get<std::int64_t>();
  const auto& tensors = j.at("tensors");
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& t = tensors.at(PolicyParams::kLayerNames[l]);
    Shape shape(t.at("shape").get<std::vector<std::size_t>>());
    if (!(shape == p.layers[l].shape)) {
      throw ShapeError(std::string("policy checkpoint: tensor ") + PolicyParams::kLayerNames[l] +
                       " has shape " + shape.to_string() + ", expected " +
                       p.layers[l].shape.to_string());
    }
    p.layers[l] = Tensor(std::move(shape), t.at("values").get<std::vector<double>>());
  }
  return p;
}

void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << policy_to_json(params).dump() << '\n';
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  return policy_from_json(nlohmann::json::parse(in));
}

}  // namespace proxlab

#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hacl/graph.hpp"
#include "hacl/worldgen.hpp"

namespace hacl::model {

struct Dims {
    int d = 32;             // model width
    int layers = 2;
    int heads = 2;
    int visual_tokens = 8;  // m
    int vocab = 0;          // set from the grammar vocab
    int context = 64;
    int head_dim() const { return d / heads; }
    bool operator==(const Dims&) const = default;
};

enum class Group : uint8_t { theta, alpha, beta };
const char* group_name(Group g);

struct GroupSet {
    bool theta = false;
    bool alpha = false;
    bool beta = false;
    bool has(Group g) const {
        switch (g) {
            case Group::theta: return theta;
            case Group::alpha: return alpha;
            case Group::beta: return beta;
        }
        return false;
    }
    static GroupSet none() { return {}; }
    static GroupSet all() { return {true, true, true}; }
    static GroupSet only(Group g) {
        GroupSet s;
        (g == Group::theta ? s.theta : g == Group::alpha ? s.alpha : s.beta) = true;
        return s;
    }
    bool operator==(const GroupSet&) const = default;
};

/// Parameter tree partitioned into theta (vision encoder), alpha (interface)
/// and beta (language model) with no sharing; entry creation order is the
/// checkpoint serialization order.
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Group group;
        diff::Tensor tensor;
    };

    int add(std::string name, Group group, diff::Tensor t);
    int index_of(const std::string& name) const;  // -1 if absent
    size_t count() const { return entries_.size(); }
    Entry& entry(int i) { return entries_.at(i); }
    const Entry& entry(int i) const { return entries_.at(i); }
    const std::vector<Entry>& entries() const { return entries_; }
    size_t total_numel() const;

    /// Round to float32 so the f32 checkpoint round-trips bitwise.
    static double quantize(double v) { return static_cast<double>(static_cast<float>(v)); }

  private:
    std::vector<Entry> entries_;
};

/// Leaves for every parameter in a graph; requires_grad follows the
/// trainable group set.
struct Binding {
    std::vector<diff::Var> vars;
    diff::Var operator[](int idx) const { return vars.at(idx); }
};

/// Embedding sequence with the EOS row appended last.
struct TokenSequenceWithEOS {
    diff::Var embeddings;  // (len x D)
    int eos_position = 0;  // == len - 1
};

enum class Modality : uint8_t { visual, textual };
enum class Provenance : uint8_t { image, ground_truth, hallucinated };

/// Pooled D-dimensional representation read from the EOS position.
struct GlobalRep {
    std::vector<double> vector;
    Modality modality = Modality::visual;
    Provenance provenance = Provenance::image;
};

class TinyMllm {
  public:
    /// Fresh deterministic initialization.
    TinyMllm(const Dims& dims, uint64_t init_seed);
    /// Adopt existing parameters (e.g. from a checkpoint).
    TinyMllm(const Dims& dims, ParamStore params);

    const Dims& dims() const { return dims_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    Binding bind(diff::Graph& g, const GroupSet& trainable = GroupSet::none()) const;

    /// Vision encoder output: one feature row per object, permutation
    /// equivariant (order of objects permutes rows and nothing else).
    diff::Var object_features(diff::Graph& g, const Binding& b,
                              const worldgen::Scene& scene) const;

    /// Interface output: m visual tokens in the LM width (no EOS).
    diff::Var visual_tokens(diff::Graph& g, const Binding& b,
                            const worldgen::Scene& scene) const;

    TokenSequenceWithEOS encode_image(diff::Graph& g, const Binding& b,
                                      const worldgen::Scene& scene) const;
    /// encode_image with the interface output already at hand (the trainer
    /// shares it between the pooling and generation pathways).
    TokenSequenceWithEOS encode_image_from(diff::Graph& g, const Binding& b,
                                           diff::Var visual) const;
    TokenSequenceWithEOS encode_text(diff::Graph& g, const Binding& b,
                                     std::span<const int> tokens) const;

    /// Full causal LM pass over an embedding sequence: adds positions, runs
    /// the blocks and the final layer norm, returns all hidden rows. A custom
    /// attention mask (0 = allowed, -inf = blocked) can replace the plain
    /// causal one; it must still be causal.
    diff::Var lm_hidden(diff::Graph& g, const Binding& b, diff::Var embeddings,
                        diff::Var mask = {}) const;

    /// Runs the causal LM over the sequence and returns the last layer's
    /// hidden state (after the final layer norm) at the EOS position.
    diff::Var pool_global(diff::Graph& g, const Binding& b,
                          const TokenSequenceWithEOS& seq) const;

    /// Causal vocab logits for each caption position given the visual
    /// prefix: input is [visual tokens, BOS, caption], output (len x V)
    /// where row j predicts caption[j].
    diff::Var lm_logits(diff::Graph& g, const Binding& b, const worldgen::Scene& scene,
                        std::span<const int> caption) const;
    diff::Var lm_logits_from(diff::Graph& g, const Binding& b, diff::Var visual,
                             std::span<const int> caption) const;

    /// Text-only LM logits, input [BOS, caption], output (len+1 x V);
    /// row j predicts caption[j], last row predicts EOS.
    diff::Var text_lm_logits(diff::Graph& g, const Binding& b,
                             std::span<const int> caption) const;

    // Plain-value forward passes (fresh graph, no gradients).
    std::vector<double> image_rep(const worldgen::Scene& scene) const;
    std::vector<double> text_rep(std::span<const int> tokens) const;

  private:
    diff::Var lm_head(diff::Graph& g, const Binding& b, diff::Var hidden,
                      std::span<const int> rows) const;

    Dims dims_;
    ParamStore params_;

    // cached entry indices
    struct Idx;
    int idx(const std::string& name) const;
};

struct CheckpointError : std::runtime_error {
    enum class Kind { io, bad_magic, bad_version, dim_mismatch, truncated };
    Kind kind;
    CheckpointError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

struct Checkpoint {
    Dims dims;
    ParamStore params;
};

/// Binary format: magic "HACL", u32 version, u32 dims[6], u32 entry count,
/// u64 per-group byte offsets, then float32 little-endian values in entry
/// order (theta block, alpha block, beta block).
void save_checkpoint(const ParamStore& params, const Dims& dims, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Builds the parameter tree for `dims` in checkpoint order.
ParamStore init_params(const Dims& dims, uint64_t seed);

/// Head count of the interface cross-attention (wider than the LM's).
int interface_heads(const Dims& dims);

/// Dims with vocab/width defaults bound to the grammar vocabulary.
Dims default_dims();

}  // namespace hacl::model

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hacl/model.hpp"
#include "hacl/objective.hpp"
#include "hacl/worldgen.hpp"

namespace hacl::train {

enum class OptimizerKind : uint8_t { sgd, adam };
const char* optimizer_kind_name(OptimizerKind k);
std::optional<OptimizerKind> optimizer_kind_from_name(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct Stage0Config {
    int steps = 1500;
    double lr = 1e-3;
    int batch = 32;
};

struct Stage1Config {
    int steps = 1500;
    double lr = 1e-3;
    int batch = 32;
    int queue_capacity = 512;
    objective::Mode mode = objective::Mode::hacl;
    model::GroupSet train_groups = model::GroupSet::only(model::Group::alpha);
};

struct TrainConfig {
    uint64_t seed = 1;
    model::Dims dims;
    double temperature = 0.07;
    Stage0Config stage0;
    Stage1Config stage1;
    OptimizerConfig optimizer;

    /// Throws std::invalid_argument on violations (alpha must always be in
    /// stage1.train_groups, positive temperature, ...).
    void validate() const;
};

struct RunRecord {
    std::string stage;  // "stage0" or "stage1"
    int step = 0;
    objective::Mode mode = objective::Mode::no_cl;
    double gen = 0.0;
    std::optional<double> t2i;  // absent in no_cl mode and in stage0
    std::optional<double> i2t;  // i2t_hacl in hacl mode
    double total = 0.0;
    double wall_ms = 0.0;  // informational; never serialized into metrics
};

using RecordSink = std::function<void(const RunRecord&)>;

/// Loss became non-finite; the run aborts loudly instead of clipping.
struct NumericAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct OptimizerState {
    int64_t t = 0;
    std::vector<diff::Tensor> m1;  // sized on first step
    std::vector<diff::Tensor> m2;
};

/// One update over the entries of `params` whose group is in `groups`.
/// grads aligns with the param entries; null pointers are treated as zero
/// gradients. Updated values are rounded to float32 so checkpoints
/// round-trip bitwise. Throws NumericAbort on non-finite gradients.
void optimizer_step(model::ParamStore& params, std::span<const diff::Tensor* const> grads,
                    OptimizerState& state, const OptimizerConfig& cfg, double lr,
                    const model::GroupSet& groups);

struct Stage0Result {
    double holdout_ce = 0.0;  // mean next-token CE on eval captions
    int steps_run = 0;
};

/// Caption-only language modeling of beta on the train split's ground-truth
/// captions; theta and alpha are untouched.
Stage0Result run_stage0(const TrainConfig& cfg, const worldgen::Dataset& ds,
                        model::TinyMllm& mllm, const RecordSink& sink = {});

struct Stage1Result {
    int steps_run = 0;
    double first_window_mean = 0.0;  // mean total loss over the first 50 steps
    double last_window_mean = 0.0;   // mean total loss over the last 50 steps
};

/// Staged alignment training with the configured mode and trainable groups.
/// The negative queue receives each step's detached global representations
/// after the step's loss is computed.
Stage1Result run_stage1(const TrainConfig& cfg, const worldgen::Dataset& ds,
                        model::TinyMllm& mllm, const RecordSink& sink = {});

/// Mean next-token cross-entropy of the text-only LM over captions.
double caption_holdout_ce(const model::TinyMllm& mllm,
                          std::span<const worldgen::CaptionRecord> captions);

}  // namespace hacl::train

#include "hacl/trainer.hpp"

#include <array>
#include <chrono>
#include <cmath>

#include "hacl/rng.hpp"

namespace hacl::train {

using diff::Graph;
using diff::Tensor;
using diff::Var;

const char* optimizer_kind_name(OptimizerKind k) {
    return k == OptimizerKind::sgd ? "sgd" : "adam";
}

std::optional<OptimizerKind> optimizer_kind_from_name(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    return std::nullopt;
}

void TrainConfig::validate() const {
    if (!stage1.train_groups.alpha)
        throw std::invalid_argument("TrainConfig: stage1.train_groups must contain alpha");
    if (temperature <= 0.0) throw std::invalid_argument("TrainConfig: temperature must be > 0");
    if (stage0.steps < 0 || stage1.steps < 0)
        throw std::invalid_argument("TrainConfig: negative step count");
    if (stage0.batch < 1 || stage1.batch < 1)
        throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    if (stage1.queue_capacity < 0)
        throw std::invalid_argument("TrainConfig: negative queue capacity");
    if (dims.vocab <= 0) throw std::invalid_argument("TrainConfig: dims.vocab unset");
}

void optimizer_step(model::ParamStore& params, std::span<const Tensor* const> grads,
                    OptimizerState& state, const OptimizerConfig& cfg, double lr,
                    const model::GroupSet& groups) {
    if (grads.size() != params.count())
        throw std::invalid_argument("optimizer_step: gradient list does not align with params");
    if (state.m1.empty() && cfg.kind == OptimizerKind::adam) {
        state.m1.resize(params.count());
        state.m2.resize(params.count());
        for (size_t i = 0; i < params.count(); ++i) {
            state.m1[i] = Tensor(params.entry(static_cast<int>(i)).tensor.shape);
            state.m2[i] = Tensor(params.entry(static_cast<int>(i)).tensor.shape);
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

    for (size_t i = 0; i < params.count(); ++i) {
        model::ParamStore::Entry& e = params.entry(static_cast<int>(i));
        if (!groups.has(e.group)) continue;
        const Tensor* g = grads[i];
        if (!g) continue;
        if (!g->same_shape(e.tensor))
            throw std::invalid_argument("optimizer_step: gradient shape mismatch for " + e.name);
        for (double gv : g->data)
            if (!std::isfinite(gv))
                throw NumericAbort("optimizer_step: non-finite gradient in " + e.name);
        if (cfg.kind == OptimizerKind::sgd) {
            for (size_t j = 0; j < e.tensor.data.size(); ++j)
                e.tensor.data[j] =
                    model::ParamStore::quantize(e.tensor.data[j] - lr * g->data[j]);
        } else {
            Tensor& m1 = state.m1[i];
            Tensor& m2 = state.m2[i];
            for (size_t j = 0; j < e.tensor.data.size(); ++j) {
                const double gv = g->data[j];
                m1.data[j] = cfg.beta1 * m1.data[j] + (1.0 - cfg.beta1) * gv;
                m2.data[j] = cfg.beta2 * m2.data[j] + (1.0 - cfg.beta2) * gv * gv;
                const double mhat = m1.data[j] / bc1;
                const double vhat = m2.data[j] / bc2;
                e.tensor.data[j] = model::ParamStore::quantize(
                    e.tensor.data[j] - lr * mhat / (std::sqrt(vhat) + cfg.eps));
            }
        }
    }
}

namespace {

struct SceneCaptions {
    const worldgen::Scene* scene = nullptr;
    const worldgen::CaptionRecord* gt = nullptr;
    std::vector<const worldgen::CaptionRecord*> hallucinated;
};

// per-scene caption lookup for the train split
std::vector<SceneCaptions> index_train_split(const worldgen::Dataset& ds) {
    std::vector<SceneCaptions> out(ds.train_scenes.size());
    for (size_t i = 0; i < ds.train_scenes.size(); ++i) out[i].scene = &ds.train_scenes[i];
    for (const worldgen::CaptionRecord& c : ds.train_captions) {
        if (c.scene_id < 0 || c.scene_id >= static_cast<int64_t>(out.size()))
            throw std::invalid_argument("train captions reference unknown scene " +
                                        std::to_string(c.scene_id));
        if (c.kind == worldgen::CaptionKind::ground_truth)
            out[c.scene_id].gt = &c;
        else
            out[c.scene_id].hallucinated.push_back(&c);
    }
    for (const SceneCaptions& sc : out)
        if (!sc.gt) throw std::invalid_argument("train scene missing its ground-truth caption");
    return out;
}

std::vector<const Tensor*> collect_grads(Graph& g, const model::Binding& binding,
                                         const model::ParamStore& params,
                                         const model::GroupSet& groups) {
    std::vector<const Tensor*> grads(params.count(), nullptr);
    for (size_t i = 0; i < params.count(); ++i)
        if (groups.has(params.entry(static_cast<int>(i)).group))
            grads[i] = &g.grad(binding.vars[i]);
    return grads;
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

Var batch_mean(Graph& g, const std::vector<Var>& scalars) {
    if (scalars.size() == 1) return scalars[0];
    Var acc = scalars[0];
    for (size_t i = 1; i < scalars.size(); ++i) acc = g.add(acc, scalars[i]);
    return g.scale(acc, 1.0 / static_cast<double>(scalars.size()));
}

std::vector<int> gen_targets(const worldgen::CaptionRecord& cap) {
    std::vector<int> t = cap.tokens;
    t.push_back(worldgen::kEosId);
    return t;
}

}  // namespace

double caption_holdout_ce(const model::TinyMllm& mllm,
                          std::span<const worldgen::CaptionRecord> captions) {
    double total = 0.0;
    size_t n = 0;
    for (const worldgen::CaptionRecord& cap : captions) {
        if (cap.kind != worldgen::CaptionKind::ground_truth) continue;
        Graph g;
        model::Binding b = mllm.bind(g);
        Var logits = mllm.text_lm_logits(g, b, cap.tokens);
        Var loss = objective::loss_gen(g, logits, gen_targets(cap));
        total += g.value(loss).data[0];
        ++n;
    }
    if (n == 0) throw std::invalid_argument("caption_holdout_ce: no ground-truth captions");
    return total / static_cast<double>(n);
}

Stage0Result run_stage0(const TrainConfig& cfg, const worldgen::Dataset& ds,
                        model::TinyMllm& mllm, const RecordSink& sink) {
    cfg.validate();
    std::vector<const worldgen::CaptionRecord*> gt;
    for (const worldgen::CaptionRecord& c : ds.train_captions)
        if (c.kind == worldgen::CaptionKind::ground_truth) gt.push_back(&c);
    if (gt.empty()) throw std::invalid_argument("run_stage0: dataset has no captions");

    Rng rng = Rng::keyed(cfg.seed, 0x57a6e0ULL);
    OptimizerState opt_state;
    const model::GroupSet beta_only = model::GroupSet::only(model::Group::beta);

    for (int step = 0; step < cfg.stage0.steps; ++step) {
        const double t0 = now_ms();
        Graph g;
        model::Binding b = mllm.bind(g, beta_only);
        std::vector<Var> losses;
        losses.reserve(cfg.stage0.batch);
        for (int i = 0; i < cfg.stage0.batch; ++i) {
            const worldgen::CaptionRecord& cap = *gt[rng.next_below(gt.size())];
            Var logits = mllm.text_lm_logits(g, b, cap.tokens);
            losses.push_back(objective::loss_gen(g, logits, gen_targets(cap)));
        }
        Var loss = batch_mean(g, losses);
        const double loss_v = g.value(loss).data[0];
        if (!std::isfinite(loss_v))
            throw NumericAbort("run_stage0: loss " + std::to_string(loss_v) + " at step " +
                               std::to_string(step));
        g.backward(loss);
        const auto grads = collect_grads(g, b, mllm.params(), beta_only);
        optimizer_step(mllm.params(), grads, opt_state, cfg.optimizer, cfg.stage0.lr, beta_only);
        if (sink) {
            RunRecord rec;
            rec.stage = "stage0";
            rec.step = step;
            rec.gen = loss_v;
            rec.total = loss_v;
            rec.wall_ms = now_ms() - t0;
            sink(rec);
        }
    }

    Stage0Result res;
    res.steps_run = cfg.stage0.steps;
    res.holdout_ce = caption_holdout_ce(mllm, ds.eval_captions);
    return res;
}

Stage1Result run_stage1(const TrainConfig& cfg, const worldgen::Dataset& ds,
                        model::TinyMllm& mllm, const RecordSink& sink) {
    cfg.validate();
    const auto scenes = index_train_split(ds);
    const objective::Mode mode = cfg.stage1.mode;
    const bool needs_cl = mode != objective::Mode::no_cl;
    const bool needs_hall = mode == objective::Mode::hacl;
    if (needs_hall)
        for (const SceneCaptions& sc : scenes)
            if (sc.hallucinated.empty())
                throw std::invalid_argument(
                    "run_stage1: hacl mode needs hallucinated captions for every train scene");

    Rng rng = Rng::keyed(cfg.seed, 0x57a6e1ULL);
    OptimizerState opt_state;
    objective::NegativeQueue queue(cfg.stage1.queue_capacity);
    objective::SimilarityConfig sim{cfg.temperature};
    const model::GroupSet& groups = cfg.stage1.train_groups;

    Stage1Result res;
    res.steps_run = cfg.stage1.steps;
    const int window = 50;
    double first_sum = 0.0, last_sum = 0.0;
    int first_n = 0;
    std::vector<double> recent;

    for (int step = 0; step < cfg.stage1.steps; ++step) {
        const double t0 = now_ms();
        Graph g;
        model::Binding b = mllm.bind(g, groups);

        std::vector<Var> gen_losses;
        objective::ContrastiveBatch batch;
        gen_losses.reserve(cfg.stage1.batch);
        for (int i = 0; i < cfg.stage1.batch; ++i) {
            const SceneCaptions& sc = scenes[rng.next_below(scenes.size())];
            Var vt = mllm.visual_tokens(g, b, *sc.scene);
            Var logits = mllm.lm_logits_from(g, b, vt, sc.gt->tokens);
            gen_losses.push_back(objective::loss_gen(g, logits, sc.gt->tokens));
            if (needs_cl) {
                batch.image_reps.push_back(
                    mllm.pool_global(g, b, mllm.encode_image_from(g, b, vt)));
                batch.text_reps.push_back(
                    mllm.pool_global(g, b, mllm.encode_text(g, b, sc.gt->tokens)));
                if (needs_hall) {
                    const worldgen::CaptionRecord& hall =
                        *sc.hallucinated[rng.next_below(sc.hallucinated.size())];
                    batch.hallucinated_reps.push_back(
                        mllm.pool_global(g, b, mllm.encode_text(g, b, hall.tokens)));
                }
            }
        }
        Var gen_loss = batch_mean(g, gen_losses);
        const objective::Stage1Losses losses =
            objective::stage1_objective(g, gen_loss, batch, queue, sim, mode);
        const double total_v = g.value(losses.total).data[0];
        if (!std::isfinite(total_v))
            throw NumericAbort("run_stage1: loss " + std::to_string(total_v) + " at step " +
                               std::to_string(step));

        g.backward(losses.total);
        const auto grads = collect_grads(g, b, mllm.params(), groups);
        optimizer_step(mllm.params(), grads, opt_state, cfg.optimizer, cfg.stage1.lr, groups);

        if (needs_cl) {
            // this step's detached reps become negatives for later steps
            for (Var v : batch.image_reps) queue.push_image(g.value(v).data);
            for (Var v : batch.text_reps) queue.push_text(g.value(v).data);
        }

        if (step < window) {
            first_sum += total_v;
            ++first_n;
        }
        recent.push_back(total_v);
        if (static_cast<int>(recent.size()) > window) recent.erase(recent.begin());

        if (sink) {
            RunRecord rec;
            rec.stage = "stage1";
            rec.step = step;
            rec.mode = mode;
            rec.gen = g.value(losses.gen).data[0];
            if (needs_cl) {
                rec.t2i = g.value(losses.t2i).data[0];
                rec.i2t = g.value(losses.i2t).data[0];
            }
            rec.total = total_v;
            rec.wall_ms = now_ms() - t0;
            sink(rec);
        }
    }

    if (first_n > 0) res.first_window_mean = first_sum / first_n;
    if (!recent.empty()) {
        for (double v : recent) last_sum += v;
        res.last_window_mean = last_sum / static_cast<double>(recent.size());
    }
    return res;
}

}  // namespace hacl::train

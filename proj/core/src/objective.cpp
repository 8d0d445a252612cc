#include "hacl/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace hacl::objective {

using diff::Graph;
using diff::Tensor;
using diff::Var;

double similarity(std::span<const double> a, std::span<const double> b,
                  const SimilarityConfig& cfg) {
    if (cfg.temperature <= 0.0)
        throw std::invalid_argument("similarity: temperature must be positive");
    if (a.size() != b.size())
        throw std::invalid_argument("similarity: dimension mismatch " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    double na = 0.0, nb = 0.0, dot = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] * a[i];
        nb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("similarity: zero vector has no cosine");
    return std::exp(dot / (std::sqrt(na) * std::sqrt(nb)) / cfg.temperature);
}

NegativeQueue::NegativeQueue(int capacity) : capacity_(capacity) {
    if (capacity < 0) throw std::invalid_argument("NegativeQueue: negative capacity");
}

void NegativeQueue::push(std::deque<std::vector<double>>& q, std::vector<double> rep) {
    if (capacity_ == 0) return;  // capacity 0 disables the queue
    q.push_back(std::move(rep));
    while (static_cast<int>(q.size()) > capacity_) q.pop_front();
}

namespace {

void check_batch(const ContrastiveBatch& batch, bool need_hallucinated) {
    if (batch.size() < 1) throw std::invalid_argument("contrastive loss: empty batch");
    if (batch.text_reps.size() != batch.image_reps.size())
        throw std::invalid_argument("contrastive loss: image/text count mismatch");
    if (need_hallucinated && batch.hallucinated_reps.size() != batch.image_reps.size())
        throw std::invalid_argument(
            "loss_i2t_hacl: hallucinated rep missing for some batch index");
}

Var unit_rows(Graph& g, std::span<const Var> reps) {
    return g.l2norm_rows(g.concat_rows(reps));
}

// queue entries normalized outside the graph; they are constants
Tensor unit_queue_matrix(const std::deque<std::vector<double>>& queue, size_t dim) {
    Tensor t({static_cast<int>(queue.size()), static_cast<int>(dim)});
    int r = 0;
    for (const std::vector<double>& q : queue) {
        if (q.size() != dim)
            throw std::invalid_argument("queue entry dimension mismatch: " +
                                        std::to_string(q.size()) + " vs " + std::to_string(dim));
        double n = 0.0;
        for (double v : q) n += v * v;
        if (n == 0.0) throw std::invalid_argument("queue entry is a zero vector");
        const double inv = 1.0 / std::sqrt(n);
        for (size_t j = 0; j < dim; ++j) t.at(r, static_cast<int>(j)) = q[j] * inv;
        ++r;
    }
    return t;
}

}  // namespace

namespace detail {

Var infonce(Graph& g, std::span<const Var> anchors, std::span<const Var> positives,
            const std::deque<std::vector<double>>& queue, double temperature, Var extra_col) {
    if (temperature <= 0.0)
        throw std::invalid_argument("infonce: temperature must be positive");
    const int b = static_cast<int>(anchors.size());
    Var ua = unit_rows(g, anchors);
    Var up = unit_rows(g, positives);
    Var candidates = up;
    if (!queue.empty()) {
        Var uq = g.constant(unit_queue_matrix(queue, g.value(ua).shape[1]));
        const std::array<Var, 2> parts = {up, uq};
        candidates = g.concat_rows(parts);
    }
    Var logits = g.scale(g.matmul(ua, g.transpose(candidates)), 1.0 / temperature);
    std::vector<int> labels(b);
    for (int i = 0; i < b; ++i) labels[i] = i;
    return g.cross_entropy(logits, labels, extra_col);
}

}  // namespace detail

Var loss_t2i(Graph& g, const ContrastiveBatch& batch, const NegativeQueue& queue,
             const SimilarityConfig& cfg) {
    check_batch(batch, false);
    return detail::infonce(g, batch.text_reps, batch.image_reps, queue.image_view(),
                           cfg.temperature);
}

Var loss_i2t(Graph& g, const ContrastiveBatch& batch, const NegativeQueue& queue,
             const SimilarityConfig& cfg) {
    check_batch(batch, false);
    return detail::infonce(g, batch.image_reps, batch.text_reps, queue.text_view(),
                           cfg.temperature);
}

Var loss_i2t_hacl(Graph& g, const ContrastiveBatch& batch, const NegativeQueue& queue,
                  const SimilarityConfig& cfg) {
    check_batch(batch, true);
    const int b = batch.size();
    Var ua = unit_rows(g, batch.image_reps);
    Var uh = unit_rows(g, batch.hallucinated_reps);
    // diagonal of the image x own-hallucination cosine matrix, as a (Bx1)
    // column of extra denominator logits
    Var cos_vh = g.matmul(ua, g.transpose(uh));
    Tensor eye({b, b});
    for (int i = 0; i < b; ++i) eye.at(i, i) = 1.0;
    Var masked = g.mul(cos_vh, g.constant(std::move(eye)));
    Var diag = g.matmul(masked, g.constant(Tensor::full({b, 1}, 1.0)));
    Var extra = g.scale(diag, 1.0 / cfg.temperature);
    return detail::infonce(g, batch.image_reps, batch.text_reps, queue.text_view(),
                           cfg.temperature, extra);
}

Var loss_gen(Graph& g, Var logits, std::span<const int> targets) {
    const Tensor& z = g.value(logits);
    if (z.rank() != 2 || z.shape[0] != static_cast<int>(targets.size()))
        throw std::invalid_argument("loss_gen: logits rows " + std::to_string(z.rows()) +
                                    " do not match " + std::to_string(targets.size()) +
                                    " targets");
    return g.cross_entropy(logits, targets);
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::no_cl: return "no_cl";
        case Mode::cl: return "cl";
        case Mode::hacl: return "hacl";
    }
    return "?";
}

std::optional<Mode> mode_from_name(const std::string& name) {
    if (name == "no_cl") return Mode::no_cl;
    if (name == "cl") return Mode::cl;
    if (name == "hacl") return Mode::hacl;
    return std::nullopt;
}

Stage1Losses stage1_objective(Graph& g, Var gen_loss, const ContrastiveBatch& batch,
                              const NegativeQueue& queue, const SimilarityConfig& cfg,
                              Mode mode) {
    Stage1Losses out;
    out.gen = gen_loss;
    if (mode == Mode::no_cl) {
        out.total = gen_loss;
        return out;
    }
    out.t2i = loss_t2i(g, batch, queue, cfg);
    out.i2t = mode == Mode::hacl ? loss_i2t_hacl(g, batch, queue, cfg)
                                 : loss_i2t(g, batch, queue, cfg);
    out.total = g.add(gen_loss, g.scale(g.add(out.i2t, out.t2i), 0.5));
    return out;
}

double combine_stage1(double gen, double i2t, double t2i, Mode mode) {
    if (mode == Mode::no_cl) return gen;
    return gen + (i2t + t2i) / 2.0;
}

}  // namespace hacl::objective

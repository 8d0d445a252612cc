#pragma once

#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hacl/graph.hpp"

namespace hacl::objective {

struct SimilarityConfig {
    double temperature = 0.07;
};

/// exp(cos(a, b) / temperature). Symmetric; rejects zero vectors.
double similarity(std::span<const double> a, std::span<const double> b,
                  const SimilarityConfig& cfg);

/// FIFO store of detached global representations, one queue per modality.
/// Entries are plain values, so no gradient can reach them.
class NegativeQueue {
  public:
    explicit NegativeQueue(int capacity);

    int capacity() const { return capacity_; }
    void push_image(std::vector<double> rep) { push(images_, std::move(rep)); }
    void push_text(std::vector<double> rep) { push(texts_, std::move(rep)); }

    const std::deque<std::vector<double>>& image_view() const { return images_; }
    const std::deque<std::vector<double>>& text_view() const { return texts_; }
    size_t image_size() const { return images_.size(); }
    size_t text_size() const { return texts_.size(); }

  private:
    void push(std::deque<std::vector<double>>& q, std::vector<double> rep);
    int capacity_;
    std::deque<std::vector<double>> images_;
    std::deque<std::vector<double>> texts_;
};

/// Index i pairs image_reps[i] with text_reps[i] (and hallucinated_reps[i]
/// when present). Vars are rank-1 pooled representations.
struct ContrastiveBatch {
    std::vector<diff::Var> image_reps;
    std::vector<diff::Var> text_reps;
    std::vector<diff::Var> hallucinated_reps;
    int size() const { return static_cast<int>(image_reps.size()); }
};

namespace detail {
/// Shared InfoNCE body: anchors vs (positives + queue constants), one
/// positive per row, optional per-row extra denominator logit column.
/// A -inf extra logit contributes exactly nothing, which is what "hard
/// negative similarity zeroed" means for an exp kernel.
diff::Var infonce(diff::Graph& g, std::span<const diff::Var> anchors,
                  std::span<const diff::Var> positives,
                  const std::deque<std::vector<double>>& queue, double temperature,
                  diff::Var extra_col = {});
}  // namespace detail

diff::Var loss_t2i(diff::Graph& g, const ContrastiveBatch& batch, const NegativeQueue& queue,
                   const SimilarityConfig& cfg);
diff::Var loss_i2t(diff::Graph& g, const ContrastiveBatch& batch, const NegativeQueue& queue,
                   const SimilarityConfig& cfg);
/// Image-to-text loss with each image's own hallucinated caption as one
/// extra denominator term. The text-to-image direction is left unchanged.
diff::Var loss_i2t_hacl(diff::Graph& g, const ContrastiveBatch& batch,
                        const NegativeQueue& queue, const SimilarityConfig& cfg);

/// Mean next-token cross-entropy; logits row count must equal target count.
diff::Var loss_gen(diff::Graph& g, diff::Var logits, std::span<const int> targets);

enum class Mode { no_cl, cl, hacl };
const char* mode_name(Mode m);
std::optional<Mode> mode_from_name(const std::string& name);

/// Stage-1 combination: no_cl -> gen; cl -> gen + (i2t + t2i)/2;
/// hacl -> gen + (i2t_hacl + t2i)/2. In no_cl mode the returned Var is
/// the gen loss node itself.
struct Stage1Losses {
    diff::Var total;
    diff::Var gen;
    diff::Var t2i;  // invalid in no_cl mode
    diff::Var i2t;  // invalid in no_cl mode; hacl variant in hacl mode
};
Stage1Losses stage1_objective(diff::Graph& g, diff::Var gen_loss, const ContrastiveBatch& batch,
                              const NegativeQueue& queue, const SimilarityConfig& cfg, Mode mode);

/// Value-level form of the same combination.
double combine_stage1(double gen, double i2t, double t2i, Mode mode);

}  // namespace hacl::objective

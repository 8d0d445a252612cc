#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hacl/model.hpp"
#include "hacl/worldgen.hpp"

namespace hacl::evalkit {

enum class Label : uint8_t { image, gt_text, hallucinated_text };
const char* label_name(Label l);

/// Labeled collection of pooled representations keyed by scene id.
struct RepSet {
    struct Entry {
        int64_t scene_id = 0;
        Label label = Label::image;
        std::vector<double> vec;
    };
    std::vector<Entry> entries;

    std::vector<const Entry*> with_label(Label l) const;
    const Entry* find(int64_t scene_id, Label l) const;
};

/// Representations for every scene in the span: image, ground-truth text,
/// and (when captions carry them) hallucinated text.
RepSet build_repset(const model::TinyMllm& mllm, std::span<const worldgen::Scene> scenes,
                    std::span<const worldgen::CaptionRecord> captions);

/// Euclidean distance between the centroid of unit-normalized image reps and
/// the centroid of unit-normalized ground-truth text reps.
double modality_gap(const RepSet& reps);

/// Mean over scenes of cos(image, gt_text) - cos(image, hallucinated_text).
/// Positive when hallucinations sit further from the image than the truth.
double hallucination_margin(const RepSet& reps);

/// Fraction of images whose paired gt_text is among the k most cosine-similar
/// texts. Ties break by lower scene index, deterministically.
double retrieval_at_k(const RepSet& reps, int k);

struct ProbeItem {
    int64_t scene_id = 0;
    int question_object = 0;  // category index
    bool label_yes = false;   // category present in the scene
};

/// Balanced object-existence probes: even scenes ask about a present object,
/// odd scenes about an absent one.
std::vector<ProbeItem> make_probe_items(std::span<const worldgen::Scene> scenes, uint64_t seed);

struct PopeMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double yes_ratio = 0.0;
    int n = 0;
    double threshold = 0.0;
};

/// Answers yes iff cos(image rep, rep of "a picture with <object>") clears a
/// threshold fitted on the calibration items (disjoint from the probe items).
PopeMetrics pope_probe(const model::TinyMllm& mllm,
                       std::span<const worldgen::Scene> scenes,
                       std::span<const ProbeItem> calibration,
                       std::span<const ProbeItem> probe);

/// Same metrics for a fixed yes/no answering rule; used to sanity-check the
/// harness against oracle and degenerate answerers.
PopeMetrics score_answers(std::span<const ProbeItem> items, const std::vector<bool>& answers);

struct Projection {
    std::vector<std::array<double, 2>> coords;  // aligned with repset entries
    std::array<double, 2> explained_variance{0.0, 0.0};
};

/// Mean-centered projection onto the top-2 principal components, deterministic
/// up to a fixed sign convention. An all-identical repset projects to zeros
/// with zero explained variance.
Projection pca_project(const RepSet& reps);

/// CSV with header scene_id,label,x,y — one row per repset entry.
void write_projection_csv(const RepSet& reps, const Projection& proj, const std::string& path);

/// Tokens of the probe phrase "a picture with <category>".
std::vector<int> probe_tokens(int category);

}  // namespace hacl::evalkit

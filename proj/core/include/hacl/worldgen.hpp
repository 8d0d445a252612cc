#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hacl::worldgen {

// Closed grammar over a fixed word list. Reserved ids are PAD=0, BOS=1, EOS=2.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;

int category_count();  // 48
int color_count();     // 12
inline constexpr int kMinCount = 1;
inline constexpr int kMaxCount = 4;

enum class Position : uint8_t { left, right, top, bottom, center };
inline constexpr int kPositionCount = 5;

const std::string& category_name(int category, bool plural);
const std::string& color_name(int color);
const std::string& position_phrase(Position p);  // "on the left", ...
const char* position_key(Position p);            // "left", ... (file format)
std::optional<Position> position_from_key(const std::string& key);
std::optional<int> category_from_name(const std::string& name);  // singular form
std::optional<int> color_from_name(const std::string& name);

/// Bijective token <-> id table generated from the grammar word lists.
/// Position phrases are single multi-word tokens.
class Vocab {
  public:
    static const Vocab& instance();

    int size() const { return static_cast<int>(tokens_.size()); }
    const std::string& token(int id) const;
    int id(const std::string& token) const;  // throws on unknown token
    bool contains(const std::string& token) const;

    int count_id(int count) const;                    // 1..4
    int color_id(int color) const;
    int noun_id(int category, bool plural) const;
    int position_id(Position p) const;
    int and_id() const { return and_id_; }
    int a_id() const { return a_id_; }
    int picture_id() const { return picture_id_; }
    int with_id() const { return with_id_; }

    std::string render_text(std::span<const int> token_ids) const;

  private:
    Vocab();
    std::vector<std::string> tokens_;
    std::vector<int> token_index_;  // sorted lookup handled via map in impl
    int counts_base_ = 0, colors_base_ = 0, nouns_base_ = 0, positions_base_ = 0;
    int and_id_ = 0, a_id_ = 0, picture_id_ = 0, with_id_ = 0;
};

struct SceneObject {
    int category = 0;
    int color = 0;
    int count = 1;
    Position position = Position::left;
    bool operator==(const SceneObject&) const = default;
};

struct Scene {
    int64_t scene_id = 0;
    uint64_t seed = 0;
    std::vector<SceneObject> objects;
    bool has_category(int category) const;
    const SceneObject* find_category(int category) const;
    bool operator==(const Scene&) const = default;
};

enum class Perturbation : uint8_t {
    object_insert,
    object_swap,
    count_change,
    attribute_swap,
    position_change,
};
inline constexpr int kPerturbationCount = 5;
const char* perturbation_name(Perturbation p);
std::optional<Perturbation> perturbation_from_name(const std::string& name);

enum class CaptionKind : uint8_t { ground_truth, hallucinated };

struct CaptionRecord {
    int64_t scene_id = 0;
    CaptionKind kind = CaptionKind::ground_truth;
    std::optional<Perturbation> perturbation;
    std::vector<int> tokens;
    std::string text;
};

/// Deterministic in (seed, scene_id, max_objects): 1..max_objects objects,
/// categories unique within the scene.
Scene sample_scene(uint64_t seed, int64_t scene_id, int max_objects = 4);

struct CaptionTooLong : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Grammar realization mentioning every object with count, color and
/// position. Throws CaptionTooLong past max_caption_len.
CaptionRecord render_caption(const Scene& scene, int max_caption_len = 24);

/// Typed hallucination of the ground-truth caption. Returns nullopt when the
/// perturbation cannot be applied (no alternative value, or the result would
/// exceed max_caption_len); the caller picks another type.
std::optional<CaptionRecord> perturb_caption(const Scene& scene, const CaptionRecord& gt,
                                             Perturbation type, uint64_t seed,
                                             int max_caption_len = 24);

struct ParsedObject {
    int category = 0;
    std::optional<int> color;
    std::optional<int> count;
    std::optional<Position> position;
};

/// Token-level parse. nullopt on any deviation from the grammar, including
/// count/noun number disagreement.
std::optional<std::vector<ParsedObject>> parse_caption(std::span<const int> tokens);

struct ConsistencyResult {
    enum class Status { consistent, inconsistent, parse_failure };
    Status status = Status::consistent;
    std::string reason;
    bool consistent() const { return status == Status::consistent; }
};

/// Consistent iff every asserted (category, color, count, position) tuple
/// matches the scene and no absent object is asserted. Mentioning a subset
/// of the scene's objects is still consistent.
ConsistencyResult check_consistency(const Scene& scene, std::span<const int> tokens);

struct DatasetConfig {
    uint64_t seed = 7;
    int n_train = 1000;
    int n_eval = 200;
    int hallucinated_per_scene = 1;  // k
    int max_caption_len = 24;
    int max_objects = 4;
    bool operator==(const DatasetConfig&) const = default;
};

struct Dataset {
    DatasetConfig config;
    std::vector<Scene> train_scenes;
    std::vector<Scene> eval_scenes;
    std::vector<CaptionRecord> train_captions;  // per scene: gt then k hallucinated
    std::vector<CaptionRecord> eval_captions;

    const Scene* find_scene(int64_t scene_id) const;
    bool is_eval_id(int64_t scene_id) const;
};

/// Pure function of the config. Train ids are [0, n_train), eval ids
/// [n_train, n_train + n_eval). Perturbation types are assigned round-robin
/// per split.
Dataset build_dataset(const DatasetConfig& cfg);

struct DatasetFiles {
    std::string scenes_path;
    std::string captions_path;
    std::string manifest_path;
    std::string scenes_sha256;
    std::string captions_sha256;
    std::string dataset_sha256;  // hash of the two file hashes
};

/// Writes scenes.jsonl, captions.jsonl and manifest.json into dir.
/// The manifest is deterministic (no timestamps) so rebuilds are
/// byte-identical.
DatasetFiles write_dataset(const Dataset& ds, const std::string& dir);

struct DatasetLoadError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Reads a dataset directory, verifying file checksums against the manifest.
Dataset load_dataset(const std::string& dir);

/// Combined content hash recorded in the manifest at dir (throws if absent).
std::string dataset_checksum(const std::string& dir);

}  // namespace hacl::worldgen

#include "hacl/worldgen.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hacl/rng.hpp"
#include "hacl/sha256.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace hacl::worldgen {

namespace {

const std::vector<std::pair<std::string, std::string>>& categories() {
    static const std::vector<std::pair<std::string, std::string>> kCategories = {
        {"apple", "apples"},   {"ball", "balls"},     {"balloon", "balloons"},
        {"banana", "bananas"}, {"bell", "bells"},     {"bird", "birds"},
        {"boat", "boats"},     {"book", "books"},     {"bottle", "bottles"},
        {"bowl", "bowls"},     {"box", "boxes"},      {"brush", "brushes"},
        {"bus", "buses"},      {"cake", "cakes"},     {"candle", "candles"},
        {"car", "cars"},       {"cat", "cats"},       {"chair", "chairs"},
        {"clock", "clocks"},   {"coin", "coins"},     {"cup", "cups"},
        {"dog", "dogs"},       {"door", "doors"},     {"drum", "drums"},
        {"fan", "fans"},       {"flag", "flags"},     {"flower", "flowers"},
        {"fork", "forks"},     {"glove", "gloves"},   {"hat", "hats"},
        {"horse", "horses"},   {"house", "houses"},   {"kettle", "kettles"},
        {"key", "keys"},       {"kite", "kites"},     {"lamp", "lamps"},
        {"leaf", "leaves"},    {"mug", "mugs"},       {"pen", "pens"},
        {"phone", "phones"},   {"plate", "plates"},   {"ring", "rings"},
        {"shoe", "shoes"},     {"sock", "socks"},     {"spoon", "spoons"},
        {"star", "stars"},     {"tree", "trees"},     {"truck", "trucks"},
    };
    return kCategories;
}

const std::vector<std::string>& colors() {
    static const std::vector<std::string> kColors = {
        "red",   "blue",  "green", "yellow", "purple", "orange",
        "black", "white", "pink",  "brown",  "gray",   "cyan",
    };
    return kColors;
}

const std::vector<std::string>& count_words() {
    static const std::vector<std::string> kCounts = {"one", "two", "three", "four"};
    return kCounts;
}

const std::vector<std::string>& position_phrases() {
    static const std::vector<std::string> kPositions = {
        "on the left", "on the right", "at the top", "at the bottom", "in the center",
    };
    return kPositions;
}

const char* kPositionKeys[kPositionCount] = {"left", "right", "top", "bottom", "center"};

// A caption is a sequence of phrases; ground truth always uses the full
// form, hallucinations may use the short existential form "a <noun>".
struct Phrase {
    int category = 0;
    int color = 0;
    int count = 1;
    Position position = Position::left;
    bool short_form = false;
};

std::vector<int> phrases_to_tokens(const std::vector<Phrase>& phrases) {
    const Vocab& v = Vocab::instance();
    std::vector<int> out;
    for (size_t i = 0; i < phrases.size(); ++i) {
        if (i) out.push_back(v.and_id());
        const Phrase& p = phrases[i];
        if (p.short_form) {
            out.push_back(v.a_id());
            out.push_back(v.noun_id(p.category, false));
        } else {
            out.push_back(v.count_id(p.count));
            out.push_back(v.color_id(p.color));
            out.push_back(v.noun_id(p.category, p.count > 1));
            out.push_back(v.position_id(p.position));
        }
    }
    return out;
}

std::vector<Phrase> scene_phrases(const Scene& scene) {
    std::vector<Phrase> out;
    out.reserve(scene.objects.size());
    for (const SceneObject& o : scene.objects)
        out.push_back({o.category, o.color, o.count, o.position, false});
    return out;
}

CaptionRecord make_record(const Scene& scene, std::vector<Phrase> phrases, CaptionKind kind,
                          std::optional<Perturbation> p) {
    CaptionRecord rec;
    rec.scene_id = scene.scene_id;
    rec.kind = kind;
    rec.perturbation = p;
    rec.tokens = phrases_to_tokens(phrases);
    rec.text = Vocab::instance().render_text(rec.tokens);
    return rec;
}

}  // namespace

int category_count() { return static_cast<int>(categories().size()); }
int color_count() { return static_cast<int>(colors().size()); }

const std::string& category_name(int category, bool plural) {
    const auto& c = categories().at(category);
    return plural ? c.second : c.first;
}

const std::string& color_name(int color) { return colors().at(color); }

const std::string& position_phrase(Position p) {
    return position_phrases().at(static_cast<int>(p));
}

const char* position_key(Position p) { return kPositionKeys[static_cast<int>(p)]; }

std::optional<Position> position_from_key(const std::string& key) {
    for (int i = 0; i < kPositionCount; ++i)
        if (key == kPositionKeys[i]) return static_cast<Position>(i);
    return std::nullopt;
}

std::optional<int> category_from_name(const std::string& name) {
    const auto& cats = categories();
    for (size_t i = 0; i < cats.size(); ++i)
        if (cats[i].first == name) return static_cast<int>(i);
    return std::nullopt;
}

std::optional<int> color_from_name(const std::string& name) {
    const auto& cs = colors();
    for (size_t i = 0; i < cs.size(); ++i)
        if (cs[i] == name) return static_cast<int>(i);
    return std::nullopt;
}

const char* perturbation_name(Perturbation p) {
    switch (p) {
        case Perturbation::object_insert: return "object_insert";
        case Perturbation::object_swap: return "object_swap";
        case Perturbation::count_change: return "count_change";
        case Perturbation::attribute_swap: return "attribute_swap";
        case Perturbation::position_change: return "position_change";
    }
    return "?";
}

std::optional<Perturbation> perturbation_from_name(const std::string& name) {
    for (int i = 0; i < kPerturbationCount; ++i) {
        const auto p = static_cast<Perturbation>(i);
        if (name == perturbation_name(p)) return p;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() {
    tokens_ = {"<pad>", "<bos>", "<eos>"};
    counts_base_ = static_cast<int>(tokens_.size());
    for (const auto& w : count_words()) tokens_.push_back(w);
    colors_base_ = static_cast<int>(tokens_.size());
    for (const auto& w : colors()) tokens_.push_back(w);
    nouns_base_ = static_cast<int>(tokens_.size());
    for (const auto& [sg, pl] : categories()) {
        tokens_.push_back(sg);
        tokens_.push_back(pl);
    }
    positions_base_ = static_cast<int>(tokens_.size());
    for (const auto& w : position_phrases()) tokens_.push_back(w);
    and_id_ = static_cast<int>(tokens_.size());
    tokens_.push_back("and");
    a_id_ = static_cast<int>(tokens_.size());
    tokens_.push_back("a");
    picture_id_ = static_cast<int>(tokens_.size());
    tokens_.push_back("picture");
    with_id_ = static_cast<int>(tokens_.size());
    tokens_.push_back("with");
}

const Vocab& Vocab::instance() {
    static const Vocab v;
    return v;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("Vocab: id " + std::to_string(id));
    return tokens_[id];
}

int Vocab::id(const std::string& token) const {
    static const std::map<std::string, int> index = [] {
        std::map<std::string, int> m;
        const Vocab& v = instance();
        for (int i = 0; i < v.size(); ++i) m[v.tokens_[i]] = i;
        return m;
    }();
    const auto it = index.find(token);
    if (it == index.end()) throw std::out_of_range("Vocab: unknown token '" + token + "'");
    return it->second;
}

bool Vocab::contains(const std::string& token) const {
    return std::find(tokens_.begin(), tokens_.end(), token) != tokens_.end();
}

int Vocab::count_id(int count) const {
    if (count < kMinCount || count > kMaxCount)
        throw std::out_of_range("Vocab: count " + std::to_string(count));
    return counts_base_ + (count - 1);
}

int Vocab::color_id(int color) const {
    if (color < 0 || color >= color_count())
        throw std::out_of_range("Vocab: color " + std::to_string(color));
    return colors_base_ + color;
}

int Vocab::noun_id(int category, bool plural) const {
    if (category < 0 || category >= category_count())
        throw std::out_of_range("Vocab: category " + std::to_string(category));
    return nouns_base_ + 2 * category + (plural ? 1 : 0);
}

int Vocab::position_id(Position p) const { return positions_base_ + static_cast<int>(p); }

std::string Vocab::render_text(std::span<const int> token_ids) const {
    std::string out;
    for (size_t i = 0; i < token_ids.size(); ++i) {
        if (i) out += ' ';
        out += token(token_ids[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scenes

bool Scene::has_category(int category) const { return find_category(category) != nullptr; }

const SceneObject* Scene::find_category(int category) const {
    for (const SceneObject& o : objects)
        if (o.category == category) return &o;
    return nullptr;
}

Scene sample_scene(uint64_t seed, int64_t scene_id, int max_objects) {
    if (max_objects < 1) throw std::invalid_argument("sample_scene: max_objects < 1");
    Rng rng = Rng::keyed(seed, 0x5ce9eULL, static_cast<uint64_t>(scene_id),
                         static_cast<uint64_t>(max_objects));
    Scene scene;
    scene.scene_id = scene_id;
    scene.seed = seed;
    const int n = rng.next_int(1, std::min(max_objects, 4));
    scene.objects.reserve(n);
    for (int i = 0; i < n; ++i) {
        SceneObject o;
        do {
            o.category = rng.next_int(0, category_count() - 1);
        } while (scene.has_category(o.category));
        o.color = rng.next_int(0, color_count() - 1);
        o.count = rng.next_int(kMinCount, kMaxCount);
        o.position = static_cast<Position>(rng.next_int(0, kPositionCount - 1));
        scene.objects.push_back(o);
    }
    return scene;
}

CaptionRecord render_caption(const Scene& scene, int max_caption_len) {
    if (scene.objects.empty()) throw std::invalid_argument("render_caption: empty scene");
    CaptionRecord rec = make_record(scene, scene_phrases(scene), CaptionKind::ground_truth,
                                    std::nullopt);
    if (static_cast<int>(rec.tokens.size()) > max_caption_len)
        throw CaptionTooLong("render_caption: scene " + std::to_string(scene.scene_id) + " needs " +
                             std::to_string(rec.tokens.size()) + " tokens, limit " +
                             std::to_string(max_caption_len));
    return rec;
}

std::optional<CaptionRecord> perturb_caption(const Scene& scene, const CaptionRecord& gt,
                                             Perturbation type, uint64_t seed,
                                             int max_caption_len) {
    Rng rng = Rng::keyed(seed, 0xa17e2ULL, static_cast<uint64_t>(scene.scene_id),
                         static_cast<uint64_t>(type));
    std::vector<Phrase> phrases = scene_phrases(scene);
    const int target = phrases.empty() ? 0 : rng.next_int(0, static_cast<int>(phrases.size()) - 1);

    auto pick_absent_category = [&]() -> std::optional<int> {
        std::vector<int> absent;
        for (int c = 0; c < category_count(); ++c)
            if (!scene.has_category(c)) absent.push_back(c);
        if (absent.empty()) return std::nullopt;
        return absent[rng.next_below(absent.size())];
    };

    switch (type) {
        case Perturbation::object_insert: {
            const auto cat = pick_absent_category();
            if (!cat) return std::nullopt;
            phrases.push_back({*cat, 0, 1, Position::left, /*short_form=*/true});
            break;
        }
        case Perturbation::object_swap: {
            const auto cat = pick_absent_category();
            if (!cat) return std::nullopt;
            phrases[target].category = *cat;
            break;
        }
        case Perturbation::count_change: {
            const int old = phrases[target].count;
            if (kMaxCount == kMinCount) return std::nullopt;
            int next;
            do {
                next = rng.next_int(kMinCount, kMaxCount);
            } while (next == old);
            phrases[target].count = next;
            break;
        }
        case Perturbation::attribute_swap: {
            const int old = phrases[target].color;
            if (color_count() < 2) return std::nullopt;
            int next;
            do {
                next = rng.next_int(0, color_count() - 1);
            } while (next == old);
            phrases[target].color = next;
            break;
        }
        case Perturbation::position_change: {
            const auto old = phrases[target].position;
            Position next;
            do {
                next = static_cast<Position>(rng.next_int(0, kPositionCount - 1));
            } while (next == old);
            phrases[target].position = next;
            break;
        }
    }

    CaptionRecord rec = make_record(scene, phrases, CaptionKind::hallucinated, type);
    if (static_cast<int>(rec.tokens.size()) > max_caption_len) return std::nullopt;
    if (rec.tokens == gt.tokens) return std::nullopt;  // never echo the input
    return rec;
}

// ---------------------------------------------------------------------------
// Parsing and consistency

std::optional<std::vector<ParsedObject>> parse_caption(std::span<const int> tokens) {
    const Vocab& v = Vocab::instance();
    const int counts_base = v.count_id(kMinCount);
    const int colors_base = v.color_id(0);
    const int nouns_base = v.noun_id(0, false);
    const int positions_base = v.position_id(Position::left);

    auto as_count = [&](int id) -> std::optional<int> {
        if (id >= counts_base && id < counts_base + kMaxCount) return id - counts_base + 1;
        return std::nullopt;
    };
    auto as_color = [&](int id) -> std::optional<int> {
        if (id >= colors_base && id < colors_base + color_count()) return id - colors_base;
        return std::nullopt;
    };
    auto as_noun = [&](int id) -> std::optional<std::pair<int, bool>> {
        if (id >= nouns_base && id < nouns_base + 2 * category_count()) {
            const int off = id - nouns_base;
            return std::make_pair(off / 2, (off % 2) == 1);
        }
        return std::nullopt;
    };
    auto as_position = [&](int id) -> std::optional<Position> {
        if (id >= positions_base && id < positions_base + kPositionCount)
            return static_cast<Position>(id - positions_base);
        return std::nullopt;
    };

    std::vector<ParsedObject> out;
    size_t i = 0;
    if (tokens.empty()) return std::nullopt;
    while (true) {
        if (i >= tokens.size()) return std::nullopt;
        if (tokens[i] == v.a_id()) {
            // short existential phrase: "a <noun-singular>"
            if (i + 1 >= tokens.size()) return std::nullopt;
            const auto noun = as_noun(tokens[i + 1]);
            if (!noun || noun->second) return std::nullopt;
            out.push_back({noun->first, std::nullopt, std::nullopt, std::nullopt});
            i += 2;
        } else {
            if (i + 3 >= tokens.size()) return std::nullopt;
            const auto count = as_count(tokens[i]);
            const auto color = as_color(tokens[i + 1]);
            const auto noun = as_noun(tokens[i + 2]);
            const auto pos = as_position(tokens[i + 3]);
            if (!count || !color || !noun || !pos) return std::nullopt;
            if ((*count > 1) != noun->second) return std::nullopt;  // number agreement
            out.push_back({noun->first, color, count, pos});
            i += 4;
        }
        if (i == tokens.size()) break;
        if (tokens[i] != v.and_id()) return std::nullopt;
        ++i;
    }
    return out;
}

ConsistencyResult check_consistency(const Scene& scene, std::span<const int> tokens) {
    const auto parsed = parse_caption(tokens);
    if (!parsed)
        return {ConsistencyResult::Status::parse_failure, "caption does not parse"};
    for (const ParsedObject& p : *parsed) {
        const SceneObject* obj = scene.find_category(p.category);
        const std::string& name = category_name(p.category, false);
        if (!obj)
            return {ConsistencyResult::Status::inconsistent, "object '" + name + "' not in scene"};
        if (p.color && *p.color != obj->color)
            return {ConsistencyResult::Status::inconsistent,
                    "color of '" + name + "' is " + color_name(obj->color) + ", caption says " +
                        color_name(*p.color)};
        if (p.count && *p.count != obj->count)
            return {ConsistencyResult::Status::inconsistent,
                    "count of '" + name + "' is " + std::to_string(obj->count) +
                        ", caption says " + std::to_string(*p.count)};
        if (p.position && *p.position != obj->position)
            return {ConsistencyResult::Status::inconsistent,
                    "position of '" + name + "' is " + position_phrase(obj->position) +
                        ", caption says " + position_phrase(*p.position)};
    }
    return {ConsistencyResult::Status::consistent, ""};
}

// ---------------------------------------------------------------------------
// Dataset

const Scene* Dataset::find_scene(int64_t scene_id) const {
    if (scene_id >= 0 && scene_id < static_cast<int64_t>(train_scenes.size()))
        return &train_scenes[scene_id];
    const int64_t off = scene_id - config.n_train;
    if (off >= 0 && off < static_cast<int64_t>(eval_scenes.size())) return &eval_scenes[off];
    return nullptr;
}

bool Dataset::is_eval_id(int64_t scene_id) const {
    return scene_id >= config.n_train && scene_id < config.n_train + config.n_eval;
}

namespace {

Scene sample_scene_fitting(const DatasetConfig& cfg, int64_t scene_id) {
    // A caption that does not fit gets its scene regenerated with a smaller
    // object budget; deterministic because the budget sequence is fixed.
    for (int budget = cfg.max_objects; budget >= 1; --budget) {
        Scene s = sample_scene(cfg.seed, scene_id, budget);
        try {
            render_caption(s, cfg.max_caption_len);
            return s;
        } catch (const CaptionTooLong&) {
            continue;
        }
    }
    throw std::invalid_argument("build_dataset: max_caption_len " +
                                std::to_string(cfg.max_caption_len) +
                                " cannot fit a one-object caption");
}

void build_split(const DatasetConfig& cfg, int64_t first_id, int n, std::vector<Scene>& scenes,
                 std::vector<CaptionRecord>& captions) {
    scenes.reserve(n);
    captions.reserve(static_cast<size_t>(n) * (1 + cfg.hallucinated_per_scene));
    int round_robin = 0;
    for (int i = 0; i < n; ++i) {
        const int64_t id = first_id + i;
        Scene s = sample_scene_fitting(cfg, id);
        CaptionRecord gt = render_caption(s, cfg.max_caption_len);
        captions.push_back(gt);
        for (int j = 0; j < cfg.hallucinated_per_scene; ++j) {
            // round-robin over types; an exhausted type falls through to the
            // next one (cannot happen with the full grammar, but cheap rules
            // under tight caption limits can run out)
            std::optional<CaptionRecord> hall;
            for (int attempt = 0; attempt < kPerturbationCount && !hall; ++attempt) {
                const auto type =
                    static_cast<Perturbation>((round_robin + attempt) % kPerturbationCount);
                hall = perturb_caption(s, gt, type, cfg.seed, cfg.max_caption_len);
            }
            ++round_robin;
            if (!hall)
                throw std::runtime_error("build_dataset: no perturbation applies to scene " +
                                         std::to_string(id));
            captions.push_back(std::move(*hall));
        }
        scenes.push_back(std::move(s));
    }
}

ordered_json scene_to_json(const Scene& s) {
    ordered_json objs = ordered_json::array();
    for (const SceneObject& o : s.objects) {
        objs.push_back({{"category", category_name(o.category, false)},
                        {"color", color_name(o.color)},
                        {"count", o.count},
                        {"position", position_key(o.position)}});
    }
    return ordered_json{{"scene_id", s.scene_id}, {"objects", objs}};
}

Scene scene_from_json(const ordered_json& j, uint64_t seed) {
    Scene s;
    s.scene_id = j.at("scene_id").get<int64_t>();
    s.seed = seed;
    for (const auto& oj : j.at("objects")) {
        SceneObject o;
        const auto cat = category_from_name(oj.at("category").get<std::string>());
        const auto col = color_from_name(oj.at("color").get<std::string>());
        const auto pos = position_from_key(oj.at("position").get<std::string>());
        if (!cat || !col || !pos)
            throw DatasetLoadError("scenes file: unknown attribute in scene " +
                                   std::to_string(s.scene_id));
        o.category = *cat;
        o.color = *col;
        o.position = *pos;
        o.count = oj.at("count").get<int>();
        s.objects.push_back(o);
    }
    return s;
}

ordered_json caption_to_json(const CaptionRecord& c) {
    ordered_json j;
    j["scene_id"] = c.scene_id;
    j["kind"] = c.kind == CaptionKind::ground_truth ? "ground_truth" : "hallucinated";
    if (c.perturbation)
        j["perturbation"] = perturbation_name(*c.perturbation);
    else
        j["perturbation"] = nullptr;
    j["token_ids"] = c.tokens;
    j["text"] = c.text;
    return j;
}

CaptionRecord caption_from_json(const ordered_json& j) {
    CaptionRecord c;
    c.scene_id = j.at("scene_id").get<int64_t>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "ground_truth")
        c.kind = CaptionKind::ground_truth;
    else if (kind == "hallucinated")
        c.kind = CaptionKind::hallucinated;
    else
        throw DatasetLoadError("captions file: unknown kind '" + kind + "'");
    if (!j.at("perturbation").is_null()) {
        const auto p = perturbation_from_name(j.at("perturbation").get<std::string>());
        if (!p) throw DatasetLoadError("captions file: unknown perturbation");
        c.perturbation = p;
    }
    c.tokens = j.at("token_ids").get<std::vector<int>>();
    c.text = j.at("text").get<std::string>();
    return c;
}

ordered_json config_to_json(const DatasetConfig& cfg) {
    return ordered_json{{"seed", cfg.seed},
                        {"n_train", cfg.n_train},
                        {"n_eval", cfg.n_eval},
                        {"hallucinated_per_scene", cfg.hallucinated_per_scene},
                        {"max_caption_len", cfg.max_caption_len},
                        {"max_objects", cfg.max_objects}};
}

DatasetConfig config_from_json(const ordered_json& j) {
    DatasetConfig cfg;
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.n_train = j.at("n_train").get<int>();
    cfg.n_eval = j.at("n_eval").get<int>();
    cfg.hallucinated_per_scene = j.at("hallucinated_per_scene").get<int>();
    cfg.max_caption_len = j.at("max_caption_len").get<int>();
    cfg.max_objects = j.at("max_objects").get<int>();
    return cfg;
}

}  // namespace

Dataset build_dataset(const DatasetConfig& cfg) {
    if (cfg.n_train <= 0 || cfg.n_eval <= 0)
        throw std::invalid_argument("build_dataset: n_train and n_eval must be positive");
    if (cfg.hallucinated_per_scene < 0)
        throw std::invalid_argument("build_dataset: hallucinated_per_scene must be >= 0");
    Dataset ds;
    ds.config = cfg;
    build_split(cfg, 0, cfg.n_train, ds.train_scenes, ds.train_captions);
    build_split(cfg, cfg.n_train, cfg.n_eval, ds.eval_scenes, ds.eval_captions);
    return ds;
}

DatasetFiles write_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    DatasetFiles files;
    files.scenes_path = (fs::path(dir) / "scenes.jsonl").string();
    files.captions_path = (fs::path(dir) / "captions.jsonl").string();
    files.manifest_path = (fs::path(dir) / "manifest.json").string();

    {
        std::ofstream out(files.scenes_path, std::ios::binary);
        if (!out) throw std::runtime_error("write_dataset: cannot write " + files.scenes_path);
        for (const Scene& s : ds.train_scenes) out << scene_to_json(s).dump() << '\n';
        for (const Scene& s : ds.eval_scenes) out << scene_to_json(s).dump() << '\n';
    }
    {
        std::ofstream out(files.captions_path, std::ios::binary);
        if (!out) throw std::runtime_error("write_dataset: cannot write " + files.captions_path);
        for (const CaptionRecord& c : ds.train_captions) out << caption_to_json(c).dump() << '\n';
        for (const CaptionRecord& c : ds.eval_captions) out << caption_to_json(c).dump() << '\n';
    }

    files.scenes_sha256 = util::sha256_file(files.scenes_path);
    files.captions_sha256 = util::sha256_file(files.captions_path);
    files.dataset_sha256 = util::sha256_hex(files.scenes_sha256 + files.captions_sha256);

    ordered_json manifest;
    manifest["command"] = "gen-data";
    manifest["config"] = config_to_json(ds.config);
    manifest["vocab_size"] = Vocab::instance().size();
    manifest["counts"] = {
        {"train_scenes", ds.train_scenes.size()},
        {"eval_scenes", ds.eval_scenes.size()},
        {"train_caption_records", ds.train_captions.size()},
        {"eval_caption_records", ds.eval_captions.size()},
        {"total_caption_records", ds.train_captions.size() + ds.eval_captions.size()},
    };
    manifest["checksums"] = {
        {"scenes.jsonl", files.scenes_sha256},
        {"captions.jsonl", files.captions_sha256},
        {"dataset", files.dataset_sha256},
    };
    std::ofstream out(files.manifest_path, std::ios::binary);
    if (!out) throw std::runtime_error("write_dataset: cannot write " + files.manifest_path);
    out << manifest.dump(2) << '\n';
    return files;
}

namespace {

ordered_json read_json_file(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetLoadError(std::string(what) + ": cannot open " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DatasetLoadError(std::string(what) + ": " + path + ": " + e.what());
    }
    return j;
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
    const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
    const std::string scenes_path = (fs::path(dir) / "scenes.jsonl").string();
    const std::string captions_path = (fs::path(dir) / "captions.jsonl").string();
    const ordered_json manifest = read_json_file(manifest_path, "load_dataset");

    const std::string scenes_sha = util::sha256_file(scenes_path);
    const std::string captions_sha = util::sha256_file(captions_path);
    const auto& sums = manifest.at("checksums");
    if (scenes_sha != sums.at("scenes.jsonl").get<std::string>() ||
        captions_sha != sums.at("captions.jsonl").get<std::string>())
        throw DatasetLoadError("load_dataset: checksum mismatch in " + dir +
                               " (files differ from manifest)");

    Dataset ds;
    ds.config = config_from_json(manifest.at("config"));

    std::ifstream scenes_in(scenes_path, std::ios::binary);
    std::string line;
    while (std::getline(scenes_in, line)) {
        if (line.empty()) continue;
        const Scene s = scene_from_json(ordered_json::parse(line), ds.config.seed);
        if (s.scene_id < ds.config.n_train)
            ds.train_scenes.push_back(s);
        else
            ds.eval_scenes.push_back(s);
    }
    std::ifstream captions_in(captions_path, std::ios::binary);
    while (std::getline(captions_in, line)) {
        if (line.empty()) continue;
        CaptionRecord c = caption_from_json(ordered_json::parse(line));
        if (c.scene_id < ds.config.n_train)
            ds.train_captions.push_back(std::move(c));
        else
            ds.eval_captions.push_back(std::move(c));
    }
    if (static_cast<int>(ds.train_scenes.size()) != ds.config.n_train ||
        static_cast<int>(ds.eval_scenes.size()) != ds.config.n_eval)
        throw DatasetLoadError("load_dataset: scene counts disagree with manifest config");
    return ds;
}

std::string dataset_checksum(const std::string& dir) {
    const ordered_json manifest =
        read_json_file((fs::path(dir) / "manifest.json").string(), "dataset_checksum");
    return manifest.at("checksums").at("dataset").get<std::string>();
}

}  // namespace hacl::worldgen

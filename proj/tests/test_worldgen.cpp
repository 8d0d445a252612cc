#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "hacl/worldgen.hpp"
#include "oracles.hpp"

using namespace hacl::worldgen;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Scene two_red_apples_left() {
    Scene s;
    s.scene_id = 0;
    s.seed = 0;
    const auto apple = category_from_name("apple");
    const auto red = color_from_name("red");
    REQUIRE(apple);
    REQUIRE(red);
    s.objects.push_back({*apple, *red, 2, Position::left});
    return s;
}

}  // namespace

TEST_CASE("vocab is a bijection with fixed reserved ids") {
    const Vocab& v = Vocab::instance();
    CHECK(v.token(kPadId) == "<pad>");
    CHECK(v.token(kBosId) == "<bos>");
    CHECK(v.token(kEosId) == "<eos>");
    CHECK(v.size() >= 96);  // closed grammar, on the order of 128 tokens
    CHECK(v.size() <= 160);
    std::set<std::string> seen;
    for (int i = 0; i < v.size(); ++i) {
        CHECK(v.id(v.token(i)) == i);
        CHECK(seen.insert(v.token(i)).second);
    }
    CHECK_THROWS_AS(v.id("no-such-token"), std::out_of_range);
}

TEST_CASE("sample_scene is deterministic and honors invariants") {
    const Scene a = sample_scene(7, 0);
    const Scene b = sample_scene(7, 0);
    CHECK(a == b);
    for (int id = 0; id < 200; ++id) {
        const Scene s = sample_scene(7, id);
        CHECK(s.objects.size() >= 1);
        CHECK(s.objects.size() <= 4);
        std::set<int> cats;
        for (const SceneObject& o : s.objects) {
            CHECK(cats.insert(o.category).second);  // categories unique per scene
            CHECK(o.count >= 1);
            CHECK(o.count <= 4);
        }
    }
}

TEST_CASE("category histogram over 1000 scenes is approximately uniform") {
    std::vector<int> counts(category_count(), 0);
    for (int id = 0; id < 1000; ++id)
        for (const SceneObject& o : sample_scene(7, id).objects) ++counts[o.category];
    const double p = oracle::chi_square_uniform_pvalue(counts);
    CAPTURE(p);
    CHECK(p > 0.01);
}

TEST_CASE("different seeds give different scenes") {
    int collisions = 0;
    for (int id = 0; id < 100; ++id)
        if (sample_scene(7, id) == sample_scene(8, id)) ++collisions;
    CHECK(collisions == 0);
}

TEST_CASE("render_caption realizes the grammar directly") {
    const Scene s = two_red_apples_left();
    const CaptionRecord rec = render_caption(s);
    CHECK(rec.text == "two red apples on the left");
    CHECK(rec.kind == CaptionKind::ground_truth);
    CHECK(!rec.perturbation.has_value());
    CHECK(rec.tokens.size() == 4);
}

TEST_CASE("captions over the length limit are rejected") {
    Scene s;
    s.scene_id = 1;
    for (int i = 0; i < 4; ++i) s.objects.push_back({i, 0, 2, Position::center});
    CHECK_THROWS_AS(render_caption(s, 10), CaptionTooLong);
    CHECK_NOTHROW(render_caption(s, 24));
}

TEST_CASE("round-trip parse(render(s)) == s over 1000 scenes") {
    for (int id = 0; id < 1000; ++id) {
        const Scene s = sample_scene(42, id);
        const CaptionRecord rec = render_caption(s);
        const auto parsed = parse_caption(rec.tokens);
        REQUIRE(parsed.has_value());
        REQUIRE(parsed->size() == s.objects.size());
        for (size_t i = 0; i < s.objects.size(); ++i) {
            const ParsedObject& p = (*parsed)[i];
            CHECK(p.category == s.objects[i].category);
            CHECK(p.color == s.objects[i].color);
            CHECK(p.count == s.objects[i].count);
            CHECK(p.position == s.objects[i].position);
        }
    }
}

TEST_CASE("parse failures are distinct from inconsistency") {
    const Scene s = two_red_apples_left();
    const Vocab& v = Vocab::instance();
    const std::vector<int> garbage = {v.and_id(), v.and_id()};
    const ConsistencyResult r = check_consistency(s, garbage);
    CHECK(r.status == ConsistencyResult::Status::parse_failure);
    // number disagreement is not grammatical
    const std::vector<int> disagree = {v.count_id(2), v.color_id(0),
                                       v.noun_id(0, /*plural=*/false),
                                       v.position_id(Position::left)};
    CHECK(!parse_caption(disagree).has_value());
}

TEST_CASE("perturbations break exactly the targeted slot") {
    const Scene s = two_red_apples_left();
    const CaptionRecord gt = render_caption(s);

    SUBCASE("count_change") {
        const auto hall = perturb_caption(s, gt, Perturbation::count_change, 7);
        REQUIRE(hall.has_value());
        const auto parsed = parse_caption(hall->tokens);
        REQUIRE(parsed.has_value());
        CHECK((*parsed)[0].category == s.objects[0].category);
        CHECK((*parsed)[0].color == s.objects[0].color);
        CHECK((*parsed)[0].position == s.objects[0].position);
        CHECK(*(*parsed)[0].count != 2);
    }
    SUBCASE("object_insert mentions an absent object") {
        const auto hall = perturb_caption(s, gt, Perturbation::object_insert, 7);
        REQUIRE(hall.has_value());
        const auto parsed = parse_caption(hall->tokens);
        REQUIRE(parsed.has_value());
        REQUIRE(parsed->size() == 2);
        CHECK(!s.has_category((*parsed)[1].category));
    }
    SUBCASE("attribute_swap changes only the color") {
        const auto hall = perturb_caption(s, gt, Perturbation::attribute_swap, 7);
        REQUIRE(hall.has_value());
        const auto parsed = parse_caption(hall->tokens);
        REQUIRE(parsed.has_value());
        CHECK((*parsed)[0].category == s.objects[0].category);
        CHECK(*(*parsed)[0].color != s.objects[0].color);
        CHECK((*parsed)[0].count == s.objects[0].count);
    }
    SUBCASE("object_swap reported as an object mismatch") {
        const auto hall = perturb_caption(s, gt, Perturbation::object_swap, 7);
        REQUIRE(hall.has_value());
        const ConsistencyResult r = check_consistency(s, hall->tokens);
        CHECK(r.status == ConsistencyResult::Status::inconsistent);
        CHECK(r.reason.find("not in scene") != std::string::npos);
    }
}

TEST_CASE("every perturbation is inconsistent, close in length, and never an echo") {
    int checked = 0;
    for (int id = 0; id < 200; ++id) {
        const Scene s = sample_scene(11, id);
        const CaptionRecord gt = render_caption(s);
        CHECK(check_consistency(s, gt.tokens).consistent());
        for (int t = 0; t < kPerturbationCount; ++t) {
            const auto hall = perturb_caption(s, gt, static_cast<Perturbation>(t), 11);
            REQUIRE(hall.has_value());
            CHECK(hall->tokens != gt.tokens);
            CHECK(std::abs(static_cast<int>(hall->tokens.size()) -
                           static_cast<int>(gt.tokens.size())) <= 4);
            const ConsistencyResult r = check_consistency(s, hall->tokens);
            CHECK(r.status == ConsistencyResult::Status::inconsistent);
            ++checked;
        }
    }
    CHECK(checked == 1000);
}

TEST_CASE("captions from other scenes are almost never consistent") {
    int consistent = 0;
    for (int id = 0; id < 1000; ++id) {
        const Scene s = sample_scene(13, id);
        const CaptionRecord other = render_caption(sample_scene(13, id + 1000));
        if (check_consistency(s, other.tokens).consistent()) ++consistent;
    }
    CHECK(consistent <= 5);
}

TEST_CASE("build_dataset layout, counts and split disjointness") {
    DatasetConfig cfg;
    cfg.seed = 7;
    cfg.n_train = 200;
    cfg.n_eval = 50;
    const Dataset ds = build_dataset(cfg);
    CHECK(ds.train_scenes.size() == 200);
    CHECK(ds.eval_scenes.size() == 50);
    CHECK(ds.train_captions.size() == 400);  // gt + k=1 hallucinated
    CHECK(ds.eval_captions.size() == 100);

    std::set<int64_t> train_ids, eval_ids;
    for (const Scene& s : ds.train_scenes) train_ids.insert(s.scene_id);
    for (const Scene& s : ds.eval_scenes) eval_ids.insert(s.scene_id);
    CHECK(train_ids.size() == 200);
    CHECK(eval_ids.size() == 50);
    for (int64_t id : eval_ids) CHECK(train_ids.count(id) == 0);

    // every ground-truth caption passes, every hallucinated caption fails
    for (const auto* split : {&ds.train_captions, &ds.eval_captions}) {
        for (const CaptionRecord& c : *split) {
            const Scene* s = ds.find_scene(c.scene_id);
            REQUIRE(s != nullptr);
            if (c.kind == CaptionKind::ground_truth) {
                CHECK(!c.perturbation.has_value());
                CHECK(check_consistency(*s, c.tokens).consistent());
            } else {
                CHECK(c.perturbation.has_value());
                CHECK(check_consistency(*s, c.tokens).status ==
                      ConsistencyResult::Status::inconsistent);
            }
        }
    }
}

TEST_CASE("perturbation types are assigned round-robin") {
    DatasetConfig cfg;
    cfg.seed = 3;
    cfg.n_train = 503;  // not a multiple of 5
    cfg.n_eval = 10;
    const Dataset ds = build_dataset(cfg);
    std::vector<int> counts(kPerturbationCount, 0);
    for (const CaptionRecord& c : ds.train_captions)
        if (c.perturbation) ++counts[static_cast<int>(*c.perturbation)];
    const double expected = 503.0 / 5.0;
    for (int c : counts) CHECK(std::abs(c - expected) <= 1.0);
}

TEST_CASE("tight caption budgets regenerate scenes with fewer objects") {
    DatasetConfig cfg;
    cfg.seed = 5;
    cfg.n_train = 100;
    cfg.n_eval = 10;
    cfg.max_caption_len = 9;  // at most two objects fit
    const Dataset ds = build_dataset(cfg);
    for (const Scene& s : ds.train_scenes) CHECK(s.objects.size() <= 2);
    for (const CaptionRecord& c : ds.train_captions)
        CHECK(static_cast<int>(c.tokens.size()) <= cfg.max_caption_len);
}

TEST_CASE("dataset files are byte-identical across rebuilds and load back") {
    DatasetConfig cfg;
    cfg.seed = 21;
    cfg.n_train = 60;
    cfg.n_eval = 12;
    const fs::path dir1 = fs::temp_directory_path() / "hacl_wg_a";
    const fs::path dir2 = fs::temp_directory_path() / "hacl_wg_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    const Dataset ds1 = build_dataset(cfg);
    const Dataset ds2 = build_dataset(cfg);
    const DatasetFiles f1 = write_dataset(ds1, dir1.string());
    const DatasetFiles f2 = write_dataset(ds2, dir2.string());
    CHECK(slurp(f1.manifest_path) == slurp(f2.manifest_path));
    CHECK(slurp(f1.scenes_path) == slurp(f2.scenes_path));
    CHECK(slurp(f1.captions_path) == slurp(f2.captions_path));
    CHECK(f1.dataset_sha256 == f2.dataset_sha256);

    const Dataset loaded = load_dataset(dir1.string());
    CHECK(loaded.config == cfg);
    REQUIRE(loaded.train_scenes.size() == ds1.train_scenes.size());
    CHECK(loaded.train_scenes[5] == ds1.train_scenes[5]);
    REQUIRE(loaded.train_captions.size() == ds1.train_captions.size());
    CHECK(loaded.train_captions[7].tokens == ds1.train_captions[7].tokens);

    // integrity: corrupting a file is caught by the manifest checksum
    {
        std::ofstream out(f1.captions_path, std::ios::binary | std::ios::app);
        out << "{}\n";
    }
    CHECK_THROWS_AS(load_dataset(dir1.string()), DatasetLoadError);
    fs::remove_all(dir1);
    fs::remove_all(dir2);
}

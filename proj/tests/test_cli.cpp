#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

const std::string kCli = HACL_CLI_PATH;

struct RunResult {
    int exit_code;
    std::string output;
};

RunResult run(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "hacl_cli_out.txt";
    const std::string cmd = kCli + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::string output{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return {WEXITSTATUS(status), std::move(output)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Workspace {
    fs::path root;
    fs::path config;
    explicit Workspace(const std::string& name) {
        root = fs::temp_directory_path() / ("hacl_cli_" + name);
        fs::remove_all(root);
        fs::create_directories(root);
        config = root / "config.json";
        std::ofstream out(config);
        out << R"({
  "data.seed": 7,
  "data.n_train": 24,
  "data.n_eval": 8,
  "model.dim": 16,
  "model.visual_tokens": 4,
  "train.seed": 3,
  "stage0.steps": 10,
  "stage0.batch": 4,
  "stage1.steps": 10,
  "stage1.batch": 4,
  "stage1.queue_capacity": 32
})";
    }
    ~Workspace() { fs::remove_all(root); }
    std::string cfg() const { return " --config " + config.string(); }
    std::string dir(const char* name) const { return (root / name).string(); }
};

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    int n = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

}  // namespace

TEST_CASE("gen-data is deterministic and refuses to clobber") {
    Workspace ws("gen");
    const auto r1 = run("gen-data" + ws.cfg() + " --out " + ws.dir("d1"));
    REQUIRE_MESSAGE(r1.exit_code == 0, r1.output);
    const auto r2 = run("gen-data" + ws.cfg() + " --out " + ws.dir("d2"));
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(ws.root / "d1/manifest.json") == slurp(ws.root / "d2/manifest.json"));
    CHECK(slurp(ws.root / "d1/captions.jsonl") == slurp(ws.root / "d2/captions.jsonl"));

    const auto refuse = run("gen-data" + ws.cfg() + " --out " + ws.dir("d1"));
    CHECK(refuse.exit_code == 2);
    CHECK(refuse.output.find("--force") != std::string::npos);
    const auto forced = run("gen-data" + ws.cfg() + " --force --out " + ws.dir("d1"));
    CHECK(forced.exit_code == 0);

    // k=1: one ground-truth and one hallucinated record per train scene
    std::ifstream mf(ws.root / "d1/manifest.json");
    std::string manifest{std::istreambuf_iterator<char>(mf), std::istreambuf_iterator<char>()};
    CHECK(manifest.find("\"train_caption_records\": 48") != std::string::npos);
}

TEST_CASE("missing config file exits 2 and names the path") {
    const auto r = run("gen-data --config /nonexistent/cfg.json --out /tmp/hacl_never");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("/nonexistent/cfg.json") != std::string::npos);
}

TEST_CASE("unknown config keys are rejected") {
    Workspace ws("badkey");
    std::ofstream(ws.config) << R"({"data.n_trian": 10})";
    const auto r = run("gen-data" + ws.cfg() + " --out " + ws.dir("d"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("data.n_trian") != std::string::npos);
}

TEST_CASE("train is reproducible and writes mode-dependent metrics") {
    Workspace ws("train");
    REQUIRE(run("gen-data" + ws.cfg() + " --out " + ws.dir("data")).exit_code == 0);

    const auto r1 = run("train" + ws.cfg() + " --data " + ws.dir("data") + " --out " +
                        ws.dir("run1") + " --mode hacl");
    REQUIRE_MESSAGE(r1.exit_code == 0, r1.output);
    const auto r2 = run("train" + ws.cfg() + " --data " + ws.dir("data") + " --out " +
                        ws.dir("run2") + " --mode hacl");
    REQUIRE(r2.exit_code == 0);
    CHECK(slurp(ws.root / "run1/checkpoint.bin") == slurp(ws.root / "run2/checkpoint.bin"));
    CHECK(slurp(ws.root / "run1/metrics.jsonl") == slurp(ws.root / "run2/metrics.jsonl"));

    const std::string metrics = slurp(ws.root / "run1/metrics.jsonl");
    CHECK(metrics.find("loss_i2t_hacl") != std::string::npos);
    CHECK(metrics.find("loss_t2i") != std::string::npos);

    const auto no_cl = run("train" + ws.cfg() + " --data " + ws.dir("data") + " --out " +
                           ws.dir("run3") + " --mode no_cl");
    REQUIRE(no_cl.exit_code == 0);
    const std::string metrics3 = slurp(ws.root / "run3/metrics.jsonl");
    CHECK(metrics3.find("loss_t2i") == std::string::npos);
    CHECK(metrics3.find("loss_i2t") == std::string::npos);
    CHECK(metrics3.find("\"mode\":\"no_cl\"") != std::string::npos);
}

TEST_CASE("train rejects dataset drift and impossible modes") {
    Workspace ws("drift");
    REQUIRE(run("gen-data" + ws.cfg() + " --out " + ws.dir("data")).exit_code == 0);

    // a config that disagrees with what the dataset was built from
    const fs::path other_cfg = ws.root / "other.json";
    std::ofstream(other_cfg) << R"({"data.seed": 7, "data.n_train": 23, "data.n_eval": 8})";
    const auto drift = run("train --config " + other_cfg.string() + " --data " + ws.dir("data") +
                           " --out " + ws.dir("r"));
    CHECK(drift.exit_code == 3);

    // explicit checksum pin that does not match
    const fs::path pin_cfg = ws.root / "pin.json";
    std::ofstream(pin_cfg) << R"({
  "data.seed": 7, "data.n_train": 24, "data.n_eval": 8,
  "model.dim": 16, "model.visual_tokens": 4,
  "data.checksum": "0000000000000000000000000000000000000000000000000000000000000000"
})";
    const auto pin = run("train --config " + pin_cfg.string() + " --data " + ws.dir("data") +
                         " --out " + ws.dir("r2"));
    CHECK(pin.exit_code == 3);
    CHECK(pin.output.find("checksum") != std::string::npos);

    // hacl mode on a dataset without hallucinated captions
    const fs::path k0_cfg = ws.root / "k0.json";
    std::ofstream(k0_cfg) << R"({
  "data.seed": 7, "data.n_train": 24, "data.n_eval": 8,
  "data.hallucinated_per_scene": 0,
  "model.dim": 16, "model.visual_tokens": 4,
  "stage0.steps": 2, "stage1.steps": 2
})";
    REQUIRE(run("gen-data --config " + k0_cfg.string() + " --out " + ws.dir("k0")).exit_code == 0);
    const auto hacl_on_k0 = run("train --config " + k0_cfg.string() + " --data " + ws.dir("k0") +
                                " --out " + ws.dir("r3") + " --mode hacl");
    CHECK(hacl_on_k0.exit_code == 2);
}

TEST_CASE("eval appends identical records on identical inputs") {
    Workspace ws("eval");
    REQUIRE(run("gen-data" + ws.cfg() + " --out " + ws.dir("data")).exit_code == 0);
    REQUIRE(run("train" + ws.cfg() + " --data " + ws.dir("data") + " --out " + ws.dir("run"))
                .exit_code == 0);
    const std::string ckpt = ws.dir("run") + "/checkpoint.bin";

    const auto e1 = run("eval" + ws.cfg() + " --checkpoint " + ckpt + " --data " +
                        ws.dir("data") + " --out " + ws.dir("ev"));
    REQUIRE_MESSAGE(e1.exit_code == 0, e1.output);
    const auto e2 = run("eval" + ws.cfg() + " --checkpoint " + ckpt + " --data " +
                        ws.dir("data") + " --out " + ws.dir("ev"));
    REQUIRE(e2.exit_code == 0);
    std::ifstream in(ws.root / "ev/metrics.jsonl");
    std::string l1, l2;
    REQUIRE(std::getline(in, l1));
    REQUIRE(std::getline(in, l2));
    CHECK(l1 == l2);
    CHECK(l1.find("modality_gap") != std::string::npos);
    CHECK(l1.find("hallucination_margin") != std::string::npos);
    CHECK(l1.find("retrieval_at_1") != std::string::npos);
    CHECK(l1.find("pope") != std::string::npos);

    // dim mismatch between checkpoint and config is refused
    const fs::path big_cfg = ws.root / "big.json";
    std::ofstream(big_cfg) << R"({"data.seed":7,"data.n_train":24,"data.n_eval":8,
                                  "model.dim":32,"model.visual_tokens":4})";
    const auto mismatch = run("eval --config " + big_cfg.string() + " --checkpoint " + ckpt +
                              " --data " + ws.dir("data") + " --out " + ws.dir("ev2"));
    CHECK(mismatch.exit_code == 3);

    // missing dataset files
    const auto missing = run("eval" + ws.cfg() + " --checkpoint " + ckpt + " --data " +
                             ws.dir("nowhere") + " --out " + ws.dir("ev3"));
    CHECK(missing.exit_code == 2);
}

TEST_CASE("project exports one row per representation, byte-stable") {
    Workspace ws("proj");
    REQUIRE(run("gen-data" + ws.cfg() + " --out " + ws.dir("data")).exit_code == 0);
    REQUIRE(run("train" + ws.cfg() + " --data " + ws.dir("data") + " --out " + ws.dir("run"))
                .exit_code == 0);
    const std::string ckpt = ws.dir("run") + "/checkpoint.bin";

    const std::string csv1 = ws.dir("p1.csv");
    const std::string csv2 = ws.dir("p2.csv");
    REQUIRE(run("project --checkpoint " + ckpt + " --data " + ws.dir("data") + " --out-csv " +
                csv1).exit_code == 0);
    REQUIRE(run("project --checkpoint " + ckpt + " --data " + ws.dir("data") + " --out-csv " +
                csv2).exit_code == 0);
    CHECK(slurp(csv1) == slurp(csv2));

    std::ifstream in(csv1);
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "scene_id,label,x,y");
    CHECK(count_lines(csv1) == 1 + 3 * 8);  // header + image/gt/hallucinated per eval scene
}

TEST_CASE("numeric blowups abort with exit code 4") {
    Workspace ws("nan");
    REQUIRE(run("gen-data" + ws.cfg() + " --out " + ws.dir("data")).exit_code == 0);
    const fs::path hot_cfg = ws.root / "hot.json";
    std::ofstream(hot_cfg) << R"({
  "data.seed": 7, "data.n_train": 24, "data.n_eval": 8,
  "model.dim": 16, "model.visual_tokens": 4,
  "optimizer.kind": "sgd",
  "stage0.steps": 40, "stage0.lr": 1e18, "stage0.batch": 4,
  "stage1.steps": 2
})";
    const auto r = run("train --config " + hot_cfg.string() + " --data " + ws.dir("data") +
                       " --out " + ws.dir("run"));
    CHECK(r.exit_code == 4);
}

// hacl: synthetic scene/caption laboratory for hallucination-augmented
// contrastive alignment. Subcommands: gen-data, train, eval, project.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hacl/evalkit.hpp"
#include "hacl/model.hpp"
#include "hacl/objective.hpp"
#include "hacl/sha256.hpp"
#include "hacl/trainer.hpp"
#include "hacl/worldgen.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// exit codes: 0 success, 2 usage/config, 3 data, 4 numeric abort
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Config {
    hacl::worldgen::DatasetConfig data;
    std::optional<std::string> data_checksum;
    int model_dim = 32;
    int model_layers = 2;
    int model_heads = 2;
    int model_visual_tokens = 8;
    int model_context = 64;
    double temperature = 0.07;
    uint64_t train_seed = 1;
    hacl::train::Stage0Config stage0;
    hacl::train::Stage1Config stage1;
    hacl::train::OptimizerConfig optimizer;
};

hacl::model::GroupSet parse_groups(const std::vector<std::string>& names) {
    hacl::model::GroupSet gs;
    for (const std::string& n : names) {
        if (n == "theta") gs.theta = true;
        else if (n == "alpha") gs.alpha = true;
        else if (n == "beta") gs.beta = true;
        else throw UsageError("unknown parameter group '" + n + "' (theta|alpha|beta)");
    }
    return gs;
}

std::vector<std::string> group_names(const hacl::model::GroupSet& gs) {
    std::vector<std::string> out;
    if (gs.theta) out.push_back("theta");
    if (gs.alpha) out.push_back("alpha");
    if (gs.beta) out.push_back("beta");
    return out;
}

Config config_from_flat(const ordered_json& j) {
    Config c;
    for (const auto& [key, val] : j.items()) {
        try {
            if (key == "data.seed") c.data.seed = val.get<uint64_t>();
            else if (key == "data.n_train") c.data.n_train = val.get<int>();
            else if (key == "data.n_eval") c.data.n_eval = val.get<int>();
            else if (key == "data.hallucinated_per_scene")
                c.data.hallucinated_per_scene = val.get<int>();
            else if (key == "data.max_caption_len") c.data.max_caption_len = val.get<int>();
            else if (key == "data.max_objects") c.data.max_objects = val.get<int>();
            else if (key == "data.checksum") c.data_checksum = val.get<std::string>();
            else if (key == "model.dim") c.model_dim = val.get<int>();
            else if (key == "model.layers") c.model_layers = val.get<int>();
            else if (key == "model.heads") c.model_heads = val.get<int>();
            else if (key == "model.visual_tokens") c.model_visual_tokens = val.get<int>();
            else if (key == "model.context") c.model_context = val.get<int>();
            else if (key == "objective.temperature") c.temperature = val.get<double>();
            else if (key == "train.seed") c.train_seed = val.get<uint64_t>();
            else if (key == "stage0.steps") c.stage0.steps = val.get<int>();
            else if (key == "stage0.lr") c.stage0.lr = val.get<double>();
            else if (key == "stage0.batch") c.stage0.batch = val.get<int>();
            else if (key == "stage1.steps") c.stage1.steps = val.get<int>();
            else if (key == "stage1.lr") c.stage1.lr = val.get<double>();
            else if (key == "stage1.batch") c.stage1.batch = val.get<int>();
            else if (key == "stage1.queue_capacity") c.stage1.queue_capacity = val.get<int>();
            else if (key == "stage1.mode") {
                const auto m = hacl::objective::mode_from_name(val.get<std::string>());
                if (!m) throw UsageError("stage1.mode must be no_cl|cl|hacl");
                c.stage1.mode = *m;
            } else if (key == "stage1.train_groups") {
                c.stage1.train_groups = parse_groups(val.get<std::vector<std::string>>());
            } else if (key == "optimizer.kind") {
                const auto k = hacl::train::optimizer_kind_from_name(val.get<std::string>());
                if (!k) throw UsageError("optimizer.kind must be sgd|adam");
                c.optimizer.kind = *k;
            } else if (key == "optimizer.beta1") c.optimizer.beta1 = val.get<double>();
            else if (key == "optimizer.beta2") c.optimizer.beta2 = val.get<double>();
            else if (key == "optimizer.eps") c.optimizer.eps = val.get<double>();
            else throw UsageError("unknown config key '" + key + "'");
        } catch (const nlohmann::json::exception& e) {
            throw UsageError("config key '" + key + "': " + e.what());
        }
    }
    return c;
}

ordered_json config_to_flat(const Config& c) {
    ordered_json j;
    j["data.seed"] = c.data.seed;
    j["data.n_train"] = c.data.n_train;
    j["data.n_eval"] = c.data.n_eval;
    j["data.hallucinated_per_scene"] = c.data.hallucinated_per_scene;
    j["data.max_caption_len"] = c.data.max_caption_len;
    j["data.max_objects"] = c.data.max_objects;
    if (c.data_checksum) j["data.checksum"] = *c.data_checksum;
    j["model.dim"] = c.model_dim;
    j["model.layers"] = c.model_layers;
    j["model.heads"] = c.model_heads;
    j["model.visual_tokens"] = c.model_visual_tokens;
    j["model.context"] = c.model_context;
    j["objective.temperature"] = c.temperature;
    j["train.seed"] = c.train_seed;
    j["stage0.steps"] = c.stage0.steps;
    j["stage0.lr"] = c.stage0.lr;
    j["stage0.batch"] = c.stage0.batch;
    j["stage1.steps"] = c.stage1.steps;
    j["stage1.lr"] = c.stage1.lr;
    j["stage1.batch"] = c.stage1.batch;
    j["stage1.queue_capacity"] = c.stage1.queue_capacity;
    j["stage1.mode"] = hacl::objective::mode_name(c.stage1.mode);
    j["stage1.train_groups"] = group_names(c.stage1.train_groups);
    j["optimizer.kind"] = hacl::train::optimizer_kind_name(c.optimizer.kind);
    j["optimizer.beta1"] = c.optimizer.beta1;
    j["optimizer.beta2"] = c.optimizer.beta2;
    j["optimizer.eps"] = c.optimizer.eps;
    return j;
}

Config load_config(const std::string& path) {
    if (path.empty()) return Config{};
    std::ifstream in(path);
    if (!in) throw UsageError("config file not found: " + path);
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw UsageError("config file " + path + ": " + e.what());
    }
    return config_from_flat(j);
}

hacl::model::Dims make_dims(const Config& c) {
    hacl::model::Dims d;
    d.d = c.model_dim;
    d.layers = c.model_layers;
    d.heads = c.model_heads;
    d.visual_tokens = c.model_visual_tokens;
    d.context = c.model_context;
    d.vocab = hacl::worldgen::Vocab::instance().size();
    return d;
}

hacl::train::TrainConfig make_train_config(const Config& c) {
    hacl::train::TrainConfig t;
    t.seed = c.train_seed;
    t.dims = make_dims(c);
    t.temperature = c.temperature;
    t.stage0 = c.stage0;
    t.stage1 = c.stage1;
    t.optimizer = c.optimizer;
    return t;
}

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void ensure_out_dir(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir))
        throw UsageError("output path is not a directory: " + dir);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw UsageError("output directory " + dir + " is not empty (use --force to overwrite)");
    fs::create_directories(dir);
}

void require_dataset_dir(const std::string& dir) {
    for (const char* name : {"manifest.json", "scenes.jsonl", "captions.jsonl"}) {
        const fs::path p = fs::path(dir) / name;
        if (!fs::exists(p)) throw UsageError("dataset file missing: " + p.string());
    }
}

ordered_json read_manifest(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    ordered_json j;
    in >> j;
    return j;
}

hacl::worldgen::Dataset load_dataset_checked(const std::string& dir) {
    require_dataset_dir(dir);
    try {
        return hacl::worldgen::load_dataset(dir);
    } catch (const hacl::worldgen::DatasetLoadError& e) {
        throw DataError(e.what());
    }
}

std::string metrics_line_stage(const hacl::train::RunRecord& rec) {
    ordered_json j;
    j["stage"] = rec.stage;
    j["step"] = rec.step;
    if (rec.stage == "stage1") {
        j["mode"] = hacl::objective::mode_name(rec.mode);
        j["loss_gen"] = rec.gen;
        if (rec.t2i) j["loss_t2i"] = *rec.t2i;
        if (rec.i2t)
            j[rec.mode == hacl::objective::Mode::hacl ? "loss_i2t_hacl" : "loss_i2t"] = *rec.i2t;
    } else {
        j["loss_gen"] = rec.gen;
    }
    j["loss_total"] = rec.total;
    return j.dump();
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Config& cfg, const std::string& out_dir, bool force) {
    ensure_out_dir(out_dir, force);
    const hacl::worldgen::Dataset ds = hacl::worldgen::build_dataset(cfg.data);
    const hacl::worldgen::DatasetFiles files = hacl::worldgen::write_dataset(ds, out_dir);
    std::cout << "wrote " << files.scenes_path << " (" << ds.train_scenes.size() << " train + "
              << ds.eval_scenes.size() << " eval scenes)\n"
              << "wrote " << files.captions_path << " ("
              << ds.train_captions.size() + ds.eval_captions.size() << " caption records)\n"
              << "dataset checksum " << files.dataset_sha256 << "\n";
    return 0;
}

int cmd_train(const Config& cfg_in, const std::string& data_dir, const std::string& out_dir,
              bool force, const std::string& argv_line) {
    Config cfg = cfg_in;
    const hacl::worldgen::Dataset ds = load_dataset_checked(data_dir);
    const std::string checksum = hacl::worldgen::dataset_checksum(data_dir);
    if (cfg.data_checksum && *cfg.data_checksum != checksum)
        throw DataError("dataset checksum " + checksum + " does not match config expectation " +
                        *cfg.data_checksum);
    if (!(ds.config == cfg.data))
        throw DataError("dataset at " + data_dir +
                        " was generated with different data.* settings than the config");
    if (cfg.stage1.mode == hacl::objective::Mode::hacl && cfg.data.hallucinated_per_scene == 0)
        throw UsageError("--mode hacl needs a dataset with hallucinated captions (k >= 1)");

    ensure_out_dir(out_dir, force);
    const hacl::train::TrainConfig tcfg = make_train_config(cfg);
    try {
        tcfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    hacl::model::TinyMllm mllm(tcfg.dims, tcfg.seed);

    const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw DataError("cannot write " + metrics_path);
    const auto sink = [&](const hacl::train::RunRecord& rec) {
        metrics << metrics_line_stage(rec) << '\n';
    };

    const auto t0 = std::chrono::steady_clock::now();
    const hacl::train::Stage0Result s0 = hacl::train::run_stage0(tcfg, ds, mllm, sink);
    const hacl::train::Stage1Result s1 = hacl::train::run_stage1(tcfg, ds, mllm, sink);
    metrics.close();
    const double wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const std::string ckpt_path = (fs::path(out_dir) / "checkpoint.bin").string();
    hacl::model::save_checkpoint(mllm.params(), tcfg.dims, ckpt_path);
    const std::string ckpt_sha = hacl::util::sha256_file(ckpt_path);

    ordered_json manifest;
    manifest["command"] = "train";
    manifest["argv"] = argv_line;
    manifest["config"] = config_to_flat(cfg);
    manifest["dataset_checksum"] = checksum;
    manifest["checkpoint_sha256"] = ckpt_sha;
    manifest["stage0_holdout_ce"] = s0.holdout_ce;
    manifest["stage1_first_window_mean"] = s1.first_window_mean;
    manifest["stage1_last_window_mean"] = s1.last_window_mean;
    manifest["wall_seconds"] = wall_s;
    manifest["created_at"] = timestamp_utc();
    std::ofstream mf(fs::path(out_dir) / "run_manifest.json", std::ios::binary);
    mf << manifest.dump(2) << '\n';

    std::cout << "stage0 holdout cross-entropy " << s0.holdout_ce << "\n"
              << "stage1 mode " << hacl::objective::mode_name(cfg.stage1.mode) << ", loss "
              << s1.first_window_mean << " -> " << s1.last_window_mean << "\n"
              << "checkpoint " << ckpt_path << " sha256 " << ckpt_sha << "\n";
    return 0;
}

hacl::model::Checkpoint load_checkpoint_checked(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
    try {
        return hacl::model::load_checkpoint(path);
    } catch (const hacl::model::CheckpointError& e) {
        throw DataError(e.what());
    }
}

ordered_json eval_record(const hacl::model::TinyMllm& mllm, const hacl::worldgen::Dataset& ds) {
    using namespace hacl::evalkit;
    if (ds.eval_scenes.empty()) throw UsageError("dataset has no eval split");
    const RepSet reps = build_repset(mllm, ds.eval_scenes, ds.eval_captions);

    ordered_json j;
    j["record"] = "eval";
    j["n_eval_scenes"] = ds.eval_scenes.size();
    j["modality_gap"] = modality_gap(reps);
    if (ds.config.hallucinated_per_scene > 0)
        j["hallucination_margin"] = hallucination_margin(reps);
    j["retrieval_at_1"] = retrieval_at_k(reps, 1);
    j["retrieval_at_5"] = retrieval_at_k(reps, std::min(5, static_cast<int>(ds.eval_scenes.size())));

    const auto items = make_probe_items(ds.eval_scenes, ds.config.seed);
    const size_t half = items.size() / 2;
    if (half == 0) throw UsageError("eval split too small for the probe");
    const std::span<const ProbeItem> calib(items.data(), half);
    const std::span<const ProbeItem> probe(items.data() + half, items.size() - half);
    const PopeMetrics pm = pope_probe(mllm, ds.eval_scenes, calib, probe);
    j["pope"] = ordered_json{{"accuracy", pm.accuracy}, {"precision", pm.precision},
                             {"recall", pm.recall},     {"f1", pm.f1},
                             {"yes_ratio", pm.yes_ratio}, {"n", pm.n}};
    return j;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out_dir, const Config* cfg) {
    const hacl::model::Checkpoint ckpt = load_checkpoint_checked(ckpt_path);
    if (cfg) {
        const hacl::model::Dims expected = make_dims(*cfg);
        if (!(ckpt.dims == expected))
            throw DataError("checkpoint dims do not match the config's model.* settings");
    }
    const hacl::worldgen::Dataset ds = load_dataset_checked(data_dir);
    {
        const ordered_json manifest = read_manifest(data_dir);
        if (manifest.at("counts").at("eval_scenes").get<int>() == 0)
            throw UsageError("dataset at " + data_dir + " has no eval split");
    }
    hacl::model::TinyMllm mllm(ckpt.dims, ckpt.params);

    const ordered_json record = eval_record(mllm, ds);
    fs::create_directories(out_dir);
    const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
    std::ofstream metrics(metrics_path, std::ios::binary | std::ios::app);
    if (!metrics) throw DataError("cannot write " + metrics_path);
    metrics << record.dump() << '\n';
    std::cout << record.dump(2) << "\n";
    return 0;
}

int cmd_project(const std::string& ckpt_path, const std::string& data_dir,
                const std::string& out_csv) {
    const hacl::model::Checkpoint ckpt = load_checkpoint_checked(ckpt_path);
    const hacl::worldgen::Dataset ds = load_dataset_checked(data_dir);
    if (ds.eval_scenes.empty()) throw UsageError("dataset has no eval split");
    hacl::model::TinyMllm mllm(ckpt.dims, ckpt.params);

    const hacl::evalkit::RepSet reps =
        hacl::evalkit::build_repset(mllm, ds.eval_scenes, ds.eval_captions);
    const hacl::evalkit::Projection proj = hacl::evalkit::pca_project(reps);
    if (const fs::path parent = fs::path(out_csv).parent_path(); !parent.empty())
        fs::create_directories(parent);
    hacl::evalkit::write_projection_csv(reps, proj, out_csv);
    std::cout << "wrote " << out_csv << " (" << reps.entries.size()
              << " rows, explained variance " << proj.explained_variance[0] << " + "
              << proj.explained_variance[1] << ")\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hallucination-augmented contrastive alignment laboratory"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out;
    bool force = false;
    std::optional<uint64_t> seed_override;
    app.add_option("--config", config_path, "JSON config file (flat dotted keys)");
    app.add_option("--out", out, "output directory");
    app.add_flag("--force", force, "overwrite non-empty output directories");
    app.add_option("--seed", seed_override, "override data.seed and train.seed");

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");

    CLI::App* train = app.add_subcommand("train", "run stage-0 and stage-1 training");
    std::string data_dir;
    std::string mode_name;
    std::vector<std::string> groups;
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--mode", mode_name, "stage-1 mode: no_cl|cl|hacl");
    train->add_option("--train-groups", groups, "stage-1 trainable groups (theta alpha beta)");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
    std::string ckpt_path;
    eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();

    CLI::App* project = app.add_subcommand("project", "export the 2D projection CSV");
    std::string out_csv;
    project->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    project->add_option("--data", data_dir, "dataset directory")->required();
    project->add_option("--out-csv", out_csv, "output CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        Config cfg = load_config(config_path);
        if (seed_override) {
            cfg.data.seed = *seed_override;
            cfg.train_seed = *seed_override;
        }
        if (!mode_name.empty()) {
            const auto m = hacl::objective::mode_from_name(mode_name);
            if (!m) throw UsageError("--mode must be no_cl|cl|hacl");
            cfg.stage1.mode = *m;
        }
        if (!groups.empty()) cfg.stage1.train_groups = parse_groups(groups);

        std::string argv_line;
        for (int i = 0; i < argc; ++i) {
            if (i) argv_line += ' ';
            argv_line += argv[i];
        }

        if (gen->parsed()) {
            if (out.empty()) throw UsageError("gen-data needs --out");
            return cmd_gen_data(cfg, out, force);
        }
        if (train->parsed()) {
            if (out.empty()) throw UsageError("train needs --out");
            return cmd_train(cfg, data_dir, out, force, argv_line);
        }
        if (eval->parsed()) {
            if (out.empty()) throw UsageError("eval needs --out");
            return cmd_eval(ckpt_path, data_dir, out, config_path.empty() ? nullptr : &cfg);
        }
        if (project->parsed()) return cmd_project(ckpt_path, data_dir, out_csv);
        throw UsageError("no subcommand");
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const hacl::train::NumericAbort& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "monl/commands.hpp"
#include "support/temp_dir.hpp"

using namespace monl;
using monl::testing::TempDir;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = cli_main(args, out, err);
    return {code, out.str(), err.str()};
}

std::string read_text(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// The smoke configuration shrunk further, with paths inside `dir`.
std::filesystem::path tiny_config(const TempDir& dir)
{
    std::ifstream in(std::filesystem::path(MONL_CONFIG_DIR) / "smoke.json");
    nlohmann::json j = nlohmann::json::parse(in);
    j["data"]["segments"] = 4;
    j["data"]["train_examples"] = 96;
    j["data"]["eval_examples"] = 48;
    j["model"]["model_dim"] = 8;
    j["model"]["timestep_embed_dim"] = 8;
    j["train"]["batch_size"] = 8;
    j["train"]["warmup_steps"] = 5;
    j["train"]["total_steps"] = 40;
    j["train"]["log_every"] = 5;
    j["train"]["checkpoint_every"] = 20;
    j["sample"]["steps"] = 5;
    j["sample"]["n_samples"] = 48;
    j["sample"]["continue_segments"] = 2;
    j["sample"]["inpaint_tail"] = 1;
    j["paths"] = {{"data_dir", "data"}, {"run_dir", "run"}};
    const auto path = dir / "tiny.json";
    std::ofstream(path) << j.dump(2);
    return path;
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& p)
{
    std::vector<nlohmann::json> rows;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
        rows.push_back(nlohmann::json::parse(line));
    }
    return rows;
}

} // namespace

TEST_CASE("usage errors")
{
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"train"}).code == kExitUsage); // --config is required
    CHECK(cli({"--help"}).code == kExitOk);
    TempDir dir("cli-usage");
    const auto cfg = tiny_config(dir).string();
    const auto r = cli({"sample", "--config", cfg, "--task", "a2a"});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("a2a") != std::string::npos);
    CHECK(cli({"train", "--config", cfg, "--strategy", "Pq"}).code == kExitUsage);
    CHECK(cli({"sample", "--config", cfg, "--sampler", "euler"}).code == kExitUsage);
    CHECK(cli({"sample", "--config", cfg, "--baseline", "masked"}).code == kExitUsage);
}

TEST_CASE("config errors name the offending field")
{
    TempDir dir("cli-config");
    const auto cfg = tiny_config(dir);
    nlohmann::json j = nlohmann::json::parse(read_text(cfg));

    j["train"].erase("ema_decay");
    std::ofstream(dir / "missing.json") << j.dump();
    auto r = cli({"gen-data", "--config", (dir / "missing.json").string()});
    CHECK(r.code != kExitOk);
    CHECK(r.err.find("train.ema_decay") != std::string::npos);

    j = nlohmann::json::parse(read_text(cfg));
    j["model"]["dropout"] = 0.1;
    std::ofstream(dir / "unknown.json") << j.dump();
    r = cli({"gen-data", "--config", (dir / "unknown.json").string()});
    CHECK(r.code != kExitOk);
    CHECK(r.err.find("model.dropout") != std::string::npos);

    j = nlohmann::json::parse(read_text(cfg));
    j["sample"]["steps"] = "many";
    std::ofstream(dir / "type.json") << j.dump();
    r = cli({"gen-data", "--config", (dir / "type.json").string()});
    CHECK(r.code != kExitOk);
    CHECK(r.err.find("sample.steps") != std::string::npos);

    r = cli({"gen-data", "--config", (dir / "absent.json").string()});
    CHECK(r.code != kExitOk);
}

TEST_CASE("inspect-schedule prints the table")
{
    TempDir dir("cli-sched");
    const auto r = cli({"inspect-schedule", "--config", tiny_config(dir).string(), "--every", "250"});
    CHECK(r.code == kExitOk);
    CHECK(r.out.find("alpha_bar") != std::string::npos);
    CHECK(r.out.find("1000") != std::string::npos);
}

TEST_CASE("end-to-end pipeline")
{
    TempDir dir("cli-e2e");
    const auto cfg = tiny_config(dir).string();

    // gen-data is deterministic.
    REQUIRE(cli({"gen-data", "--config", cfg}).code == kExitOk);
    const std::string train_bytes = read_text(dir / "data" / "train.monl");
    const std::string eval_bytes = read_text(dir / "data" / "eval.monl");
    REQUIRE(cli({"gen-data", "--config", cfg}).code == kExitOk);
    CHECK(read_text(dir / "data" / "train.monl") == train_bytes);
    CHECK(read_text(dir / "data" / "eval.monl") == eval_bytes);
    CHECK(std::filesystem::exists(dir / "data" / "gen-data.config.json"));
    REQUIRE(cli({"gen-data", "--config", cfg, "--seed", "5", "--out", (dir / "other").string()}).code == kExitOk);
    CHECK(read_text(dir / "other" / "train.monl") != train_bytes);

    // Sampling without a checkpoint is a runtime error.
    CHECK(cli({"sample", "--config", cfg}).code == kExitRuntime);

    // Training logs one line per log interval with MoNL counts near uniform.
    auto r = cli({"train", "--config", cfg});
    REQUIRE(r.code == kExitOk);
    const auto rows = read_jsonl(dir / "run" / "metrics.jsonl");
    REQUIRE(rows.size() == 8);
    CHECK(rows.back()["step"] == 40);
    for (const auto& row : rows) {
        CHECK(std::isfinite(row["loss"].get<double>()));
    }
    const auto& counts = rows.back()["strategy_counts"];
    int total = 0;
    for (const char* k : {"Vanilla", "Pm", "Pt", "Ptm"}) {
        total += counts[k].get<int>();
        CHECK(counts[k].get<int>() > 40);
    }
    CHECK(total == 40 * 8);
    const std::string full_ckpt = read_text(dir / "run" / "checkpoint.ckpt");

    // Stopping early and resuming lands on the same checkpoint.
    const auto split = (dir / "split").string();
    REQUIRE(cli({"train", "--config", cfg, "--run-dir", split, "--stop-at", "15"}).code == kExitOk);
    r = cli({"train", "--config", cfg, "--run-dir", split, "--resume", split + "/checkpoint.ckpt"});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("at step 15") != std::string::npos);
    CHECK(read_text(dir / "split" / "checkpoint.ckpt") == full_ckpt);

    // Vanilla training only counts Vanilla draws.
    const auto van = (dir / "van").string();
    REQUIRE(cli({"train", "--config", cfg, "--run-dir", van, "--strategy", "Vanilla"}).code == kExitOk);
    CHECK(read_jsonl(dir / "van" / "metrics.jsonl").back()["strategy_counts"]["Pm"] == 0);

    // Sample files carry the task mask; zero guidance equals omitting it.
    for (const char* task : {"joint", "a2v", "v2a", "continue", "inpaint"}) {
        REQUIRE(cli({"sample", "--config", cfg, "--task", task}).code == kExitOk);
    }
    const auto joint = load_samples(dir / "run" / "samples" / "joint.smpl");
    CHECK_FALSE(joint.mask.any());
    CHECK(joint.samples.size() == 48);
    const auto cont = load_samples(dir / "run" / "samples" / "continue.smpl");
    CHECK(cont.mask == task_mask(Task::Continue, 2, 4, {2, 1}));
    CHECK(std::filesystem::exists(dir / "run" / "samples" / "continue.config.json"));
    const auto zero = (dir / "zero.smpl").string();
    REQUIRE(cli({"sample", "--config", cfg, "--task", "continue", "--guidance", "0", "--out", zero}).code == kExitOk);
    const auto cont0 = load_samples(zero);
    REQUIRE(cont0.samples.size() == cont.samples.size());
    for (std::size_t i = 0; i < cont.samples.size(); ++i) {
        CHECK(cont0.samples[i] == cont.samples[i]);
    }
    const auto guided = (dir / "guided.smpl").string();
    REQUIRE(cli({"sample", "--config", cfg, "--task", "continue", "--guidance", "2", "--out", guided}).code ==
            kExitOk);
    CHECK_FALSE(load_samples(guided).samples[0] == cont.samples[0]);
    CHECK(cli({"sample", "--config", cfg, "--n", "1000"}).code != kExitOk);

    // Evaluation writes a valid, reproducible report.
    r = cli({"eval", "--config", cfg});
    INFO(r.err);
    REQUIRE(r.code == kExitOk);
    const auto report_text = read_text(dir / "run" / "report.json");
    const auto report = nlohmann::json::parse(report_text);
    CHECK_FALSE(validate_report(report).has_value());
    CHECK(count_metric_values(report) == 9);
    REQUIRE(cli({"eval", "--config", cfg}).code == kExitOk);
    CHECK(read_text(dir / "run" / "report.json") == report_text);

    // Baseline samples mixed with masked ones are rejected.
    REQUIRE(cli({"sample", "--config", cfg, "--task", "v2a", "--baseline", "replacement", "--checkpoint",
                 van + "/checkpoint.ckpt", "--out", (dir / "run" / "samples" / "v2a-replacement.smpl").string()})
                .code == kExitOk);
    CHECK(cli({"eval", "--config", cfg}).code == kExitRuntime);

    // Too few samples for the Frechet distance: reported per task, not fatal.
    const auto few = (dir / "few").string();
    REQUIRE(cli({"sample", "--config", cfg, "--task", "continue", "--n", "6", "--out", few + "/continue.smpl"})
                .code == kExitOk);
    r = cli({"eval", "--config", cfg, "--samples-dir", few, "--out", few + "/report.json"});
    REQUIRE(r.code == kExitOk);
    const auto few_report = nlohmann::json::parse(read_text(dir / "few" / "report.json"));
    CHECK(few_report["tasks"]["continue"]["frechet"].is_null());
    CHECK(few_report["tasks"]["continue"]["mse"].is_number());
    CHECK(few_report["tasks"]["continue"].contains("error"));

    std::filesystem::create_directories(dir / "empty");
    CHECK(cli({"eval", "--config", cfg, "--samples-dir", (dir / "empty").string()}).code != kExitOk);
}

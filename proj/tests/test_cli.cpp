#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

using namespace std;
namespace fs = std::filesystem;

namespace {

string tool_path() {
    const char* env = std::getenv("HVLA_CLI");
    REQUIRE_MESSAGE(env != nullptr, "HVLA_CLI must point at the CLI binary");
    return env;
}

struct RunResult {
    int exit_code;
    string output;
};

RunResult run(const string& args) {
    const string cmd = tool_path() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    string output;
    char buf[4096];
    while (fgets(buf, sizeof(buf), pipe)) output += buf;
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), output};
}

fs::path temp_dir(const char* name) {
    auto dir = fs::temp_directory_path() / "hvla_cli" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const string& text) {
    std::ofstream out(p);
    out << text;
}

const char* kTinyConfig = R"(
[data]
train = 24
valid = 8
test = 8
image_size = 16

[vision]
widths = [2, 3, 4, 6]

[text]
d_embed = 16
d_hidden = 16
d_out = 16

[aggregator]
d_out = 6
ffn_hidden = 8
drop_ratios = [0.5, 0.5, 0.5, 0.5]

[objective]
d_shared = 6
proj_hidden = 8

[train]
batch = 8
epochs = 2
seed = 5
)";

}  // namespace

TEST_CASE("cli: usage errors exit with 2") {
    CHECK(run("generate").exit_code == 2);  // missing --out
    CHECK(run("nonsense").exit_code == 2);
    CHECK(run("--help").exit_code == 0);
}

TEST_CASE("cli: generate is deterministic and guards non-empty outputs") {
    auto dir = temp_dir("gen");
    const string base = "generate --seed 7 --counts 12,4,4 --image-size 16 --out ";
    CHECK(run(base + (dir / "a").string()).exit_code == 0);
    CHECK(run(base + (dir / "b").string()).exit_code == 0);
    for (const char* f : {"manifest.json", "train.jsonl", "train_images.bin", "test.jsonl"}) {
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
    // refuses to clobber without --force
    auto guarded = run(base + (dir / "a").string());
    CHECK(guarded.exit_code == 3);
    CHECK(guarded.output.find("--force") != string::npos);
    CHECK(run(base + (dir / "a").string() + " --force").exit_code == 0);

    // k = 1 violates the generator precondition
    auto bad = run("generate --k 1 --out " + (dir / "c").string());
    CHECK(bad.exit_code == 3);
}

TEST_CASE("cli: pretrain, dry-run, evaluate, divergence") {
    auto dir = temp_dir("train");
    write_file(dir / "cfg.toml", kTinyConfig);
    REQUIRE(run("generate --seed 3 --counts 24,8,8 --image-size 16 --out " +
                (dir / "corpus").string())
                .exit_code == 0);

    auto dry = run("pretrain " + (dir / "cfg.toml").string() + " --dry-run");
    CHECK(dry.exit_code == 0);
    CHECK(dry.output.find("parameter count") != string::npos);

    auto train_run = run("pretrain " + (dir / "cfg.toml").string() + " --corpus " +
                    (dir / "corpus").string() + " --out " + (dir / "run").string());
    CHECK(train_run.exit_code == 0);
    CHECK(fs::exists(dir / "run" / "metrics.csv"));
    {
        std::ifstream metrics(dir / "run" / "metrics.csv");
        string header;
        std::getline(metrics, header);
        CHECK(header.rfind("step,epoch,lr,loss_total", 0) == 0);
        string first_row;
        CHECK(bool(std::getline(metrics, first_row)));
    }

    // malformed config: line/column diagnostic, exit 3
    write_file(dir / "bad.toml", "[train]\nepochs = \n");
    auto bad = run("pretrain " + (dir / "bad.toml").string());
    CHECK(bad.exit_code == 3);
    CHECK(bad.output.find("line 2") != string::npos);

    // unknown config key rejected
    write_file(dir / "unknown.toml", "[train]\nbtach = 4\n");
    CHECK(run("pretrain " + (dir / "unknown.toml").string()).exit_code == 3);

    // evaluate twice gives identical JSON
    const string eval_cmd = "evaluate --run " + (dir / "run").string() + " --corpus " +
                            (dir / "corpus").string() + " --tasks zeroshot retrieval";
    auto e1 = run(eval_cmd);
    auto e2 = run(eval_cmd);
    CHECK(e1.exit_code == 0);
    CHECK(e1.output == e2.output);
    CHECK(e1.output.find("macro_auc") != string::npos);

    auto bad_task = run("evaluate --run " + (dir / "run").string() + " --corpus " +
                        (dir / "corpus").string() + " --tasks bogus");
    CHECK(bad_task.exit_code == 2);
    CHECK(bad_task.output.find("zeroshot") != string::npos);

    // checkpoint/config hash mismatch rejected
    {
        string cfg = slurp(dir / "run" / "config.toml");
        const auto pos = cfg.find("seed = 5");
        REQUIRE(pos != string::npos);
        cfg.replace(pos, 8, "seed = 6");
        write_file(dir / "run" / "config.toml", cfg);
    }
    auto mismatch = run(eval_cmd);
    CHECK(mismatch.exit_code == 3);
    CHECK(mismatch.output.find("hash mismatch") != string::npos);

    // divergence: absurd learning rate exits 4 naming the term
    string divergent = kTinyConfig;
    const auto epochs_pos = divergent.find("epochs = 2");
    REQUIRE(epochs_pos != string::npos);
    divergent.replace(epochs_pos, 10, "epochs = 30");
    divergent += "lr = 1e3\n";
    write_file(dir / "divergent.toml", divergent);
    auto div = run("pretrain " + (dir / "divergent.toml").string() + " --corpus " +
                   (dir / "corpus").string() + " --out " + (dir / "divrun").string());
    CHECK(div.exit_code == 4);
    CHECK(div.output.find("non-finite") != string::npos);
    CHECK(div.output.find("checkpoint") != string::npos);
}

TEST_CASE("cli: ablate runs a grid, resumes, and empty grids give a header-only csv") {
    auto dir = temp_dir("ablate");
    write_file(dir / "cfg.toml", kTinyConfig);
    REQUIRE(run("generate --seed 3 --counts 24,8,8 --image-size 16 --out " +
                (dir / "corpus").string())
                .exit_code == 0);

    write_file(dir / "empty.toml", "seeds = [1]\n");
    auto empty = run("ablate --grid " + (dir / "empty.toml").string() + " --base " +
                     (dir / "cfg.toml").string() + " --corpus " + (dir / "corpus").string() +
                     " --out " + (dir / "empty_out").string());
    CHECK(empty.exit_code == 0);
    CHECK(slurp(dir / "empty_out" / "results.csv") ==
          "cell,seed,status,initial_loss,final_loss,zeroshot_auc,retrieval_p5,chance_rate\n");

    write_file(dir / "grid.toml", R"(
seeds = [1, 2]

[cells.full]

[cells.no_mid]
terms = ["vvh", "vlh"]

[cells.bad_kernel]
kernel = "cubic"
)");
    const string cmd = "ablate --grid " + (dir / "grid.toml").string() + " --base " +
                       (dir / "cfg.toml").string() + " --corpus " + (dir / "corpus").string() +
                       " --out " + (dir / "out").string();
    auto first = run(cmd);
    CHECK(first.exit_code == 0);
    const string results = slurp(dir / "out" / "results.csv");
    CHECK(results.find("full,1,ok") != string::npos);
    CHECK(results.find("full,2,ok") != string::npos);
    CHECK(results.find("no_mid,1,ok") != string::npos);
    CHECK(results.find("bad_kernel,1,invalid") != string::npos);

    // resume: delete one row file; the second pass reuses the rest and
    // rebuilds an identical results.csv
    fs::remove(dir / "out" / "rows" / "full__s2.csv");
    auto second = run(cmd);
    CHECK(second.exit_code == 0);
    CHECK(second.output.find("reusing") != string::npos);
    CHECK(slurp(dir / "out" / "results.csv") == results);
}

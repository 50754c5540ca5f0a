#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "hvla/corpus.hpp"
#include "hvla/rng.hpp"

using namespace hvla;
namespace fs = std::filesystem;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig cfg;
    cfg.train = 40;
    cfg.valid = 10;
    cfg.test = 10;
    cfg.image_size = 16;
    cfg.seed = 11;
    return cfg;
}

fs::path temp_dir(const char* name) {
    auto dir = fs::temp_directory_path() / "hvla_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const auto n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, va = 0, vb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    return num / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("generator: determinism and validation") {
    auto a = generate_corpus(small_config());
    auto b = generate_corpus(small_config());
    REQUIRE(a.train.size() == b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) {
        CHECK(a.train[i].image.v == b.train[i].image.v);
        CHECK(a.train[i].report.findings == b.train[i].report.findings);
        CHECK(a.train[i].conditions == b.train[i].conditions);
    }

    GeneratorConfig bad = small_config();
    bad.k = 1;
    CHECK_THROWS_AS(generate_corpus(bad), std::invalid_argument);
    bad.k = 99;
    CHECK_THROWS_WITH_AS(generate_corpus(bad), doctest::Contains("too small"),
                         std::invalid_argument);
}

TEST_CASE("generator: record structure") {
    auto corpus = generate_corpus(small_config());
    const auto no_id = corpus.token_id("no");
    const auto finding_id = corpus.token_id("finding");

    // ids unique and disjoint across splits
    std::set<int64_t> ids;
    for (const auto* split : {&corpus.train, &corpus.valid, &corpus.test}) {
        for (const auto& rec : *split) CHECK(ids.insert(rec.id).second);
    }

    bool saw_empty = false;
    for (const auto& rec : corpus.train) {
        int64_t active = 0;
        for (auto c : rec.conditions) active += c;
        if (active == 0) {
            saw_empty = true;
            CHECK(rec.report.impressions == std::vector<int32_t>{no_id, finding_id});
        } else {
            CHECK(static_cast<int64_t>(rec.report.impressions.size()) == active);
            CHECK(static_cast<int64_t>(rec.report.findings.size()) == 4 * active);
        }
        for (double v : rec.image.v) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK(saw_empty);

    // identical condition vectors give identical impressions sequences
    for (const auto& a : corpus.train) {
        for (const auto& b : corpus.valid) {
            if (a.conditions == b.conditions) {
                CHECK(a.report.impressions == b.report.impressions);
            }
        }
    }
}

TEST_CASE("generator: prevalence within three standard errors") {
    GeneratorConfig cfg = small_config();
    cfg.train = 1000;
    cfg.seed = 5;
    auto corpus = generate_corpus(cfg);
    const double se = std::sqrt(cfg.rate * (1 - cfg.rate) / static_cast<double>(cfg.train));
    for (int64_t c = 0; c < cfg.k; ++c) {
        double freq = 0;
        for (const auto& rec : corpus.train) freq += rec.conditions[static_cast<size_t>(c)];
        freq /= static_cast<double>(cfg.train);
        CHECK(std::abs(freq - cfg.rate) < 3.0 * se);
    }
}

TEST_CASE("generator: shared conditions raise report-embedding correlation") {
    GeneratorConfig cfg = small_config();
    cfg.train = 300;
    cfg.seed = 3;
    auto corpus = generate_corpus(cfg);
    TextEncoder enc(static_cast<int64_t>(corpus.vocabulary.size()), TextConfig{});

    std::vector<std::vector<double>> emb;
    for (const auto& rec : corpus.train) emb.push_back(enc.encode(rec.report.impressions));

    auto shares = [](const Record& a, const Record& b) {
        for (size_t i = 0; i < a.conditions.size(); ++i) {
            if (a.conditions[i] && b.conditions[i]) return true;
        }
        return false;
    };
    double shared_sum = 0, disjoint_sum = 0;
    int64_t shared_n = 0, disjoint_n = 0;
    Rng rng(17);
    while (shared_n + disjoint_n < 1000 || shared_n < 100 || disjoint_n < 100) {
        const auto i = static_cast<size_t>(rng.below(corpus.train.size()));
        const auto j = static_cast<size_t>(rng.below(corpus.train.size()));
        if (i == j) continue;
        const double corr = pearson(emb[i], emb[j]);
        if (shares(corpus.train[i], corpus.train[j])) {
            shared_sum += corr;
            ++shared_n;
        } else {
            disjoint_sum += corr;
            ++disjoint_n;
        }
    }
    const double margin = shared_sum / shared_n - disjoint_sum / disjoint_n;
    CHECK(margin >= 0.05);
}

TEST_CASE("corpus io: lossless round trip and bit-identical regeneration") {
    auto dir = temp_dir("roundtrip");
    auto corpus = generate_corpus(small_config());
    save_corpus(corpus, dir);
    auto loaded = load_corpus(dir);

    REQUIRE(loaded.train.size() == corpus.train.size());
    for (size_t i = 0; i < corpus.train.size(); ++i) {
        CHECK(loaded.train[i].id == corpus.train[i].id);
        CHECK(loaded.train[i].conditions == corpus.train[i].conditions);
        CHECK(loaded.train[i].image.v == corpus.train[i].image.v);
        CHECK(loaded.train[i].report.findings == corpus.train[i].report.findings);
        CHECK(loaded.train[i].report.impressions == corpus.train[i].report.impressions);
    }
    CHECK(loaded.vocabulary == corpus.vocabulary);

    // saving the loaded corpus reproduces identical files
    auto dir2 = temp_dir("roundtrip2");
    save_corpus(loaded, dir2);
    for (const char* name : {"manifest.json", "train.jsonl", "train_images.bin"}) {
        std::ifstream f1(dir / name, std::ios::binary), f2(dir2 / name, std::ios::binary);
        std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
        std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
        CHECK(s1 == s2);
    }
}

TEST_CASE("corpus io: corruption is rejected") {
    auto dir = temp_dir("corruption");
    auto corpus = generate_corpus(small_config());
    save_corpus(corpus, dir);

    SUBCASE("truncated blob names the offending record id") {
        fs::resize_file(dir / "train_images.bin", fs::file_size(dir / "train_images.bin") - 8);
        CHECK_THROWS_WITH_AS(load_corpus(dir),
                             doctest::Contains("truncated at record id 39"),
                             std::runtime_error);
    }
    SUBCASE("flipped byte is caught by the checksum with expected/actual") {
        {
            std::fstream f(dir / "train_images.bin",
                           std::ios::binary | std::ios::in | std::ios::out);
            f.seekp(100);
            char c = 0x5a;
            f.write(&c, 1);
        }
        CHECK_THROWS_WITH_AS(load_corpus(dir), doctest::Contains("checksum mismatch"),
                             std::runtime_error);
    }
    SUBCASE("appended record is caught by the checksum") {
        {
            std::ofstream f(dir / "train.jsonl", std::ios::app);
            f << R"({"id":9999,"conditions":[0,0,0,0,0],"findings":[2],"impressions":[0,1]})"
              << "\n";
        }
        CHECK_THROWS_WITH_AS(load_corpus(dir), doctest::Contains("checksum"),
                             std::runtime_error);
    }
    SUBCASE("version mismatch is rejected with expected and actual") {
        auto manifest_path = dir / "manifest.json";
        std::ifstream in(manifest_path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        const auto pos = text.find("\"format_version\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 19, "\"format_version\": 9");
        std::ofstream out(manifest_path);
        out << text;
        out.close();
        CHECK_THROWS_WITH_AS(load_corpus(dir), doctest::Contains("version mismatch"),
                             std::runtime_error);
    }
}


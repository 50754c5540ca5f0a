#include "hvla/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "hvla/hash.hpp"
#include "hvla/rng.hpp"

namespace hvla {

namespace {

using json = nlohmann::ordered_json;

const std::vector<std::string> kConditionPool{"consolidation", "effusion",     "nodule",
                                              "cardiomegaly",  "pneumothorax", "edema",
                                              "atelectasis",   "fracture"};
const std::vector<std::string> kShapes{"round",   "oval",    "patchy",  "linear",
                                       "wedge",   "lobular", "streaky", "nodular"};
const std::vector<std::string> kPositions{"upper_left", "upper_right", "central",
                                          "lower_left", "lower_right", "apical",
                                          "basal",      "perihilar"};
const std::vector<std::string> kSizes{"small", "moderate", "large"};
const std::vector<std::string> kIntensities{"faint", "mild", "dense"};
const std::vector<std::string> kFiller{"lungs", "clear", "fields"};

std::vector<std::string> build_vocabulary(int64_t k) {
    std::vector<std::string> vocab{"no", "finding"};
    for (int64_t i = 0; i < k; ++i) vocab.push_back(kConditionPool[static_cast<size_t>(i)]);
    auto append = [&vocab](const std::vector<std::string>& words) {
        vocab.insert(vocab.end(), words.begin(), words.end());
    };
    append(kFiller);
    append(kShapes);
    append(kPositions);
    append(kSizes);
    append(kIntensities);
    return vocab;
}

void render_blob(Image& img, double cy, double cx, double sigma, double amplitude) {
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            img.at(y, x) = std::min(1.0, img.at(y, x) + amplitude * std::exp(-d2 * inv));
        }
    }
}

Record make_record(const GeneratorConfig& cfg, const Corpus& corpus, int64_t id) {
    Rng rng(derive_seed(cfg.seed, "record", static_cast<uint64_t>(id)));
    Record rec;
    rec.id = id;
    rec.conditions.resize(static_cast<size_t>(cfg.k), 0);
    for (auto& c : rec.conditions) c = rng.uniform() < cfg.rate ? 1 : 0;

    const int hw = cfg.image_size;
    rec.image = Image{hw, hw, std::vector<double>(static_cast<size_t>(hw * hw))};
    for (auto& v : rec.image.v) v = rng.uniform(0.0, cfg.noise);

    auto tok = [&corpus](const std::string& w) { return corpus.token_id(w); };
    for (int64_t k = 0; k < cfg.k; ++k) {
        if (!rec.conditions[static_cast<size_t>(k)]) continue;
        const auto size_idx = static_cast<size_t>(rng.below(3));
        const auto intensity_idx = static_cast<size_t>(rng.below(3));
        rec.report.findings.push_back(tok(kSizes[size_idx]));
        rec.report.findings.push_back(tok(kIntensities[intensity_idx]));
        rec.report.findings.push_back(tok(kShapes[static_cast<size_t>(k)]));
        rec.report.findings.push_back(tok(kPositions[static_cast<size_t>(k)]));
        rec.report.impressions.push_back(tok(corpus.condition_names[static_cast<size_t>(k)]));

        // one localized texture blob per active condition, placed on a ring
        const double angle =
            2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cfg.k);
        const double cy = 0.5 * (hw - 1) + 0.30 * hw * std::sin(angle);
        const double cx = 0.5 * (hw - 1) + 0.30 * hw * std::cos(angle);
        const double size_factor[3] = {0.7, 1.0, 1.4};
        const double sigma = 0.09 * hw * size_factor[size_idx];
        const double amplitude = 0.45 + 0.15 * static_cast<double>(intensity_idx);
        render_blob(rec.image, cy, cx, sigma, amplitude);
    }
    if (rec.report.findings.empty()) {
        for (const auto& w : kFiller) rec.report.findings.push_back(tok(w));
    }
    if (rec.report.impressions.empty()) {
        rec.report.impressions = {tok("no"), tok("finding")};
    }
    validate_report(rec.report);
    return rec;
}

std::string image_file(const std::string& split) { return split + "_images.bin"; }
std::string record_file(const std::string& split) { return split + ".jsonl"; }

uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    uint64_t h = kFnvBasis;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h = fnv1a64(buf, static_cast<size_t>(in.gcount()), h);
    }
    return h;
}

void write_split(const std::filesystem::path& dir, const std::string& split,
                 const std::vector<Record>& records) {
    std::ofstream text(dir / record_file(split));
    std::ofstream blob(dir / image_file(split), std::ios::binary);
    for (const auto& rec : records) {
        json line;
        line["id"] = rec.id;
        line["conditions"] = rec.conditions;
        line["findings"] = rec.report.findings;
        line["impressions"] = rec.report.impressions;
        text << line.dump() << '\n';
        blob.write(reinterpret_cast<const char*>(rec.image.v.data()),
                   static_cast<std::streamsize>(rec.image.v.size() * sizeof(double)));
    }
}

std::vector<Record> parse_records(const std::filesystem::path& dir, const std::string& split) {
    std::ifstream text(dir / record_file(split));
    if (!text) throw std::runtime_error("cannot open " + (dir / record_file(split)).string());
    std::vector<Record> records;
    std::string line;
    while (std::getline(text, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        Record rec;
        rec.id = j.at("id").get<int64_t>();
        rec.conditions = j.at("conditions").get<std::vector<uint8_t>>();
        rec.report.findings = j.at("findings").get<std::vector<int32_t>>();
        rec.report.impressions = j.at("impressions").get<std::vector<int32_t>>();
        validate_report(rec.report);
        records.push_back(std::move(rec));
    }
    return records;
}

// The blob length is checked before the checksum pass so truncation gets the
// precise record-id diagnostic rather than a generic checksum failure.
void check_blob_length(const std::filesystem::path& dir, const std::string& split,
                       int64_t expected_count, int image_size) {
    const auto blob_path = dir / image_file(split);
    if (!std::filesystem::exists(blob_path)) {
        throw std::runtime_error("cannot open " + blob_path.string());
    }
    const auto actual = static_cast<uint64_t>(std::filesystem::file_size(blob_path));
    const uint64_t record_bytes = static_cast<uint64_t>(image_size) * image_size * sizeof(double);
    const uint64_t expected = static_cast<uint64_t>(expected_count) * record_bytes;
    if (actual == expected) return;
    const uint64_t complete = actual / record_bytes;
    int64_t offending = -1;
    try {
        const auto records = parse_records(dir, split);
        if (complete < records.size()) offending = records[static_cast<size_t>(complete)].id;
    } catch (...) {
        // fall through with the index-only diagnostic
    }
    throw std::runtime_error("corpus: image blob '" + image_file(split) +
                             "' truncated at record id " + std::to_string(offending) + " (" +
                             std::to_string(actual) + " of " + std::to_string(expected) +
                             " bytes)");
}

std::vector<Record> read_split(const std::filesystem::path& dir, const std::string& split,
                               int64_t expected_count, int image_size) {
    std::vector<Record> records = parse_records(dir, split);
    if (static_cast<int64_t>(records.size()) != expected_count) {
        throw std::runtime_error("corpus: split '" + split + "' has " +
                                 std::to_string(records.size()) + " records, manifest says " +
                                 std::to_string(expected_count));
    }
    const auto blob_path = dir / image_file(split);
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw std::runtime_error("cannot open " + blob_path.string());
    const uint64_t record_bytes = static_cast<uint64_t>(image_size) * image_size * sizeof(double);
    for (auto& rec : records) {
        rec.image = Image{image_size, image_size,
                          std::vector<double>(static_cast<size_t>(image_size) * image_size)};
        blob.read(reinterpret_cast<char*>(rec.image.v.data()),
                  static_cast<std::streamsize>(record_bytes));
    }
    return records;
}

}  // namespace

const std::vector<Record>& Corpus::split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split '" + name + "'");
}

int32_t Corpus::token_id(const std::string& token) const {
    const auto it = std::find(vocabulary.begin(), vocabulary.end(), token);
    if (it == vocabulary.end()) {
        throw std::invalid_argument("token '" + token + "' not in vocabulary");
    }
    return static_cast<int32_t>(it - vocabulary.begin());
}

Corpus generate_corpus(const GeneratorConfig& config) {
    if (config.k < 2) throw std::invalid_argument("corpus: k must be at least 2");
    if (config.k > static_cast<int64_t>(kConditionPool.size())) {
        throw std::invalid_argument(
            "corpus: vocabulary has " + std::to_string(kConditionPool.size()) +
            " condition names, too small for k=" + std::to_string(config.k));
    }
    if (config.train < 1 || config.valid < 1 || config.test < 1) {
        throw std::invalid_argument("corpus: each split needs at least one record");
    }
    if (config.rate <= 0.0 || config.rate >= 1.0) {
        throw std::invalid_argument("corpus: rate must be inside (0,1)");
    }
    Corpus corpus;
    corpus.config = config;
    corpus.vocabulary = build_vocabulary(config.k);
    corpus.condition_names.assign(kConditionPool.begin(), kConditionPool.begin() + config.k);

    int64_t id = 0;
    auto fill = [&](std::vector<Record>& out, int64_t n) {
        out.reserve(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) out.push_back(make_record(config, corpus, id++));
    };
    fill(corpus.train, config.train);
    fill(corpus.valid, config.valid);
    fill(corpus.test, config.test);
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_split(dir, "train", corpus.train);
    write_split(dir, "valid", corpus.valid);
    write_split(dir, "test", corpus.test);

    json manifest;
    manifest["format_version"] = kCorpusFormatVersion;
    manifest["seed"] = corpus.config.seed;
    manifest["k"] = corpus.config.k;
    manifest["rate"] = corpus.config.rate;
    manifest["image_size"] = corpus.config.image_size;
    manifest["noise"] = corpus.config.noise;
    manifest["counts"] = {{"train", corpus.config.train},
                          {"valid", corpus.config.valid},
                          {"test", corpus.config.test}};
    manifest["vocabulary"] = corpus.vocabulary;
    manifest["condition_names"] = corpus.condition_names;
    json checksums;
    for (const std::string split : {"train", "valid", "test"}) {
        checksums[record_file(split)] = hash_hex(file_hash(dir / record_file(split)));
        checksums[image_file(split)] = hash_hex(file_hash(dir / image_file(split)));
    }
    manifest["checksums"] = checksums;
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("cannot open " + (dir / "manifest.json").string());
    json manifest = json::parse(in);

    const int version = manifest.at("format_version").get<int>();
    if (version != kCorpusFormatVersion) {
        throw std::runtime_error("corpus: format version mismatch, expected " +
                                 std::to_string(kCorpusFormatVersion) + ", found " +
                                 std::to_string(version));
    }
    {
        const int image_size = manifest.at("image_size").get<int>();
        for (const std::string split : {"train", "valid", "test"}) {
            check_blob_length(dir, split, manifest.at("counts").at(split).get<int64_t>(),
                              image_size);
        }
    }
    for (const auto& [file, expected] : manifest.at("checksums").items()) {
        const std::string actual = hash_hex(file_hash(dir / file));
        if (actual != expected.get<std::string>()) {
            throw std::runtime_error("corpus: checksum mismatch for " + file + ", expected " +
                                     expected.get<std::string>() + ", actual " + actual);
        }
    }

    Corpus corpus;
    corpus.config.seed = manifest.at("seed").get<uint64_t>();
    corpus.config.k = manifest.at("k").get<int64_t>();
    corpus.config.rate = manifest.at("rate").get<double>();
    corpus.config.image_size = manifest.at("image_size").get<int>();
    corpus.config.noise = manifest.at("noise").get<double>();
    corpus.config.train = manifest.at("counts").at("train").get<int64_t>();
    corpus.config.valid = manifest.at("counts").at("valid").get<int64_t>();
    corpus.config.test = manifest.at("counts").at("test").get<int64_t>();
    corpus.vocabulary = manifest.at("vocabulary").get<std::vector<std::string>>();
    corpus.condition_names = manifest.at("condition_names").get<std::vector<std::string>>();

    corpus.train = read_split(dir, "train", corpus.config.train, corpus.config.image_size);
    corpus.valid = read_split(dir, "valid", corpus.config.valid, corpus.config.image_size);
    corpus.test = read_split(dir, "test", corpus.config.test, corpus.config.image_size);
    return corpus;
}

}  // namespace hvla

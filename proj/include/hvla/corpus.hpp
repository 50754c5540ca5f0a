#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hvla/encoders.hpp"

namespace hvla {

struct GeneratorConfig {
    int64_t k = 5;       // conditions; needs 2 <= k <= name pool size
    double rate = 0.3;   // per-condition Bernoulli prevalence
    int64_t train = 2000;
    int64_t valid = 500;
    int64_t test = 500;
    int image_size = 32;
    double noise = 0.1;  // background noise amplitude
    uint64_t seed = 7;
};

struct Record {
    int64_t id = 0;
    std::vector<uint8_t> conditions;  // K entries in {0,1}
    Image image;
    ReportPair report;
};

struct Corpus {
    GeneratorConfig config;
    std::vector<std::string> vocabulary;
    std::vector<std::string> condition_names;  // k entries, also in vocabulary
    std::vector<Record> train, valid, test;

    const std::vector<Record>& split(const std::string& name) const;
    int32_t token_id(const std::string& token) const;  // throws if absent
};

// Every record is a pure function of (seed, id): condition draws, attribute
// draws, one localized blob per active condition plus background noise.
// Findings list per-condition attribute tokens; impressions list the active
// condition names, or "no finding".
Corpus generate_corpus(const GeneratorConfig& config);

// Directory layout: manifest.json + {split}.jsonl + {split}_images.bin (raw
// little-endian doubles). Checksums and counts are verified on load.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

inline constexpr int kCorpusFormatVersion = 1;

}  // namespace hvla

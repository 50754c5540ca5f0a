#include "hvla/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <set>
#include <sstream>

#include "hvla/hash.hpp"
#include "hvla/objective.hpp"

namespace hvla {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    std::string s(buf);
    // keep floats recognizable as floats in the round trip
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos) {
        s += ".0";
    }
    return s;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        "data.k",
        "data.rate",
        "data.train",
        "data.valid",
        "data.test",
        "data.image_size",
        "data.noise",
        "data.seed",
        "vision.widths",
        "text.d_embed",
        "text.d_hidden",
        "text.d_out",
        "text.frozen_seed",
        "aggregator.grid",
        "aggregator.heads",
        "aggregator.d_out",
        "aggregator.ffn_hidden",
        "aggregator.drop_ratios",
        "objective.tau",
        "objective.lambda",
        "objective.kernel",
        "objective.d_shared",
        "objective.proj_hidden",
        "objective.terms",
        "objective.align",
        "train.batch",
        "train.epochs",
        "train.lr",
        "train.weight_decay",
        "train.warmup_frac",
        "train.patience",
        "train.eval_every",
        "train.log_every",
        "train.seed",
    };
    return keys;
}

}  // namespace

RunConfig RunConfig::from_toml(const toml::Document& doc) {
    for (const auto& [key, value] : doc.values) {
        if (!known_keys().count(key)) {
            throw toml::ParseError("unknown config key '" + key + "'", value.line, 1);
        }
    }
    RunConfig cfg;
    auto get_int = [&](const char* key, int64_t& out) {
        if (doc.contains(key)) out = doc.at(key).as_int();
    };
    auto get_uint = [&](const char* key, uint64_t& out) {
        if (doc.contains(key)) out = static_cast<uint64_t>(doc.at(key).as_int());
    };
    auto get_double = [&](const char* key, double& out) {
        if (doc.contains(key)) out = doc.at(key).as_double();
    };
    auto get_string = [&](const char* key, std::string& out) {
        if (doc.contains(key)) out = doc.at(key).as_string();
    };

    get_int("data.k", cfg.data.k);
    get_double("data.rate", cfg.data.rate);
    get_int("data.train", cfg.data.train);
    get_int("data.valid", cfg.data.valid);
    get_int("data.test", cfg.data.test);
    if (doc.contains("data.image_size")) {
        cfg.data.image_size = static_cast<int>(doc.at("data.image_size").as_int());
    }
    get_double("data.noise", cfg.data.noise);
    get_uint("data.seed", cfg.data.seed);

    if (doc.contains("vision.widths")) cfg.vision.widths = doc.at("vision.widths").as_int_array();

    get_int("text.d_embed", cfg.text.d_embed);
    get_int("text.d_hidden", cfg.text.d_hidden);
    get_int("text.d_out", cfg.text.d_out);
    get_uint("text.frozen_seed", cfg.text.frozen_seed);

    get_int("aggregator.grid", cfg.aggregator.grid);
    get_int("aggregator.heads", cfg.aggregator.heads);
    cfg.aggregator.d_out = 0;  // resolved against the last stage width below
    get_int("aggregator.d_out", cfg.aggregator.d_out);
    get_int("aggregator.ffn_hidden", cfg.aggregator.ffn_hidden);
    if (doc.contains("aggregator.drop_ratios")) {
        cfg.aggregator.drop_ratios = doc.at("aggregator.drop_ratios").as_double_array();
    }

    get_double("objective.tau", cfg.objective.tau);
    get_double("objective.lambda", cfg.objective.lambda);
    get_string("objective.kernel", cfg.objective.kernel);
    get_int("objective.d_shared", cfg.objective.d_shared);
    get_int("objective.proj_hidden", cfg.objective.proj_hidden);
    if (doc.contains("objective.terms")) {
        cfg.objective.terms = doc.at("objective.terms").as_string_array();
    }
    get_string("objective.align", cfg.objective.align);

    get_int("train.batch", cfg.train.batch);
    get_int("train.epochs", cfg.train.epochs);
    get_double("train.lr", cfg.train.lr);
    get_double("train.weight_decay", cfg.train.weight_decay);
    get_double("train.warmup_frac", cfg.train.warmup_frac);
    get_int("train.patience", cfg.train.patience);
    get_int("train.eval_every", cfg.train.eval_every);
    get_int("train.log_every", cfg.train.log_every);
    get_uint("train.seed", cfg.train.seed);

    if (cfg.aggregator.d_out == 0 && !cfg.vision.widths.empty()) {
        cfg.aggregator.d_out = cfg.vision.widths.back();
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    return from_toml(toml::parse_file(path));
}

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (data.k < 2) fail("data.k must be at least 2");
    if (data.rate <= 0.0 || data.rate >= 1.0) fail("data.rate must be inside (0,1)");
    if (data.train < 1 || data.valid < 1 || data.test < 1) fail("split counts must be >= 1");
    if (data.image_size < VisionEncoder::kMinExtent ||
        data.image_size % VisionEncoder::kMinExtent != 0) {
        fail("data.image_size must be a positive multiple of " +
             std::to_string(VisionEncoder::kMinExtent));
    }
    if (data.noise < 0.0 || data.noise > 1.0) fail("data.noise must be in [0,1]");
    if (vision.widths.size() != VisionEncoder::kStages) {
        fail("vision.widths needs exactly " + std::to_string(VisionEncoder::kStages) +
             " entries");
    }
    for (size_t i = 1; i < vision.widths.size(); ++i) {
        if (vision.widths[i] <= vision.widths[i - 1]) {
            fail("vision.widths must strictly increase");
        }
    }
    if (text.d_embed < 1 || text.d_hidden < 1 || text.d_out < 1) fail("text dims must be >= 1");
    if (aggregator.grid < 1) fail("aggregator.grid must be >= 1");
    const int64_t d_tok = aggregator.grid * aggregator.grid;
    if (aggregator.heads < 1 || d_tok % aggregator.heads != 0) {
        fail("aggregator.heads must divide grid^2");
    }
    if (aggregator.ffn_hidden < 1) fail("aggregator.ffn_hidden must be >= 1");
    if (aggregator.drop_ratios.size() != vision.widths.size()) {
        fail("aggregator.drop_ratios needs one entry per stage");
    }
    for (double r : aggregator.drop_ratios) {
        if (r < 0.0 || r >= 1.0) fail("drop ratios must be in [0,1)");
    }
    if (aggregator.d_out != vision.widths.back()) {
        fail("aggregator.d_out must equal the last stage width (" +
             std::to_string(vision.widths.back()) + ") so one visual projector serves both "
             "latent roles");
    }
    if (objective.tau <= 0.0) fail("objective.tau must be positive");
    if (objective.lambda <= 0.0) fail("objective.lambda must be positive");
    parse_kernel(objective.kernel);
    parse_terms(objective.terms);
    parse_align(objective.align);
    if (objective.d_shared < 1 || objective.proj_hidden < 1) fail("projector dims must be >= 1");
    if (train.batch < 2) fail("train.batch must be at least 2");
    if (train.epochs < 0) fail("train.epochs must be >= 0");
    if (train.lr < 0.0) fail("train.lr must be >= 0");
    if (train.weight_decay < 0.0) fail("train.weight_decay must be >= 0");
    if (train.warmup_frac < 0.0 || train.warmup_frac > 1.0) {
        fail("train.warmup_frac must be in [0,1]");
    }
    if (train.patience < 1) fail("train.patience must be >= 1");
    if (train.eval_every < 1) fail("train.eval_every must be >= 1");
    if (train.log_every < 1) fail("train.log_every must be >= 1");
}

std::string RunConfig::to_toml() const {
    std::ostringstream out;
    auto arr_i = [](const std::vector<int64_t>& v) {
        std::string s = "[";
        for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
        return s + "]";
    };
    auto arr_d = [](const std::vector<double>& v) {
        std::string s = "[";
        for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt_double(v[i]);
        return s + "]";
    };
    auto arr_s = [](const std::vector<std::string>& v) {
        std::string s = "[";
        for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + toml::escape_string(v[i]);
        return s + "]";
    };
    out << "[data]\n";
    out << "k = " << data.k << "\n";
    out << "rate = " << fmt_double(data.rate) << "\n";
    out << "train = " << data.train << "\n";
    out << "valid = " << data.valid << "\n";
    out << "test = " << data.test << "\n";
    out << "image_size = " << data.image_size << "\n";
    out << "noise = " << fmt_double(data.noise) << "\n";
    out << "seed = " << data.seed << "\n";
    out << "\n[vision]\n";
    out << "widths = " << arr_i(vision.widths) << "\n";
    out << "\n[text]\n";
    out << "d_embed = " << text.d_embed << "\n";
    out << "d_hidden = " << text.d_hidden << "\n";
    out << "d_out = " << text.d_out << "\n";
    out << "frozen_seed = " << text.frozen_seed << "\n";
    out << "\n[aggregator]\n";
    out << "grid = " << aggregator.grid << "\n";
    out << "heads = " << aggregator.heads << "\n";
    out << "d_out = " << aggregator.d_out << "\n";
    out << "ffn_hidden = " << aggregator.ffn_hidden << "\n";
    out << "drop_ratios = " << arr_d(aggregator.drop_ratios) << "\n";
    out << "\n[objective]\n";
    out << "tau = " << fmt_double(objective.tau) << "\n";
    out << "lambda = " << fmt_double(objective.lambda) << "\n";
    out << "kernel = " << toml::escape_string(objective.kernel) << "\n";
    out << "d_shared = " << objective.d_shared << "\n";
    out << "proj_hidden = " << objective.proj_hidden << "\n";
    out << "terms = " << arr_s(objective.terms) << "\n";
    out << "align = " << toml::escape_string(objective.align) << "\n";
    out << "\n[train]\n";
    out << "batch = " << train.batch << "\n";
    out << "epochs = " << train.epochs << "\n";
    out << "lr = " << fmt_double(train.lr) << "\n";
    out << "weight_decay = " << fmt_double(train.weight_decay) << "\n";
    out << "warmup_frac = " << fmt_double(train.warmup_frac) << "\n";
    out << "patience = " << train.patience << "\n";
    out << "eval_every = " << train.eval_every << "\n";
    out << "log_every = " << train.log_every << "\n";
    out << "seed = " << train.seed << "\n";
    return out.str();
}

uint64_t RunConfig::content_hash() const {
    const std::string text = to_toml();
    return fnv1a64(text.data(), text.size());
}

}  // namespace hvla

#include "hvla/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "hvla/hash.hpp"

namespace hvla {

namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'H', 'V', 'L', 'A', 'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                     const std::map<std::string, Tensor>& params, uint64_t config_hash) {
    std::filesystem::create_directories(dir);
    const auto bin_path = dir / (stem + ".bin");
    {
        std::ofstream bin(bin_path, std::ios::binary);
        if (!bin) throw std::runtime_error("cannot write " + bin_path.string());
        bin.write(kMagic, sizeof(kMagic));
        const auto count = static_cast<uint32_t>(params.size());
        bin.write(reinterpret_cast<const char*>(&count), sizeof(count));
        for (const auto& [name, tensor] : params) {
            const auto name_len = static_cast<uint32_t>(name.size());
            bin.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
            bin.write(name.data(), name_len);
            const auto rank = static_cast<uint32_t>(tensor.rank());
            bin.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
            for (int64_t d : tensor.shape()) {
                bin.write(reinterpret_cast<const char*>(&d), sizeof(d));
            }
            auto data = tensor.data();
            bin.write(reinterpret_cast<const char*>(data.data()),
                      static_cast<std::streamsize>(data.size() * sizeof(double)));
        }
    }

    uint64_t payload_hash = kFnvBasis;
    {
        std::ifstream in(bin_path, std::ios::binary);
        char buf[1 << 16];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
            payload_hash = fnv1a64(buf, static_cast<size_t>(in.gcount()), payload_hash);
        }
    }

    json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["config_hash"] = hash_hex(config_hash);
    manifest["payload_hash"] = hash_hex(payload_hash);
    json tensors = json::array();
    for (const auto& [name, tensor] : params) {
        tensors.push_back({{"name", name}, {"shape", tensor.shape()}});
    }
    manifest["tensors"] = tensors;
    std::ofstream mf(dir / (stem + ".json"));
    mf << manifest.dump(2) << '\n';
}

void load_checkpoint(const std::filesystem::path& dir, const std::string& stem,
                     std::map<std::string, Tensor>& params, uint64_t expected_config_hash) {
    const auto manifest_path = dir / (stem + ".json");
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open " + manifest_path.string());
    json manifest = json::parse(mf);

    const int version = manifest.at("version").get<int>();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: version mismatch, expected " +
                                 std::to_string(kCheckpointVersion) + ", found " +
                                 std::to_string(version));
    }
    const std::string want_hash = hash_hex(expected_config_hash);
    const std::string have_hash = manifest.at("config_hash").get<std::string>();
    if (want_hash != have_hash) {
        throw std::runtime_error("checkpoint: config hash mismatch, expected " + want_hash +
                                 ", found " + have_hash);
    }

    const auto bin_path = dir / (stem + ".bin");
    uint64_t payload_hash = kFnvBasis;
    {
        std::ifstream in(bin_path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open " + bin_path.string());
        char buf[1 << 16];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
            payload_hash = fnv1a64(buf, static_cast<size_t>(in.gcount()), payload_hash);
        }
    }
    if (hash_hex(payload_hash) != manifest.at("payload_hash").get<std::string>()) {
        throw std::runtime_error("checkpoint: payload checksum mismatch, expected " +
                                 manifest.at("payload_hash").get<std::string>() + ", actual " +
                                 hash_hex(payload_hash));
    }

    std::ifstream bin(bin_path, std::ios::binary);
    char magic[8];
    bin.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("checkpoint: bad magic in " + bin_path.string());
    }
    uint32_t count = 0;
    bin.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (count != params.size()) {
        throw std::runtime_error("checkpoint: tensor count " + std::to_string(count) +
                                 " does not match model (" + std::to_string(params.size()) + ")");
    }
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = 0;
        bin.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
        std::string name(name_len, '\0');
        bin.read(name.data(), name_len);
        uint32_t rank = 0;
        bin.read(reinterpret_cast<char*>(&rank), sizeof(rank));
        Shape shape(rank);
        for (auto& d : shape) bin.read(reinterpret_cast<char*>(&d), sizeof(d));
        const auto it = params.find(name);
        if (it == params.end()) {
            throw std::runtime_error("checkpoint: tensor '" + name + "' not in model");
        }
        if (it->second.shape() != shape) {
            throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                                     shape_str(shape) + ", model expects " +
                                     shape_str(it->second.shape()));
        }
        auto dst = it->second.raw_data();
        bin.read(reinterpret_cast<char*>(dst.data()),
                 static_cast<std::streamsize>(dst.size() * sizeof(double)));
        if (!bin) throw std::runtime_error("checkpoint: truncated payload at '" + name + "'");
    }
}

}  // namespace hvla

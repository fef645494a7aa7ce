#include <cstdio>
#include <cstring>
#include <fstream>

#include "dope/harness.hpp"

namespace dope::harness {

namespace {

constexpr int kCheckpointVersion = 1;

void collect(const model::ParamDict<float>& dict, const std::string& prefix, ojson& tensors,
             std::vector<const std::vector<float>*>& buffers, std::int64_t& offset) {
    for (const auto& [name, tensor] : dict) {
        ojson t;
        t["name"] = prefix + name;
        t["shape"] = tensor.shape.dims;
        t["offset"] = offset;
        t["count"] = static_cast<std::int64_t>(tensor.data.size());
        tensors.push_back(t);
        buffers.push_back(&tensor.data);
        offset += static_cast<std::int64_t>(tensor.data.size());
    }
}

} // namespace

void save_checkpoint(const std::string& base_path, const Checkpoint& ckpt) {
    ojson manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["precision"] = "f32";
    manifest["step"] = ckpt.step;
    manifest["encoder_config"] = to_json(ckpt.params.config);
    manifest["train_config"] = to_json(ckpt.train_config);

    ojson tensors = ojson::array();
    std::vector<const std::vector<float>*> buffers;
    std::int64_t offset = 0;
    collect(ckpt.params.online, "online/", tensors, buffers, offset);
    collect(ckpt.params.momentum, "momentum/", tensors, buffers, offset);
    manifest["tensors"] = tensors;
    manifest["total_count"] = offset;

    std::ofstream mf(base_path + ".json");
    if (!mf) throw IoError("save_checkpoint: cannot open " + base_path + ".json");
    mf << manifest.dump(2) << "\n";

    std::FILE* bf = std::fopen((base_path + ".bin").c_str(), "wb");
    if (!bf) throw IoError("save_checkpoint: cannot open " + base_path + ".bin");
    bool ok = true;
    for (const auto* buf : buffers)
        ok = ok && std::fwrite(buf->data(), sizeof(float), buf->size(), bf) == buf->size();
    std::fclose(bf);
    if (!ok) throw IoError("save_checkpoint: short write to " + base_path + ".bin");
}

Checkpoint load_checkpoint(const std::string& base_path, const model::EncoderConfig* expected) {
    std::ifstream mf(base_path + ".json");
    if (!mf) throw IoError("load_checkpoint: cannot open " + base_path + ".json");
    ojson manifest;
    try {
        manifest = ojson::parse(mf);
    } catch (const std::exception& e) {
        throw CorruptCheckpoint("load_checkpoint: bad manifest: " + std::string(e.what()));
    }
    if (manifest.value("version", -1) != kCheckpointVersion)
        throw VersionMismatch("load_checkpoint: unsupported checkpoint version");
    if (manifest.value("precision", "") != "f32")
        throw VersionMismatch("load_checkpoint: unsupported precision");

    Checkpoint ckpt;
    ckpt.step = manifest.value("step", std::int64_t{0});
    ckpt.params.config = encoder_config_from_json(manifest.at("encoder_config"));
    ckpt.train_config = train_config_from_json(manifest.at("train_config"));

    if (expected) {
        const model::EncoderConfig& a = *expected;
        const model::EncoderConfig& b = ckpt.params.config;
        auto differ = [](const std::string& field) {
            throw VersionMismatch("load_checkpoint: encoder config differs in field '" + field +
                                  "'");
        };
        if (a.input_size != b.input_size) differ("input_size");
        if (a.in_channels != b.in_channels) differ("in_channels");
        if (a.stage_channels != b.stage_channels) differ("stage_channels");
        if (a.context_channels != b.context_channels) differ("context_channels");
        if (a.grid_size != b.grid_size) differ("grid_size");
        if (a.proj_channels != b.proj_channels) differ("proj_channels");
        if (a.mask_hidden != b.mask_hidden) differ("mask_hidden");
    }

    std::FILE* bf = std::fopen((base_path + ".bin").c_str(), "rb");
    if (!bf) throw IoError("load_checkpoint: cannot open " + base_path + ".bin");
    std::fseek(bf, 0, SEEK_END);
    const std::int64_t bytes = std::ftell(bf);
    std::fseek(bf, 0, SEEK_SET);
    const std::int64_t total = manifest.value("total_count", std::int64_t{0});
    if (bytes != total * static_cast<std::int64_t>(sizeof(float))) {
        std::fclose(bf);
        throw CorruptCheckpoint("load_checkpoint: buffer file holds " + std::to_string(bytes) +
                                " bytes, manifest expects " +
                                std::to_string(total * sizeof(float)));
    }
    std::vector<float> all(static_cast<std::size_t>(total));
    const bool ok = std::fread(all.data(), sizeof(float), all.size(), bf) == all.size();
    std::fclose(bf);
    if (!ok) throw CorruptCheckpoint("load_checkpoint: truncated buffer file");

    for (const auto& t : manifest.at("tensors")) {
        const std::string name = t.at("name").get<std::string>();
        const auto dims = t.at("shape").get<std::vector<int>>();
        const std::int64_t offset = t.at("offset").get<std::int64_t>();
        const std::int64_t count = t.at("count").get<std::int64_t>();
        ad::Tensor<float> tensor{ad::Shape{dims}};
        if (tensor.numel() != count || offset < 0 || offset + count > total)
            throw CorruptCheckpoint("load_checkpoint: tensor '" + name + "' range invalid");
        std::memcpy(tensor.data.data(), all.data() + offset, count * sizeof(float));
        if (name.rfind("online/", 0) == 0)
            ckpt.params.online.emplace_back(name.substr(7), std::move(tensor));
        else if (name.rfind("momentum/", 0) == 0)
            ckpt.params.momentum.emplace_back(name.substr(9), std::move(tensor));
        else
            throw CorruptCheckpoint("load_checkpoint: tensor '" + name + "' has no known prefix");
    }
    return ckpt;
}

} // namespace dope::harness

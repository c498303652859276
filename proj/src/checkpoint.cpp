#include "voxdiff/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "voxdiff/detail/byteio.hpp"

namespace voxdiff {

namespace {

constexpr char kMagic[4] = {'V', 'D', 'C', 'K'};
constexpr uint16_t kVersion = 1;
constexpr int64_t kMaxElements = int64_t(1) << 31;

using detail::get_f32;
using detail::get_u16;
using detail::get_u32;
using detail::malformed;
using detail::put_f32;
using detail::put_u16;
using detail::put_u32;
using nlohmann::json;

std::string sidecar_path(const std::string& path) { return path + ".json"; }

json load_sidecar(const std::string& path) {
    std::ifstream in(sidecar_path(path));
    if (!in) throw MissingArtifactError("cannot open model metadata " + sidecar_path(path));
    json meta;
    try {
        in >> meta;
    } catch (const json::exception& e) {
        throw ConfigError(sidecar_path(path) + ": " + e.what());
    }
    return meta;
}

void save_sidecar(const std::string& path, const json& meta) {
    std::ofstream out(sidecar_path(path));
    if (!out) throw ConfigError("cannot write model metadata " + sidecar_path(path));
    out << meta.dump(2) << "\n";
}

} // namespace

void write_vdck(std::ostream& out, const std::vector<NamedTensor>& tensors) {
    out.write(kMagic, 4);
    put_u16(out, kVersion);
    put_u32(out, uint32_t(tensors.size()));
    for (const NamedTensor& t : tensors) {
        if (t.name.empty() || t.name.size() > 0xffff)
            throw ConfigError("checkpoint tensor name length out of range");
        put_u16(out, uint16_t(t.name.size()));
        out.write(t.name.data(), std::streamsize(t.name.size()));
        out.put(char(5));
        put_u32(out, uint32_t(t.value.n));
        put_u32(out, uint32_t(t.value.c));
        put_u32(out, uint32_t(t.value.h));
        put_u32(out, uint32_t(t.value.w));
        put_u32(out, uint32_t(t.value.d));
        for (float v : t.value.v) put_f32(out, v);
    }
    if (!out) throw ConfigError("checkpoint write failed");
}

std::vector<NamedTensor> read_vdck(std::istream& in, const std::string& origin) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        malformed(origin, "not a VDCK checkpoint");
    uint16_t version = get_u16(in, origin);
    if (version != kVersion)
        malformed(origin, "unsupported version " + std::to_string(version));
    uint32_t count = get_u32(in, origin);
    if (count > (1u << 20)) malformed(origin, "implausible tensor count");
    std::vector<NamedTensor> tensors;
    tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = get_u16(in, origin);
        if (name_len == 0) malformed(origin, "empty tensor name");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) malformed(origin, "truncated data");
        int rank = in.get();
        if (rank == std::char_traits<char>::eof()) malformed(origin, "truncated data");
        if (rank != 5)
            malformed(origin, "tensor '" + name + "' has unsupported rank " +
                                  std::to_string(rank));
        uint32_t dims[5];
        int64_t elems = 1;
        for (auto& d : dims) {
            d = get_u32(in, origin);
            elems *= int64_t(d);
        }
        if (elems < 0 || elems > kMaxElements)
            malformed(origin, "tensor '" + name + "' has implausible size");
        Tensor t = Tensor::zeros(int(dims[0]), int(dims[1]), int(dims[2]), int(dims[3]),
                                 int(dims[4]));
        for (auto& v : t.v) v = get_f32(in, origin);
        tensors.push_back(NamedTensor{std::move(name), std::move(t)});
    }
    if (in.peek() != std::char_traits<char>::eof()) malformed(origin, "trailing bytes");
    return tensors;
}

void save_vdck(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    write_vdck(out, tensors);
}

std::vector<NamedTensor> load_vdck(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open checkpoint " + path);
    return read_vdck(in, path);
}

void save_model(const std::string& path, const UNet& model) {
    std::vector<NamedTensor> tensors;
    tensors.reserve(model.params().size());
    for (const auto& p : model.params()) tensors.push_back(NamedTensor{p.name, p.value});
    save_vdck(path, tensors);
    json meta;
    meta["type"] = "unet";
    meta["num_classes"] = model.num_classes();
    meta["condition_channels"] = model.condition_channels();
    meta["base_channels"] = model.config().base_channels;
    meta["depth"] = model.config().depth;
    meta["time_embed_dim"] = model.config().time_embed_dim;
    save_sidecar(path, meta);
}

void save_oracle_model(const std::string& path, const std::string& scene_path,
                       int condition_channels, bool wrap, float boost) {
    save_vdck(path, {});
    json meta;
    meta["type"] = "oracle";
    meta["scene"] = scene_path;
    meta["condition_channels"] = condition_channels;
    meta["wrap"] = wrap;
    meta["boost"] = boost;
    save_sidecar(path, meta);
}

std::unique_ptr<Denoiser> load_model(const std::string& path) {
    json meta = load_sidecar(path);
    std::string type;
    try {
        type = meta.at("type").get<std::string>();
        if (type == "oracle") {
            std::filesystem::path scene(meta.at("scene").get<std::string>());
            if (scene.is_relative())
                scene = std::filesystem::path(path).parent_path() / scene;
            SemanticGrid truth = load_sgrid(scene.string());
            return std::make_unique<OracleDenoiser>(
                std::move(truth), meta.value("condition_channels", 0),
                meta.value("wrap", false), meta.value("boost", 10.0f));
        }
        if (type != "unet")
            throw ConfigError(sidecar_path(path) + ": unknown model type '" + type + "'");
        UNetConfig cfg;
        cfg.base_channels = meta.at("base_channels").get<int>();
        cfg.depth = meta.at("depth").get<int>();
        cfg.time_embed_dim = meta.at("time_embed_dim").get<int>();
        UNet model(cfg, meta.at("num_classes").get<int>(),
                   meta.at("condition_channels").get<int>(), VoxelRng{0});
        std::vector<NamedTensor> tensors = load_vdck(path);
        if (tensors.size() != model.params().size())
            throw ConfigError(path + ": expected " + std::to_string(model.params().size()) +
                              " tensors, found " + std::to_string(tensors.size()));
        for (NamedTensor& t : tensors) {
            auto& p = model.param(t.name);
            if (!p.value.same_shape(t.value))
                throw ConfigError(path + ": tensor '" + t.name + "' has shape " +
                                  t.value.shape_string() + ", expected " +
                                  p.value.shape_string());
            p.value = std::move(t.value);
        }
        return std::make_unique<UNetDenoiser>(std::move(model));
    } catch (const json::exception& e) {
        throw ConfigError(sidecar_path(path) + ": " + e.what());
    }
}

} // namespace voxdiff

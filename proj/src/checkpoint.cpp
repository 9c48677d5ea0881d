#include "nesr/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "nesr/config_json.hpp"
#include "nesr/tensor_io.hpp"

namespace nesr {

namespace {

using nlohmann::json;

void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>(v >> 8));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

void append_entry(std::vector<unsigned char>& out, const std::string& name,
                  const Tensor<float>& t) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    const std::vector<unsigned char> blob = encode_tensor(t);
    put_u64(out, blob.size());
    out.insert(out.end(), blob.begin(), blob.end());
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ck) {
    auto params = const_cast<Checkpoint&>(ck).weights.parameters();
    json names = json::array();
    for (auto& [name, p] : params) {
        names.push_back(name);
        names.push_back("opt." + name + ".m");
        names.push_back("opt." + name + ".v");
    }
    json manifest;
    manifest["version"] = kCheckpointVersion;
    manifest["model"] = model_config_to_json(ck.weights.config);
    manifest["train"] = train_config_to_json(ck.train_config);
    manifest["iteration"] = ck.iteration;
    manifest["rng_state"] = std::to_string(ck.rng_state);
    manifest["adam"] = json{{"beta1", ck.adam.beta1},
                            {"beta2", ck.adam.beta2},
                            {"eps", ck.adam.eps},
                            {"lr", ck.adam.lr},
                            {"step_count", ck.adam.step_count}};
    manifest["tensor_names"] = names;
    const std::string mtext = manifest.dump();

    std::vector<unsigned char> out;
    out.insert(out.end(), {'N', 'S', 'C', 'K'});
    put_u16(out, kCheckpointVersion);
    put_u64(out, mtext.size());
    out.insert(out.end(), mtext.begin(), mtext.end());
    if (ck.adam.slots.size() != params.size()) {
        throw ConfigError("checkpoint: optimizer state does not cover the parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        append_entry(out, params[i].first, *params[i].second);
        append_entry(out, "opt." + params[i].first + ".m", ck.adam.slots[i].m);
        append_entry(out, "opt." + params[i].first + ".v", ck.adam.slots[i].v);
    }
    return out;
}

Checkpoint deserialize_checkpoint(const unsigned char* data, std::size_t len) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n, const char* what) {
        if (pos + n > len) {
            throw FormatError(std::string("truncated checkpoint while reading ") + what, pos);
        }
    };
    need(4, "magic");
    if (std::memcmp(data, "NSCK", 4) != 0) throw FormatError("bad magic, expected \"NSCK\"", 0);
    pos = 4;
    need(2, "version");
    const std::uint16_t version =
        static_cast<std::uint16_t>(data[pos] | (static_cast<std::uint16_t>(data[pos + 1]) << 8));
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), pos);
    }
    pos += 2;
    need(8, "manifest length");
    const std::uint64_t mlen = get_u64(data + pos);
    pos += 8;
    need(mlen, "manifest");
    json manifest;
    try {
        manifest = json::parse(std::string(reinterpret_cast<const char*>(data + pos), mlen));
    } catch (const json::parse_error& e) {
        throw FormatError("checkpoint manifest is not valid JSON: " + std::string(e.what()), pos);
    }
    pos += mlen;

    Checkpoint ck;
    const ModelConfig mcfg = model_config_from_json(manifest.at("model"));
    ck.train_config = train_config_from_json(manifest.at("train"));
    ck.weights = init_weights<float>(mcfg, 0);
    ck.iteration = manifest.at("iteration").get<std::size_t>();
    ck.rng_state = std::stoull(manifest.at("rng_state").get<std::string>());
    const json& adam = manifest.at("adam");
    ck.adam.beta1 = adam.at("beta1").get<double>();
    ck.adam.beta2 = adam.at("beta2").get<double>();
    ck.adam.eps = adam.at("eps").get<double>();
    ck.adam.lr = adam.at("lr").get<double>();
    ck.adam.step_count = adam.at("step_count").get<long long>();

    auto params = ck.weights.parameters();
    ck.adam.slots.resize(params.size());
    auto read_entry = [&](const std::string& want_name) {
        need(2, "entry name length");
        const std::size_t nlen = data[pos] | (static_cast<std::size_t>(data[pos + 1]) << 8);
        pos += 2;
        need(nlen, "entry name");
        const std::string name(reinterpret_cast<const char*>(data + pos), nlen);
        pos += nlen;
        if (name != want_name) {
            throw FormatError("checkpoint entry \"" + name + "\" does not match expected \"" +
                                  want_name + "\"",
                              pos);
        }
        need(8, "entry length");
        const std::uint64_t blen = get_u64(data + pos);
        pos += 8;
        need(blen, "entry blob");
        std::size_t consumed = 0;
        Tensor<float> t = decode_tensor<float>(data + pos, blen, &consumed);
        pos += blen;
        return t;
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<float> w = read_entry(params[i].first);
        if (w.shape() != params[i].second->shape()) {
            throw FormatError("checkpoint tensor \"" + params[i].first + "\" has shape " +
                                  shape_str(w.shape()) + ", expected " +
                                  shape_str(params[i].second->shape()),
                              pos);
        }
        *params[i].second = w;
        ck.adam.slots[i].m = read_entry("opt." + params[i].first + ".m");
        ck.adam.slots[i].v = read_entry("opt." + params[i].first + ".v");
    }
    return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const std::vector<unsigned char> bytes = serialize_checkpoint(ck);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    f.seekg(0, std::ios::end);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError("read failed: " + path);
    return deserialize_checkpoint(bytes.data(), bytes.size());
}

}  // namespace nesr

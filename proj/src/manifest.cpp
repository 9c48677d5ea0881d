#include "nesr/manifest.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nesr/tensor_io.hpp"

namespace nesr {

namespace {

using nlohmann::json;

json scene_record_to_json(const SceneRecord& r) {
    return json{{"id", r.id},
                {"seed", r.seed},
                {"files", r.files},
                {"wavelengths", r.wavelengths}};
}

SceneRecord scene_record_from_json(const json& j) {
    SceneRecord r;
    r.id = j.at("id").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.files = j.at("files").get<std::vector<std::string>>();
    r.wavelengths = j.at("wavelengths").get<std::vector<double>>();
    return r;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << text;
    if (!f) throw IoError("write failed: " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace

void save_manifest(const std::string& path, const SceneManifest& m) {
    json j;
    j["dataset"] = m.dataset;
    j["split"] = m.split;
    j["scenes"] = json::array();
    for (const SceneRecord& r : m.scenes) j["scenes"].push_back(scene_record_to_json(r));
    write_text(path, j.dump(2) + "\n");
}

SceneManifest load_manifest(const std::string& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw FormatError("manifest is not valid JSON: " + std::string(e.what()),
                          static_cast<std::uint64_t>(e.byte));
    }
    SceneManifest m;
    m.dataset = j.at("dataset").get<std::string>();
    m.split = j.at("split").get<std::string>();
    for (const json& s : j.at("scenes")) m.scenes.push_back(scene_record_from_json(s));
    return m;
}

SceneRecord save_scene(const std::string& dir, const std::string& id, const SpectralScene& scene,
                       const std::vector<double>& wavelengths) {
    const std::string param_file = "scene_" + id + ".json";
    const std::string abund_file = "scene_" + id + "_abund.nsrt";
    json j;
    j["id"] = id;
    j["seed"] = scene.seed;
    j["height"] = scene.height;
    j["width"] = scene.width;
    j["abundance_file"] = abund_file;
    j["endmembers"] = json::array();
    for (const Endmember& e : scene.endmembers) {
        json je;
        je["baseline"] = e.baseline;
        je["components"] = json::array();
        for (const GaussianComponent& c : e.components) {
            je["components"].push_back(
                {{"center_nm", c.center_nm}, {"width_nm", c.width_nm}, {"amplitude", c.amplitude}});
        }
        j["endmembers"].push_back(je);
    }
    write_text((std::filesystem::path(dir) / param_file).string(), j.dump(2) + "\n");
    write_tensor((std::filesystem::path(dir) / abund_file).string(), scene.abundances);
    SceneRecord r;
    r.id = id;
    r.seed = scene.seed;
    r.files = {param_file, abund_file};
    r.wavelengths = wavelengths;
    return r;
}

SpectralScene load_scene(const std::string& dir, const SceneRecord& record) {
    if (record.files.empty()) throw FormatError("scene record lists no files", 0);
    const std::string param_path = (std::filesystem::path(dir) / record.files[0]).string();
    json j;
    try {
        j = json::parse(read_text(param_path));
    } catch (const json::parse_error& e) {
        throw FormatError("scene file is not valid JSON: " + std::string(e.what()),
                          static_cast<std::uint64_t>(e.byte));
    }
    SpectralScene scene;
    scene.seed = j.at("seed").get<std::uint64_t>();
    scene.height = j.at("height").get<std::size_t>();
    scene.width = j.at("width").get<std::size_t>();
    for (const json& je : j.at("endmembers")) {
        Endmember e;
        e.baseline = je.at("baseline").get<double>();
        for (const json& jc : je.at("components")) {
            e.components.push_back(GaussianComponent{jc.at("center_nm").get<double>(),
                                                     jc.at("width_nm").get<double>(),
                                                     jc.at("amplitude").get<double>()});
        }
        scene.endmembers.push_back(std::move(e));
    }
    // the abundance file sits next to the scene's parameter file
    const std::string abund_path =
        (std::filesystem::path(param_path).parent_path() /
         j.at("abundance_file").get<std::string>())
            .string();
    scene.abundances = read_tensor<double>(abund_path);
    if (scene.abundances.shape() !=
        std::vector<std::size_t>{scene.endmembers.size(), scene.height, scene.width}) {
        throw FormatError("abundance tensor shape does not match scene parameters", 0);
    }
    return scene;
}

std::vector<SpectralScene> load_scenes(const std::string& manifest_path) {
    const SceneManifest m = load_manifest(manifest_path);
    const std::string dir = std::filesystem::path(manifest_path).parent_path().string();
    std::vector<SpectralScene> scenes;
    scenes.reserve(m.scenes.size());
    for (const SceneRecord& r : m.scenes) scenes.push_back(load_scene(dir, r));
    return scenes;
}

}  // namespace nesr

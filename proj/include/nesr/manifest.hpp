#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nesr/scene.hpp"

namespace nesr {

// One dataset split: scene parameter/abundance files plus the seeds and
// canonical wavelength grid they were generated with.
struct SceneRecord {
    std::string id;
    std::uint64_t seed = 0;
    std::vector<std::string> files;  // relative to the manifest directory
    std::vector<double> wavelengths;
};

struct SceneManifest {
    std::string dataset;
    std::string split;  // "train" or "test"
    std::vector<SceneRecord> scenes;
};

void save_manifest(const std::string& path, const SceneManifest& m);
SceneManifest load_manifest(const std::string& path);

// Writes scene_<id>.json + scene_<id>_abund.nsrt under dir; returns the record.
SceneRecord save_scene(const std::string& dir, const std::string& id, const SpectralScene& scene,
                       const std::vector<double>& wavelengths);

// Loads a scene via its manifest record; `dir` is the manifest directory.
SpectralScene load_scene(const std::string& dir, const SceneRecord& record);

// Loads every scene of a manifest in listed order.
std::vector<SpectralScene> load_scenes(const std::string& manifest_path);

}  // namespace nesr

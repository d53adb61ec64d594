#pragma once

// On-disk phantom datasets.
//
//   <dir>/dataset.json                 subject index + acquisition + voxel size
//   <dir>/subject_000/manifest.json    per-slice role -> {path, checksum}
//   <dir>/subject_000/slice_00/<role>.aslt
//
// Roles: mask, wm, gm, si_pd, cbf_truth, dm_clean, noise_std (each (h, w)) and
// repetitions, stored as one (count, h, w) stack. All float64. Paths inside a
// manifest are relative to the manifest's directory; checksums are FNV-1a-64
// of the file bytes in hex.

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asl/config.hpp"
#include "asl/container.hpp"
#include "asl/errors.hpp"
#include "asl/phantom.hpp"

namespace asl {

inline constexpr int kManifestVersion = 1;
inline constexpr std::array<const char*, 7> kImageRoles = {"mask",      "wm",       "gm",       "si_pd",
                                                           "cbf_truth", "dm_clean", "noise_std"};
inline constexpr const char* kRepetitionsRole = "repetitions";

struct Dataset {
  AcquisitionParams acquisition{};
  VoxelSize voxel{};
  std::uint64_t seed = 0;
  std::vector<PhantomSubject> subjects;
};

namespace detail {

inline std::string indexed_name(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

inline const Image2D& slice_role(const PhantomSlice& s, std::string_view role) {
  if (role == "mask") return s.tissue.mask;
  if (role == "wm") return s.tissue.wm;
  if (role == "gm") return s.tissue.gm;
  if (role == "si_pd") return s.si_pd;
  if (role == "cbf_truth") return s.cbf_truth;
  if (role == "dm_clean") return s.dm_clean;
  return s.noise_std;
}

inline Image2D& slice_role(PhantomSlice& s, std::string_view role) {
  return const_cast<Image2D&>(slice_role(static_cast<const PhantomSlice&>(s), role));
}

inline Json file_entry(const std::filesystem::path& base, const std::string& rel, const TensorContainer& t) {
  const std::string bytes = encode_tensor(t);
  write_file(base / rel, bytes);
  return {{"path", rel}, {"checksum", checksum_hex(bytes)}};
}

// Reads a {path, checksum} entry, verifying existence and checksum.
inline TensorContainer load_entry(const std::filesystem::path& base, const Json& entry, const std::string& what) {
  if (!entry.is_object() || !entry.contains("path") || !entry.contains("checksum")) {
    throw ManifestError("manifest: malformed entry for " + what);
  }
  const auto path = base / entry["path"].get<std::string>();
  if (!std::filesystem::exists(path)) throw ManifestError("manifest: missing file " + path.string());
  const std::string bytes = read_file(path);
  if (checksum_hex(bytes) != entry["checksum"].get<std::string>()) {
    throw ManifestError("manifest: checksum mismatch for " + path.string());
  }
  return decode_tensor(bytes);
}

inline Json read_json_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ManifestError("manifest: missing file " + path.string());
  try {
    return Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw ManifestError("manifest: cannot parse " + path.string() + ": " + e.what());
  }
}

}  // namespace detail

// Writes one subject below dir/subject_XXX and returns the manifest path
// relative to dir.
inline std::string save_subject(const std::filesystem::path& dir, const PhantomSubject& subject) {
  const std::string sub = detail::indexed_name("subject_", subject.index, 3);
  const auto base = dir / sub;
  Json slices = Json::array();
  for (std::size_t k = 0; k < subject.slices.size(); ++k) {
    const auto& sl = subject.slices[k];
    const std::string sdir = detail::indexed_name("slice_", k, 2);
    Json files;
    for (const char* role : kImageRoles) {
      files[role] = detail::file_entry(base, sdir + "/" + role + ".aslt", to_container(detail::slice_role(sl, role)));
    }
    files[kRepetitionsRole] =
        detail::file_entry(base, sdir + "/repetitions.aslt", stack_to_container(sl.repetitions.reps));
    slices.push_back({{"index", k}, {"files", files}});
  }
  Json m = {{"version", kManifestVersion}, {"subject", subject.index}, {"seed", subject.seed}, {"slices", slices}};
  write_file(base / "manifest.json", dump_json(m));
  return sub + "/manifest.json";
}

inline PhantomSubject load_subject(const std::filesystem::path& manifest_path, VoxelSize voxel) {
  const Json m = detail::read_json_file(manifest_path);
  const auto base = manifest_path.parent_path();
  try {
    if (m.at("version").get<int>() != kManifestVersion) throw ManifestError("manifest: unsupported version");
    PhantomSubject s;
    s.index = m.at("subject").get<std::size_t>();
    s.seed = m.at("seed").get<std::uint64_t>();
    for (const auto& js : m.at("slices")) {
      PhantomSlice sl;
      const auto& files = js.at("files");
      for (const char* role : kImageRoles) {
        detail::slice_role(sl, role) =
            image_from_container(detail::load_entry(base, files.at(role), role), voxel);
      }
      sl.repetitions.reps =
          stack_from_container(detail::load_entry(base, files.at(kRepetitionsRole), kRepetitionsRole), voxel);
      for (const char* role : kImageRoles) {
        require_same_shape(sl.tissue.mask, detail::slice_role(sl, role), "manifest");
      }
      for (const auto& r : sl.repetitions.reps) require_same_shape(sl.tissue.mask, r, "manifest");
      s.slices.push_back(std::move(sl));
    }
    return s;
  } catch (const Json::exception& e) {
    throw ManifestError("manifest: malformed " + manifest_path.string() + ": " + e.what());
  }
}

inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  Json subjects = Json::array();
  for (const auto& s : ds.subjects) {
    const std::string rel = save_subject(dir, s);
    subjects.push_back({{"index", s.index}, {"manifest", rel}, {"checksum", checksum_hex(read_file(dir / rel))}});
  }
  Json d = {{"version", kManifestVersion},
            {"seed", ds.seed},
            {"voxel_mm", {ds.voxel.x, ds.voxel.y}},
            {"acquisition", acquisition_to_json(ds.acquisition)},
            {"subjects", subjects}};
  write_file(dir / "dataset.json", dump_json(d));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto index = dir / "dataset.json";
  const Json d = detail::read_json_file(index);
  try {
    if (d.at("version").get<int>() != kManifestVersion) throw ManifestError("manifest: unsupported dataset version");
    Dataset ds;
    ds.seed = d.at("seed").get<std::uint64_t>();
    ds.voxel = {d.at("voxel_mm").at(0).get<double>(), d.at("voxel_mm").at(1).get<double>()};
    ds.acquisition = acquisition_from_json(d.at("acquisition"));
    for (const auto& e : d.at("subjects")) {
      const auto path = dir / e.at("manifest").get<std::string>();
      if (!std::filesystem::exists(path)) throw ManifestError("manifest: missing file " + path.string());
      if (file_checksum(path) != e.at("checksum").get<std::string>()) {
        throw ManifestError("manifest: checksum mismatch for " + path.string());
      }
      ds.subjects.push_back(load_subject(path, ds.voxel));
    }
    return ds;
  } catch (const Json::exception& e) {
    throw ManifestError("manifest: malformed " + index.string() + ": " + e.what());
  }
}

}  // namespace asl

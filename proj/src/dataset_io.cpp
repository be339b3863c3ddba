#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "mdseg/parallel.hpp"
#include "mdseg/pgm.hpp"
#include "mdseg/phantom.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mdseg {

namespace {

std::string sample_stem(Split split, const std::string& domain, int index) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "%05d", index);
  return to_string(split) + "/" + domain + "/" + idx;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw FilesystemError("cannot create directory (" + ec.message() + ")", dir.string());
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigError("manifest: unknown split '" + s + "'");
}

}  // namespace

void write_manifest(const Manifest& m, const std::string& path) {
  json j;
  j["format"] = "mdseg-dataset";
  j["version"] = 1;
  j["seed"] = m.seed;
  j["resolution"] = m.resolution;
  j["domains"] = json::array();
  for (std::size_t d = 0; d < m.domain_names.size(); ++d) {
    j["domains"].push_back({{"id", d},
                            {"name", m.domain_names[d]},
                            {"family", m.domain_families[d]},
                            {"n_train", m.n_train[d]},
                            {"n_test", m.n_test[d]}});
  }
  j["entries"] = json::array();
  for (const auto& e : m.entries)
    j["entries"].push_back({{"image", e.image}, {"mask", e.mask}, {"domain", e.domain}, {"split", to_string(e.split)}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FilesystemError("cannot write manifest", path);
  out << j.dump(2) << "\n";
  if (!out) throw FilesystemError("write failed", path);
}

Manifest read_manifest(const std::string& dataset_dir) {
  const std::string path = (fs::path(dataset_dir) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw FilesystemError("cannot open manifest", path);
  Manifest m;
  try {
    const json j = json::parse(in);
    if (j.at("format") != "mdseg-dataset") throw ConfigError("manifest: unexpected format tag");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.resolution = j.at("resolution").get<int>();
    for (const auto& d : j.at("domains")) {
      m.domain_names.push_back(d.at("name").get<std::string>());
      m.domain_families.push_back(d.at("family").get<std::string>());
      m.n_train.push_back(d.at("n_train").get<int>());
      m.n_test.push_back(d.at("n_test").get<int>());
    }
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry{e.at("image").get<std::string>(), e.at("mask").get<std::string>(), e.at("domain").get<int>(),
                          parse_split(e.at("split").get<std::string>())};
      if (entry.domain < 0 || entry.domain >= static_cast<int>(m.domain_names.size()))
        throw ConfigError("manifest: entry references unknown domain " + std::to_string(entry.domain));
      m.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw ConfigError("manifest " + path + ": " + e.what());
  }
  return m;
}

Manifest generate_dataset(const DatasetConfig& config, std::uint64_t seed, const std::string& out_dir) {
  config.validate();
  const fs::path root(out_dir);
  ensure_dir(root);

  Manifest m;
  m.seed = seed;
  m.resolution = config.resolution;
  for (const auto& d : config.domains) {
    m.domain_names.push_back(d.spec.name);
    m.domain_families.push_back(to_string(d.spec.family));
    m.n_train.push_back(d.n_train);
    m.n_test.push_back(d.n_test);
  }
  for (Split split : {Split::Train, Split::Test}) {
    const Dataset ds = generate_split(config, seed, split);
    for (int d = 0; d < ds.num_domains(); ++d) {
      ensure_dir(root / to_string(split) / ds.domain_names[d]);
      const auto& samples = ds.samples[d];
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const std::string stem = sample_stem(split, ds.domain_names[d], static_cast<int>(i));
        ManifestEntry e{stem + "_image.pgm", stem + "_mask.pgm", d, split};
        write_pgm((root / e.image).string(), to_gray(samples[i].image));
        write_pgm((root / e.mask).string(), mask_to_gray(samples[i].mask));
        m.entries.push_back(std::move(e));
      }
    }
  }
  write_manifest(m, (root / "manifest.json").string());
  return m;
}

Dataset load_dataset(const std::string& dataset_dir, Split split) {
  const Manifest m = read_manifest(dataset_dir);
  Dataset ds;
  ds.split = split;
  ds.seed = m.seed;
  ds.domain_names = m.domain_names;
  ds.samples.resize(m.domain_names.size());
  std::vector<const ManifestEntry*> picked;
  for (const auto& e : m.entries)
    if (e.split == split) picked.push_back(&e);
  std::vector<ImageSample> loaded(picked.size());
  parallel_for(picked.size(), [&](std::size_t i) {
    const fs::path root(dataset_dir);
    const GrayImage img = read_pgm((root / picked[i]->image).string());
    const GrayImage mask = read_pgm((root / picked[i]->mask).string());
    if (img.width != mask.width || img.height != mask.height)
      throw DataError("image and mask extents differ for " + picked[i]->image);
    loaded[i] = ImageSample{from_gray(img), mask_from_gray(mask), picked[i]->domain};
  });
  for (std::size_t i = 0; i < picked.size(); ++i) ds.samples[picked[i]->domain].push_back(std::move(loaded[i]));
  return ds;
}

}  // namespace mdseg

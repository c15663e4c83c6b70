#include "mevo/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "mevo/train.hpp"

namespace mevo {

// Accesses Trainer internals on behalf of the checkpoint codec.
struct CheckpointCodec {
  static void save(const std::filesystem::path& path, const Trainer& trainer);
  static Trainer load(const std::filesystem::path& path);
};

namespace checkpoint {

void save(const std::filesystem::path& path, const Trainer& trainer) {
  CheckpointCodec::save(path, trainer);
}

Trainer load(const std::filesystem::path& path) { return CheckpointCodec::load(path); }

}  // namespace checkpoint

namespace {

constexpr char kMagic[8] = {'M', 'E', 'V', 'O', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct NamedArray {
  std::string name;
  const Tensor* tensor;
};

}  // namespace

void CheckpointCodec::save(const std::filesystem::path& path, const Trainer& trainer) {
  std::vector<NamedArray> arrays;
  const auto& params = trainer.opt_.params();
  for (const auto& [name, p] : params) arrays.push_back({"model." + name, &p.value()});
  auto& opt = const_cast<AdamOptimizer&>(trainer.opt_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    arrays.push_back({"opt.m." + params[i].first, &opt.first_moment(i)});
    arrays.push_back({"opt.v." + params[i].first, &opt.second_moment(i)});
  }

  nlohmann::ordered_json meta;
  meta["format_version"] = kVersion;
  meta["iteration"] = trainer.iteration_;
  meta["adam_step"] = trainer.opt_.step_count();
  meta["config"] = trainer.cfg_.serialize();

  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& a : arrays) {
    nlohmann::ordered_json e;
    e["name"] = a.name;
    e["shape"] = a.tensor->shape();
    e["dtype"] = "f64";
    e["offset"] = offset;
    e["count"] = a.tensor->size();
    list.push_back(std::move(e));
    offset += static_cast<std::uint64_t>(a.tensor->size()) * sizeof(double);
  }
  meta["arrays"] = std::move(list);

  const std::string manifest = meta.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path.string());
  f.write(kMagic, 8);
  const std::uint32_t version = kVersion;
  f.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t mlen = manifest.size();
  f.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  f.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto& a : arrays)
    f.write(reinterpret_cast<const char*>(a.tensor->data()),
            static_cast<std::streamsize>(a.tensor->size() * sizeof(double)));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

Trainer CheckpointCodec::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  std::uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " + std::to_string(version));
  std::uint64_t mlen = 0;
  f.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string manifest(mlen, '\0');
  f.read(manifest.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw std::runtime_error("checkpoint: truncated manifest in " + path.string());

  nlohmann::json meta = nlohmann::json::parse(manifest);
  TrainConfig cfg = TrainConfig::parse(meta.at("config").get<std::string>());
  Trainer trainer(cfg);
  trainer.iteration_ = meta.at("iteration").get<int>();
  trainer.opt_.set_step_count(meta.at("adam_step").get<std::int64_t>());

  const std::streampos data_start = f.tellg();
  auto read_into = [&](const nlohmann::json& entry, Tensor& dst, const std::string& name) {
    const auto shape = entry.at("shape").get<std::vector<int>>();
    if (shape != dst.shape())
      throw std::runtime_error("checkpoint: shape mismatch for array " + name);
    f.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    f.read(reinterpret_cast<char*>(dst.data()),
           static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated data for array " + name);
  };

  auto& params = const_cast<nn::ParamList&>(trainer.opt_.params());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string base = params[i].first;
    bool found_w = false, found_m = false, found_v = false;
    for (const auto& entry : meta.at("arrays")) {
      const std::string name = entry.at("name").get<std::string>();
      if (name == "model." + base) {
        read_into(entry, params[i].second.value(), name);
        found_w = true;
      } else if (name == "opt.m." + base) {
        read_into(entry, trainer.opt_.first_moment(i), name);
        found_m = true;
      } else if (name == "opt.v." + base) {
        read_into(entry, trainer.opt_.second_moment(i), name);
        found_v = true;
      }
    }
    if (!found_w || !found_m || !found_v)
      throw std::runtime_error("checkpoint: missing arrays for parameter " + base);
  }
  return trainer;
}

}  // namespace mevo

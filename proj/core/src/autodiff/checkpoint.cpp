#include "focalforge/autodiff/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "focalforge/error.hpp"

namespace focalforge::ad {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'F', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint: " + path.string());
  return v;
}

std::filesystem::path sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

}  // namespace

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint64_t>(os, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError("write failed: " + path.string());
}

NamedTensors read_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw IoError("not a checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(is, path);
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint64_t>(is, path);
  NamedTensors out;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(is, path);
    if (len > 4096) throw IoError("corrupt checkpoint name length in " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated checkpoint: " + path.string());
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw IoError("corrupt checkpoint rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      d = get<std::int64_t>(is, path);
      if (d < 0 || d > (std::int64_t{1} << 32)) throw IoError("corrupt checkpoint dims for " + name);
    }
    Tensor t(shape);
    if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double))))
      throw IoError("truncated checkpoint: " + path.string());
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params, const nlohmann::json& meta,
                     const Adam* optimizer) {
  NamedTensors tensors;
  for (const auto& p : params.params()) tensors.emplace_back(p.name, p.var.value());
  nlohmann::json m = meta;
  if (optimizer) {
    const AdamState& st = optimizer->state();
    for (std::size_t k = 0; k < params.params().size(); ++k) {
      tensors.emplace_back("adam.m/" + params.params()[k].name, st.m[k]);
      tensors.emplace_back("adam.v/" + params.params()[k].name, st.v[k]);
    }
    m["optimizer"] = {{"type", "adam"},
                      {"step", st.step},
                      {"beta1", optimizer->config().beta1},
                      {"beta2", optimizer->config().beta2},
                      {"eps", optimizer->config().eps}};
  }
  m["parameter_count"] = params.scalar_count();
  write_tensors(path, tensors);
  std::ofstream js(sidecar(path));
  if (!js) throw IoError("cannot write " + sidecar(path).string());
  js << m.dump(2) << "\n";
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream js(sidecar(path));
  if (!js) throw IoError("missing checkpoint sidecar " + sidecar(path).string());
  try {
    return nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint sidecar " + sidecar(path).string() + ": " + e.what());
  }
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, ParameterSet& params) {
  std::map<std::string, Tensor> stored;
  for (auto& [name, t] : read_tensors(path)) stored.emplace(name, std::move(t));
  LoadedCheckpoint out;
  out.meta = read_checkpoint_meta(path);
  std::size_t used = 0;
  for (const auto& p : params.params()) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw ValidationError("checkpoint lacks parameter " + p.name);
    if (it->second.shape() != p.var.shape())
      throw ValidationError("checkpoint shape " + to_string(it->second.shape()) + " for " + p.name +
                            " does not match model " + to_string(p.var.shape()));
    Var v = p.var;
    v.mutable_value() = it->second;
    ++used;
  }
  if (out.meta.contains("optimizer")) {
    out.has_optimizer = true;
    out.optimizer.step = out.meta["optimizer"].value("step", std::int64_t{0});
    for (const auto& p : params.params()) {
      auto m = stored.find("adam.m/" + p.name);
      auto v = stored.find("adam.v/" + p.name);
      if (m == stored.end() || v == stored.end()) throw ValidationError("checkpoint lacks optimizer state for " + p.name);
      out.optimizer.m.push_back(m->second);
      out.optimizer.v.push_back(v->second);
      used += 2;
    }
  }
  if (used != stored.size())
    throw ValidationError("checkpoint has " + std::to_string(stored.size() - used) + " tensors the model does not");
  return out;
}

}  // namespace focalforge::ad

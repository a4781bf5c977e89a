#include "acdmar/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "acdmar/error.hpp"

namespace acdmar::acdnet {
namespace {

constexpr char kMagic[8] = {'A', 'C', 'D', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    os.write(reinterpret_cast<const char*>(b), sizeof(T));
  } else {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  return std::filesystem::path(p.string() + ".cfg");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void write_tensor_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint8_t>(os, 1);
    put<std::uint8_t>(os, t.trainable ? 1 : 0);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.value.shape.size()));
    for (int d : t.value.shape) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
  }
  for (const auto& t : tensors) {
    for (double v : t.value.data) put<double>(os, v);
  }
  if (!os) throw Error("write failed: " + path.string());
}

std::vector<NamedTensor> read_tensor_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingInputError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError("not a checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(is);
  std::vector<NamedTensor> out(count);
  for (auto& t : out) {
    const auto len = get<std::uint32_t>(is);
    t.name.resize(len);
    is.read(t.name.data(), len);
    const auto dtype = get<std::uint8_t>(is);
    if (dtype != 1) throw FormatError("unsupported dtype in checkpoint for " + t.name);
    t.trainable = (get<std::uint8_t>(is) & 1u) != 0;
    const auto ndim = get<std::uint32_t>(is);
    for (std::uint32_t k = 0; k < ndim; ++k) t.value.shape.push_back(static_cast<int>(get<std::uint64_t>(is)));
  }
  for (auto& t : out) {
    t.value.data.resize(ad::shape_numel(t.value.shape));
    for (double& v : t.value.data) v = get<double>(is);
  }
  return out;
}

std::map<std::string, std::string> read_sidecar(const std::filesystem::path& path) {
  std::ifstream is(sidecar_path(path));
  if (!is) throw MissingInputError("missing checkpoint sidecar " + sidecar_path(path).string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad sidecar line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net, const AdamState* optimizer,
                     const std::map<std::string, std::string>& extra) {
  std::vector<NamedTensor> tensors;
  for (const auto& e : net.store().entries()) tensors.push_back({e.name, e.value, e.trainable});
  if (optimizer && !optimizer->m.empty()) {
    const auto& entries = net.store().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      tensors.push_back({"adam.m/" + entries[i].name, ad::Tensor(entries[i].value.shape, optimizer->m[i]), false});
      tensors.push_back({"adam.v/" + entries[i].name, ad::Tensor(entries[i].value.shape, optimizer->v[i]), false});
    }
  }
  write_tensor_container(path, tensors);

  const auto& c = net.config();
  std::map<std::string, std::string> kv = extra;
  kv["format_version"] = std::to_string(kCheckpointVersion);
  kv["model.p"] = std::to_string(c.p);
  kv["model.d"] = std::to_string(c.d);
  kv["model.N"] = std::to_string(c.N);
  kv["model.T"] = std::to_string(c.T);
  kv["model.Np"] = std::to_string(c.Np);
  kv["model.resblocks"] = std::to_string(c.resblocks);
  kv["model.eta_init"] = fmt(c.eta_init);
  kv["model.seed"] = std::to_string(c.seed);
  kv["param_count"] = std::to_string(net.param_count());
  kv["optimizer.step"] = std::to_string(optimizer ? optimizer->step : 0);
  std::ofstream os(sidecar_path(path));
  if (!os) throw Error("cannot write sidecar for " + path.string());
  for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto kv = read_sidecar(path);
  auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw FormatError("sidecar missing key " + k);
    return it->second;
  };
  ModelConfig c;
  c.p = std::stoi(need("model.p"));
  c.d = std::stoi(need("model.d"));
  c.N = std::stoi(need("model.N"));
  c.T = std::stoi(need("model.T"));
  c.Np = std::stoi(need("model.Np"));
  c.resblocks = std::stoi(need("model.resblocks"));
  c.eta_init = std::stod(need("model.eta_init"));
  c.seed = std::stoull(need("model.seed"));

  Checkpoint ck{Network(c), std::nullopt, kv};
  const auto tensors = read_tensor_container(path);
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto& store = ck.net.store();
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.at(static_cast<int>(i));
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw FormatError("checkpoint lacks tensor " + e.name);
    if (it->second->value.shape != e.value.shape) {
      throw FormatError("shape mismatch for " + e.name + ": " + ad::shape_string(it->second->value.shape) +
                        " vs " + ad::shape_string(e.value.shape));
    }
    e.value = it->second->value;
  }
  if (by_name.count("adam.m/" + store.at(0).name)) {
    AdamState st;
    st.step = std::stol(need("optimizer.step"));
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& name = store.at(static_cast<int>(i)).name;
      st.m.push_back(by_name.at("adam.m/" + name)->value.data);
      st.v.push_back(by_name.at("adam.v/" + name)->value.data);
    }
    ck.optimizer = std::move(st);
  }
  return ck;
}

}  // namespace acdmar::acdnet

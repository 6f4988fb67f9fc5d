#include "cda/params.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cda/error.hpp"

namespace cda {

Tensor& ParamStore::add(const std::string& name, Tensor tensor) {
  auto [it, inserted] = params_.emplace(name, std::move(tensor));
  if (!inserted) throw ContractError("parameter '" + name + "' already registered");
  return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const { return names_with_prefix(""); }

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (auto it = params_.lower_bound(prefix); it != params_.end() && it->first.starts_with(prefix); ++it)
    out.push_back(it->first);
  return out;
}

std::size_t ParamStore::scalar_count() const { return scalar_count(""); }

std::size_t ParamStore::scalar_count(const std::string& prefix) const {
  std::size_t n = 0;
  for (auto it = params_.lower_bound(prefix); it != params_.end() && it->first.starts_with(prefix); ++it)
    n += it->second.numel();
  return n;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto it = params_.lower_bound(prefix); it != params_.end() && it->first.starts_with(prefix); ++it)
    it->second.set_requires_grad(trainable);
}

void ParamStore::freeze_all() { set_trainable("", false); }

std::vector<std::string> ParamStore::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : params_)
    if (t.requires_grad()) out.push_back(name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::map<std::string, Tensor> ParamStore::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : params_)
    if (t.requires_grad()) out.emplace(name, t.grad_tensor());
  return out;
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& [name, t] : params_) copy.params_.emplace(name, t.clone());
  return copy;
}

std::uint64_t ParamStore::digest(const std::string& prefix) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (auto it = params_.lower_bound(prefix); it != params_.end() && it->first.starts_with(prefix); ++it) {
    feed(it->first.data(), it->first.size());
    for (std::size_t s : it->second.shape()) feed(&s, sizeof s);
    feed(it->second.data().data(), it->second.numel() * sizeof(double));
  }
  return h;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kMagic[8] = {'C', 'D', 'A', 'C', 'K', 'P', 'T', '1'};

template <class U>
void put_le(std::ostream& os, U value) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(value >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw DataError("checkpoint truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(buf[i]) << (8 * i);
  return value;
}

std::vector<std::pair<std::string, Shape>> read_manifest(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a checkpoint file");
  const auto count = get_le<std::uint64_t>(is);
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("checkpoint truncated in manifest");
    const auto rank = get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& s : shape) s = static_cast<std::size_t>(get_le<std::uint64_t>(is));
    if (!manifest.empty() && !(manifest.back().first < name)) throw DataError("checkpoint names not sorted");
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  return manifest;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os.write(kMagic, 8);
  put_le<std::uint64_t>(os, store.size());
  for (const auto& [name, t] : store) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t s : t.shape()) put_le<std::uint64_t>(os, s);
  }
  for (const auto& [name, t] : store)
    for (double v : t.data()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw DataError("write failed for " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  ParamStore store;
  for (auto& [name, shape] : read_manifest(is)) {
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    store.add(name, Tensor(std::move(shape), std::move(data)));
  }
  return store;
}

std::vector<std::pair<std::string, Shape>> checkpoint_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_manifest(is);
}

}  // namespace cda

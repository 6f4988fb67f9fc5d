#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cda/tensor.hpp"

namespace cda {

/// Named parameter tensors, iterated in lexicographic name order.
class ParamStore {
 public:
  /// Registers a tensor; the name must be new.
  Tensor& add(const std::string& name, Tensor tensor);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  void erase(const std::string& name) { params_.erase(name); }

  std::vector<std::string> names() const;
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  std::size_t scalar_count(const std::string& prefix) const;

  /// Marks every tensor whose name starts with prefix as (non-)trainable.
  void set_trainable(const std::string& prefix, bool trainable);
  void freeze_all();
  std::vector<std::string> trainable_names() const;

  void zero_grad();
  /// Gradient of every trainable parameter, keyed by name.
  std::map<std::string, Tensor> gradients() const;

  /// Deep copy; the copy shares no storage with this store.
  ParamStore clone() const;

  /// FNV-1a digest over names, shapes and data bytes of matching tensors.
  std::uint64_t digest(const std::string& prefix = "") const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

// Checkpoint layout (all integers little-endian):
//   magic "CDACKPT1"
//   u64 tensor count
//   per tensor, names ascending: u32 name length, name bytes, u32 rank, u64 dims[rank]
//   per tensor, same order: numel IEEE-754 binary64 values
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
/// Loaded tensors are not trainable.
ParamStore load_checkpoint(const std::filesystem::path& path);

/// (name, shape) manifest of a checkpoint without reading the buffers.
std::vector<std::pair<std::string, Shape>> checkpoint_manifest(const std::filesystem::path& path);

}  // namespace cda

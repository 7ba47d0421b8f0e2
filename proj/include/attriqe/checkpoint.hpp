#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "attriqe/tensor.hpp"

namespace attriqe::ad {

inline constexpr std::string_view kCheckpointMagic = "ATTRIQE-CKPT-v1";

// Ordered collection of named tensors. Order is part of the identity: the
// checksum and the checkpoint layout both follow insertion order.
template <typename T>
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor<T> value);
  std::size_t index(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return tensors_.size(); }
  std::size_t element_count() const;
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }

  std::uint64_t checksum() const;

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
};

// Layout: magic line, "precision <tag>", "count <n>", then per tensor a header
// line "<name> <rank> <d0> ... <dk>" followed by raw little-endian elements.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params);

// Reads any precision and converts to T.
template <typename T>
ParameterSet<T> load_checkpoint(const std::filesystem::path& path);

Precision checkpoint_precision(const std::filesystem::path& path);

}  // namespace attriqe::ad

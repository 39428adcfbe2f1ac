#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "flowlift/tensor.hpp"

namespace flowlift {

/// Ordered name -> tensor list; order is preserved through save/load.
class NamedTensors {
 public:
  void add(std::string name, Tensor tensor);
  bool contains(const std::string& name) const;
  /// Throws kInvalidArgument when the name is absent.
  const Tensor& get(const std::string& name) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  friend bool operator==(const NamedTensors&, const NamedTensors&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Layout: "FLWLCKPT" magic, u8 version, u32 count, then per tensor:
// u32 name length, name bytes, u32 rank, u64 dims[rank], f64 payload (LE).
inline constexpr char kCheckpointMagic[] = "FLWLCKPT";
inline constexpr unsigned char kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const NamedTensors& tensors);
NamedTensors read_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace flowlift

#include "flowlift/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "flowlift/binary_io.hpp"
#include "flowlift/error.hpp"

namespace flowlift {

namespace {
constexpr std::size_t kMagicLen = sizeof(kCheckpointMagic) - 1;
// Guards against absurd allocations from corrupted headers.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;
}  // namespace

void NamedTensors::add(std::string name, Tensor tensor) {
  require(!contains(name), ErrorCode::kInvalidArgument, "duplicate tensor name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool NamedTensors::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

const Tensor& NamedTensors::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw Error(ErrorCode::kInvalidArgument, "checkpoint has no tensor named '" + name + "'");
}

void write_checkpoint(std::ostream& os, const NamedTensors& tensors) {
  binio::write_bytes(os, {kCheckpointMagic, kMagicLen});
  binio::write_le<std::uint8_t>(os, kCheckpointVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors.entries()) {
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    binio::write_bytes(os, name);
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) binio::write_le<std::uint64_t>(os, d);
    for (double v : t.data()) binio::write_f64(os, v);
  }
  require(os.good(), ErrorCode::kIo, "failed writing checkpoint");
}

NamedTensors read_checkpoint(std::istream& is) {
  const std::string magic = binio::read_bytes(is, kMagicLen, "checkpoint magic");
  require(magic == std::string_view(kCheckpointMagic, kMagicLen), ErrorCode::kMalformedHeader,
          "not a flowlift checkpoint (bad magic)");
  const auto version = binio::read_le<std::uint8_t>(is, "checkpoint version");
  require(version == kCheckpointVersion, ErrorCode::kUnsupportedVersion,
          "unsupported checkpoint version " + std::to_string(version));
  const auto count = binio::read_le<std::uint32_t>(is, "tensor count");
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = binio::read_le<std::uint32_t>(is, "name length");
    require(name_len < 4096, ErrorCode::kMalformedHeader, "implausible tensor name length");
    std::string name = binio::read_bytes(is, name_len, "tensor name");
    const auto rank = binio::read_le<std::uint32_t>(is, "tensor rank");
    require(rank <= 8, ErrorCode::kMalformedHeader, "implausible tensor rank");
    std::vector<std::size_t> shape(rank);
    std::uint64_t elements = 1;
    for (auto& d : shape) {
      const auto dim = binio::read_le<std::uint64_t>(is, "tensor dims");
      elements *= dim;
      require(elements <= kMaxElements, ErrorCode::kMalformedHeader, "implausible tensor size");
      d = static_cast<std::size_t>(dim);
    }
    std::vector<double> data(static_cast<std::size_t>(elements));
    for (double& v : data) v = binio::read_f64(is, "tensor payload");
    out.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(os.is_open(), ErrorCode::kIo, "cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, tensors);
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.is_open(), ErrorCode::kIo, "cannot open '" + path.string() + "'");
  return read_checkpoint(is);
}

}  // namespace flowlift

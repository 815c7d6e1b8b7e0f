#include "g2s/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace g2s {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[4] = {'G', '2', 'S', 'K'};

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("truncated checkpoint: " + path.string());
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DParameterRefs& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    if (p->rank == 1) {
      put<std::uint32_t>(out, 1);
      put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.size()));
    } else {
      put<std::uint32_t>(out, 2);
      put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols()));
    }
    // Row-major storage is the on-disk order.
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw InputError("failed writing checkpoint: " + path.string());
}

std::map<std::string, CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a G2SK checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, path);
  std::map<std::string, CheckpointEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank == 0 || rank > 2) throw FormatError("unsupported tensor rank in checkpoint: " + name);
    CheckpointEntry e;
    std::uint64_t total = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.dims.push_back(get<std::uint64_t>(in, path));
      total *= e.dims.back();
    }
    const Index rows = rank == 1 ? 1 : static_cast<Index>(e.dims[0]);
    const Index cols = rank == 1 ? static_cast<Index>(e.dims[0]) : static_cast<Index>(e.dims[1]);
    e.value.resize(rows, cols);
    in.read(reinterpret_cast<char*>(e.value.data()), static_cast<std::streamsize>(total * sizeof(double)));
    if (!in) throw FormatError("truncated checkpoint payload for " + name);
    entries.emplace(std::move(name), std::move(e));
  }
  return entries;
}

void load_checkpoint(const std::filesystem::path& path, const DParameterRefs& params) {
  const auto entries = read_checkpoint(path);
  for (auto* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end()) throw FormatError("checkpoint is missing parameter " + p->name);
    if (it->second.value.rows() != p->value.rows() || it->second.value.cols() != p->value.cols()) {
      throw FormatError("checkpoint shape mismatch for " + p->name);
    }
    p->value = it->second.value;
  }
}

}  // namespace g2s

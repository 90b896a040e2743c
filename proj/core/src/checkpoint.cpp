#include "mdm/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "mdm/errors.hpp"

namespace mdm::ckpt {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'M', 'C', 'K', 'P', 'T', '\x01'};

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 1;
    case torch::kFloat64: return 2;
    case torch::kInt64: return 3;
    case torch::kUInt8: return 4;
    case torch::kInt32: return 5;
    case torch::kBool: return 6;
    default:
      throw DataError("checkpoint: unsupported tensor dtype " +
                      std::string(c10::toString(t)));
  }
}

torch::ScalarType code_dtype(std::uint8_t c) {
  switch (c) {
    case 1: return torch::kFloat32;
    case 2: return torch::kFloat64;
    case 3: return torch::kInt64;
    case 4: return torch::kUInt8;
    case 5: return torch::kInt32;
    case 6: return torch::kBool;
    default: throw DataError("checkpoint: unknown dtype code");
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save(const std::filesystem::path& path, const Checkpoint& c) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("checkpoint: cannot open " + tmp.string());
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, kFormatVersion);
    const auto meta = c.meta.dump();
    put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(os, c.tensors.size());
    for (const auto& [name, raw] : c.tensors) {
      auto t = raw.detach().cpu().contiguous();
      if (name.size() > 0xffff) throw DataError("checkpoint: name too long");
      put<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint8_t>(os, dtype_code(t.scalar_type()));
      put<std::uint8_t>(os, static_cast<std::uint8_t>(t.dim()));
      for (auto d : t.sizes()) put<std::int64_t>(os, d);
      const auto nbytes = static_cast<std::uint64_t>(t.numel()) *
                          t.element_size();
      put<std::uint64_t>(os, nbytes);
      os.write(static_cast<const char*>(t.const_data_ptr()),
               static_cast<std::streamsize>(nbytes));
    }
    if (!os) throw IoError("checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("checkpoint: rename to " + path.string() +
                        " failed: " + ec.message());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic in " + path.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kFormatVersion) {
    throw DataError("checkpoint: unsupported format version " +
                    std::to_string(version));
  }
  Checkpoint c;
  const auto meta_len = get<std::uint64_t>(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw DataError("checkpoint: truncated metadata");
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad metadata: ") + e.what());
  }
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint16_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto dtype = code_dtype(get<std::uint8_t>(is));
    const auto ndim = get<std::uint8_t>(is);
    std::vector<std::int64_t> dims;
    for (int d = 0; d < ndim; ++d) {
      const auto dim = get<std::int64_t>(is);
      if (dim < 0) throw DataError("checkpoint: negative dim for " + name);
      dims.push_back(dim);
    }
    const auto nbytes = get<std::uint64_t>(is);
    auto t = torch::empty(dims, dtype);
    if (static_cast<std::uint64_t>(t.numel()) * t.element_size() != nbytes) {
      throw DataError("checkpoint: size mismatch for tensor " + name);
    }
    is.read(static_cast<char*>(t.data_ptr()),
            static_cast<std::streamsize>(nbytes));
    if (!is) throw DataError("checkpoint: truncated tensor " + name);
    c.tensors.emplace(std::move(name), std::move(t));
  }
  return c;
}

}  // namespace mdm::ckpt

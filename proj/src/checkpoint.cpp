#include "usev/checkpoint.hpp"

#include <algorithm>
#include <fstream>

#include "usev/binio.hpp"
#include "usev/error.hpp"

namespace usev {

namespace {
constexpr char kMagic[8] = {'U', 'S', 'E', 'V', 'C', 'K', 'P', 'T'};
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                      Precision precision) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::Io, "cannot create checkpoint " + path.string());
  os.write(kMagic, sizeof kMagic);
  binio::put<std::uint32_t>(os, kCheckpointVersion);
  binio::put_str(os, ckpt.config_text);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    require(t.values.size() == ad::numel(t.shape), ErrorKind::Shape,
            "tensor " + t.name + " does not match its shape");
    binio::put_str(os, t.name);
    binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) binio::put<std::uint64_t>(os, d);
    binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(precision));
    for (double v : t.values) {
      if (precision == Precision::Float32) binio::put<float>(os, static_cast<float>(v));
      else binio::put<double>(os, v);
    }
  }
  if (!os) fail(ErrorKind::Io, "write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || !std::equal(magic, magic + 8, kMagic))
    fail(ErrorKind::Format, path.string() + " is not a checkpoint");
  const auto version = binio::get<std::uint32_t>(is, "checkpoint version");
  if (version != kCheckpointVersion)
    fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_text = binio::get_str(is, "checkpoint config");
  const auto count = binio::get<std::uint32_t>(is, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = binio::get_str(is, "tensor name", 4096);
    const auto rank = binio::get<std::uint32_t>(is, "tensor rank");
    if (rank > 8) fail(ErrorKind::Format, "implausible rank for tensor " + t.name);
    for (std::uint32_t r = 0; r < rank; ++r)
      t.shape.push_back(binio::get<std::uint64_t>(is, "tensor extent"));
    const auto dtype = binio::get<std::uint8_t>(is, "tensor dtype");
    if (dtype > 1) fail(ErrorKind::Format, "unknown dtype for tensor " + t.name);
    const std::size_t n = ad::numel(t.shape);
    if (n > (std::size_t{1} << 32)) fail(ErrorKind::Format, "implausible size for " + t.name);
    t.values.resize(n);
    for (auto& v : t.values)
      v = dtype == 0 ? static_cast<double>(binio::get<float>(is, "tensor data"))
                     : binio::get<double>(is, "tensor data");
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

Checkpoint snapshot(const UsevModel& model) {
  Checkpoint ckpt;
  ckpt.config_text = model.config().to_text();
  for (const auto& [name, t] : model.named_parameters())
    ckpt.tensors.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  return ckpt;
}

void restore(UsevModel& model, const Checkpoint& ckpt) {
  const UsevConfig stored = UsevConfig::from_text(ckpt.config_text);
  if (!(stored == model.config()))
    fail(ErrorKind::Shape, "checkpoint config does not match the model:\n" + ckpt.config_text +
                               "vs\n" + model.config().to_text());
  for (const auto& [name, t] : model.named_parameters()) {
    const auto it = std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(),
                                 [&](const StoredTensor& s) { return s.name == name; });
    if (it == ckpt.tensors.end()) fail(ErrorKind::Shape, "checkpoint lacks tensor " + name);
    if (it->shape != t.shape())
      fail(ErrorKind::Shape, "tensor " + name + ": checkpoint shape " + ad::shape_str(it->shape) +
                                 ", model shape " + ad::shape_str(t.shape()));
    ad::Tensor handle = t;
    std::copy(it->values.begin(), it->values.end(), handle.data().begin());
  }
}

void save_model(const UsevModel& model, const std::filesystem::path& path, Precision precision) {
  write_checkpoint(path, snapshot(model), precision);
}

UsevModel load_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  UsevModel model(UsevConfig::from_text(ckpt.config_text));
  restore(model, ckpt);
  return model;
}

}  // namespace usev

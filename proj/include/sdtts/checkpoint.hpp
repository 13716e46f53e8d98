#ifndef SDTTS_CHECKPOINT_HPP
#define SDTTS_CHECKPOINT_HPP

#include <array>
#include <cstdint>
#include <string>

#include "sdtts/io_util.hpp"
#include "sdtts/model.hpp"

namespace sdtts {

// Checkpoint layout (little endian, CRC32 of everything before the trailer):
//   magic "SDTTSCK1", u32 version, u64 step, 4x u64 trainer rng state,
//   config text snapshot, then generator and discriminator tensor tables
//   (name, rank, dims, f32 cells), u32 crc.
// Optimizer moments are deliberately not stored: resumed runs re-warm Adam,
// which costs a few steps of bias correction but keeps files small and the
// format independent of the optimizer.
inline constexpr char kCheckpointMagic[9] = "SDTTSCK1";
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  uint64_t step = 0;
  std::array<uint64_t, 4> rng_state{};
  std::string config_text;
};

namespace detail {

template <typename T>
inline void write_store(BinaryWriter& w, const nn::ParamStore<T>& store) {
  w.u32(static_cast<uint32_t>(store.entries().size()));
  for (const auto& [name, e] : store.entries()) {
    w.str(name);
    w.u32(static_cast<uint32_t>(e.value.shape.size()));
    for (int d : e.value.shape) w.u32(static_cast<uint32_t>(d));
    for (int64_t i = 0; i < e.value.size(); ++i)
      w.f32(static_cast<float>(e.value.data[static_cast<size_t>(i)]));
  }
}

template <typename T>
inline void read_store(BinaryReader& r, nn::ParamStore<T>& store, const std::string& which) {
  uint32_t n = r.u32();
  if (n != store.entries().size())
    throw std::runtime_error(r.what() + ": " + which + " table has " + std::to_string(n) +
                             " tensors, model expects " + std::to_string(store.entries().size()));
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    if (!store.has(name))
      throw std::runtime_error(r.what() + ": unknown " + which + " tensor '" + name + "'");
    auto& e = store.get(name);
    uint32_t rank = r.u32();
    std::vector<int> shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(r.u32());
    if (shape != e.value.shape)
      throw std::runtime_error(r.what() + ": tensor '" + name + "' has shape " +
                               nn::shape_str(shape) + ", model expects " +
                               nn::shape_str(e.value.shape));
    for (int64_t k = 0; k < e.value.size(); ++k)
      e.value.data[static_cast<size_t>(k)] = static_cast<T>(r.f32());
  }
}

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const nn::TtsModel<T>& model, uint64_t step,
                     const std::array<uint64_t, 4>& rng_state) {
  BinaryWriter w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.u64(step);
  for (uint64_t s : rng_state) w.u64(s);
  w.str(config_to_text(model.cfg));
  detail::write_store(w, model.params);
  detail::write_store(w, model.disc_params);
  uint32_t crc = crc32(w.data().data(), w.data().size());
  w.u32(crc);
  write_file_atomic(path, w.data());
}

// Reads and fully validates the header + CRC without needing a model; used to
// recover the config a checkpoint was trained with.
inline CheckpointInfo read_checkpoint_header(const std::string& path) {
  std::string blob = read_file(path);
  if (blob.size() < 8 + 4 + 4) throw std::runtime_error("checkpoint " + path + ": truncated file");
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<uint32_t>(static_cast<unsigned char>(blob[blob.size() - 4 + i])) << (8 * i);
  uint32_t actual = crc32(blob.data(), blob.size() - 4);
  if (stored != actual) throw std::runtime_error("checkpoint " + path + ": checksum mismatch");
  BinaryReader r(blob, "checkpoint " + path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint " + path + ": bad magic");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint " + path + ": unsupported version " +
                             std::to_string(version));
  CheckpointInfo info;
  info.step = r.u64();
  for (auto& s : info.rng_state) s = r.u64();
  info.config_text = r.str();
  return info;
}

// Loads tensors into an already-constructed model. Every tensor in the file
// must exist in the model with an identical shape and vice versa.
template <typename T>
CheckpointInfo load_checkpoint_into(const std::string& path, nn::TtsModel<T>& model) {
  std::string blob = read_file(path);
  CheckpointInfo info = read_checkpoint_header(path);
  BinaryReader r(blob, "checkpoint " + path);
  char magic[8];
  r.bytes(magic, 8);
  r.u32();
  r.u64();
  for (int i = 0; i < 4; ++i) r.u64();
  r.str();
  detail::read_store(r, model.params, "generator");
  detail::read_store(r, model.disc_params, "discriminator");
  if (r.remaining() != 4)
    throw std::runtime_error("checkpoint " + path + ": trailing bytes after tensor tables");
  return info;
}

}  // namespace sdtts

#endif

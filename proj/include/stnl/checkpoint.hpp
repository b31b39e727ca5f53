#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "stnl/config.hpp"
#include "stnl/model.hpp"
#include "stnl/optim.hpp"
#include "stnl/tensor_io.hpp"

namespace stnl {

// CKPT container, version 1, little-endian:
//   bytes 0-3   ASCII magic "CKPT"
//   u16         version (= 1)
//   u64         model-config digest
//   u32         config_len, then config_len bytes of canonical config JSON
//   u32         n_entries
//   per entry:  u16 name_len, name bytes,
//               u8 dtype, u8 ndim, ndim x u64 dims,
//               u64 offset (into the blob region), u64 nbytes
//   blob        concatenated TNSR records
// Optimizer tensors, when present, use the "optim." name prefix plus one
// "optim.step" scalar.

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Format, DigestMismatch, MissingParam };
  CheckpointError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace ckpt_detail {

struct Entry {
  std::string name;
  Dtype dtype;
  Shape shape;
  std::uint64_t offset;
  std::uint64_t nbytes;
};

struct Container {
  std::uint64_t digest = 0;
  std::string config_json;
  std::vector<Entry> entries;
  std::vector<unsigned char> blob;
};

inline Container parse(const std::vector<unsigned char>& buf, const std::string& path) {
  using stnl::detail::get_bytes;
  auto fail = [&path](const std::string& msg) -> CheckpointError {
    return CheckpointError(CheckpointError::Kind::Format, path + ": " + msg);
  };
  if (buf.size() < 6 || std::memcmp(buf.data(), "CKPT", 4) != 0) throw fail("not a CKPT file");
  if (get_bytes(buf, 4, 2) != 1) throw fail("unsupported version");
  std::size_t pos = 6;
  auto need = [&](std::size_t n) {
    if (pos + n > buf.size()) throw fail("truncated file");
  };
  Container c;
  need(8);
  c.digest = get_bytes(buf, pos, 8);
  pos += 8;
  need(4);
  const std::size_t cfg_len = static_cast<std::size_t>(get_bytes(buf, pos, 4));
  pos += 4;
  need(cfg_len);
  c.config_json.assign(reinterpret_cast<const char*>(buf.data() + pos), cfg_len);
  pos += cfg_len;
  need(4);
  const std::size_t n_entries = static_cast<std::size_t>(get_bytes(buf, pos, 4));
  pos += 4;
  for (std::size_t i = 0; i < n_entries; ++i) {
    Entry e;
    need(2);
    const std::size_t name_len = static_cast<std::size_t>(get_bytes(buf, pos, 2));
    pos += 2;
    need(name_len);
    e.name.assign(reinterpret_cast<const char*>(buf.data() + pos), name_len);
    pos += name_len;
    need(2);
    const std::uint64_t dtype_byte = get_bytes(buf, pos, 1);
    if (dtype_byte > 1) throw fail("entry " + e.name + ": bad dtype");
    e.dtype = static_cast<Dtype>(dtype_byte);
    const std::size_t ndim = static_cast<std::size_t>(get_bytes(buf, pos + 1, 1));
    pos += 2;
    need(8 * ndim);
    for (std::size_t d = 0; d < ndim; ++d) {
      e.shape.push_back(static_cast<std::size_t>(get_bytes(buf, pos + 8 * d, 8)));
    }
    pos += 8 * ndim;
    need(16);
    e.offset = get_bytes(buf, pos, 8);
    e.nbytes = get_bytes(buf, pos + 8, 8);
    pos += 16;
    c.entries.push_back(std::move(e));
  }
  c.blob.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
  for (const Entry& e : c.entries) {
    if (e.offset + e.nbytes > c.blob.size()) throw fail("entry " + e.name + ": blob out of range");
  }
  return c;
}

template <typename T>
Tensor<T> entry_tensor(const Container& c, const Entry& e, const std::string& path) {
  std::vector<unsigned char> rec(c.blob.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                 c.blob.begin() + static_cast<std::ptrdiff_t>(e.offset + e.nbytes));
  try {
    Tensor<T> t = stnl::detail::decode_tensor<T>(rec, path + "#" + e.name);
    if (t.shape() != e.shape) {
      throw CheckpointError(CheckpointError::Kind::Format,
                            path + ": entry " + e.name + " record shape disagrees with manifest");
    }
    return t;
  } catch (const TensorIoError& err) {
    throw CheckpointError(CheckpointError::Kind::Format, err.what());
  }
}

}  // namespace ckpt_detail

/// Serializes model state (and optionally Adam moments) into one container.
template <typename T>
void save_checkpoint(TrackEncoder<T>& enc, const std::string& path, Adam<T>* optimizer = nullptr) {
  using stnl::detail::put_bytes;
  struct Pending {
    std::string name;
    const Tensor<T>* tensor;
  };
  std::vector<Pending> pending;
  enc.visit_state([&pending](const std::string& name, Tensor<T>* t) { pending.push_back({name, t}); });
  Tensor<T> step_scalar;
  if (optimizer) {
    optimizer->visit_state(
        [&pending](const std::string& name, Tensor<T>* t) { pending.push_back({name, t}); });
    step_scalar = Tensor<T>::scalar(static_cast<T>(optimizer->step_count()));
    pending.push_back({"optim.step", &step_scalar});
  }

  std::vector<unsigned char> blob;
  struct Placed {
    std::uint64_t offset, nbytes;
  };
  std::vector<Placed> placed;
  for (const Pending& p : pending) {
    const auto rec = stnl::detail::encode_tensor(*p.tensor);
    placed.push_back({blob.size(), rec.size()});
    blob.insert(blob.end(), rec.begin(), rec.end());
  }

  const std::string cfg_json = model_config_to_json(enc.config()).dump();
  std::vector<unsigned char> out;
  out.insert(out.end(), {'C', 'K', 'P', 'T'});
  put_bytes(out, 1, 2);
  put_bytes(out, config_digest(enc.config()), 8);
  put_bytes(out, cfg_json.size(), 4);
  out.insert(out.end(), cfg_json.begin(), cfg_json.end());
  put_bytes(out, pending.size(), 4);
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const Pending& p = pending[i];
    put_bytes(out, p.name.size(), 2);
    out.insert(out.end(), p.name.begin(), p.name.end());
    put_bytes(out, static_cast<std::uint64_t>(dtype_of<T>()), 1);
    put_bytes(out, p.tensor->rank(), 1);
    for (std::size_t d = 0; d < p.tensor->rank(); ++d) put_bytes(out, p.tensor->dim(d), 8);
    put_bytes(out, placed[i].offset, 8);
    put_bytes(out, placed[i].nbytes, 8);
  }
  out.insert(out.end(), blob.begin(), blob.end());

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failure on " + path);
}

/// The canonical model-config JSON a checkpoint was written with.
inline std::string checkpoint_config_json(const std::string& path) {
  const auto c = ckpt_detail::parse(stnl::detail::read_file(path), path);
  return c.config_json;
}

/// Rebuilds the encoder from `cfg` and loads every state tensor by name.
/// Fails without a partial model on digest mismatch, missing entries, or a
/// malformed file.
template <typename T>
TrackEncoder<T> load_checkpoint(const std::string& path, const ModelConfig& cfg) {
  std::vector<unsigned char> buf;
  try {
    buf = stnl::detail::read_file(path);
  } catch (const TensorIoError& e) {
    throw CheckpointError(CheckpointError::Kind::Format, e.what());
  }
  const ckpt_detail::Container c = ckpt_detail::parse(buf, path);
  if (c.digest != config_digest(cfg)) {
    throw CheckpointError(CheckpointError::Kind::DigestMismatch,
                          path + ": checkpoint was built from a different model config");
  }

  std::map<std::string, const ckpt_detail::Entry*> by_name;
  for (const auto& e : c.entries) by_name[e.name] = &e;

  TrackEncoder<T> enc = TrackEncoder<T>::build(cfg, Rng(0));
  enc.visit_state([&](const std::string& name, Tensor<T>* t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError(CheckpointError::Kind::MissingParam, path + ": missing parameter " + name);
    }
    Tensor<T> loaded = ckpt_detail::entry_tensor<T>(c, *it->second, path);
    if (!loaded.same_shape(*t)) {
      throw CheckpointError(CheckpointError::Kind::Format,
                            path + ": parameter " + name + " has shape " +
                                shape_string(loaded.shape()) + ", expected " +
                                shape_string(t->shape()));
    }
    *t = std::move(loaded);
  });
  enc.set_mode(Mode::Eval);
  return enc;
}

/// Restores Adam moments and step count into an optimizer already attached to
/// the loaded encoder's parameters.
template <typename T>
void load_optimizer_state(const std::string& path, Adam<T>& optimizer) {
  std::vector<unsigned char> buf;
  try {
    buf = stnl::detail::read_file(path);
  } catch (const TensorIoError& e) {
    throw CheckpointError(CheckpointError::Kind::Format, e.what());
  }
  const ckpt_detail::Container c = ckpt_detail::parse(buf, path);
  std::map<std::string, const ckpt_detail::Entry*> by_name;
  for (const auto& e : c.entries) by_name[e.name] = &e;

  optimizer.visit_state([&](const std::string& name, Tensor<T>* t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointError(CheckpointError::Kind::MissingParam,
                            path + ": missing optimizer state " + name);
    }
    Tensor<T> loaded = ckpt_detail::entry_tensor<T>(c, *it->second, path);
    if (!loaded.same_shape(*t)) {
      throw CheckpointError(CheckpointError::Kind::Format,
                            path + ": optimizer state " + name + " has unexpected shape");
    }
    *t = std::move(loaded);
  });
  auto it = by_name.find("optim.step");
  if (it == by_name.end()) {
    throw CheckpointError(CheckpointError::Kind::MissingParam, path + ": missing optimizer step");
  }
  *optimizer.step_counter() = static_cast<long>(ckpt_detail::entry_tensor<T>(c, *it->second, path)[0]);
}

/// Loads a checkpoint using the config embedded in the file itself.
template <typename T>
TrackEncoder<T> load_checkpoint_auto(const std::string& path) {
  const std::string cfg_text = checkpoint_config_json(path);
  json doc;
  try {
    doc = json::parse(cfg_text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(CheckpointError::Kind::Format,
                          path + ": embedded config is not valid JSON: " + e.what());
  }
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(doc, "model");
  } catch (const ConfigError& e) {
    throw CheckpointError(CheckpointError::Kind::Format, path + ": " + e.what());
  }
  return load_checkpoint<T>(path, cfg);
}

}  // namespace stnl

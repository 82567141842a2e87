#include "hquic/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "hquic/errors.hpp"

namespace hquic {

namespace {

template <typename T>
void put(std::ofstream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw DecodeError("checkpoint: truncated file");
  return v;
}

void put_tensor(std::ofstream& f, const Tensor& t) {
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

void get_tensor(std::ifstream& f, Tensor& t) {
  f.read(reinterpret_cast<char*>(t.data()),
         static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!f) throw DecodeError("checkpoint: truncated tensor data");
}

}  // namespace

void save_checkpoint(const std::string& path, Model& model, std::int64_t step) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open checkpoint for writing: " + path);
  f.write("HQCK", 4);
  put<std::uint8_t>(f, 1);
  std::string cfg = model.config().serialize();
  put<std::uint32_t>(f, static_cast<std::uint32_t>(cfg.size()));
  f.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::int64_t>(f, step);
  const auto& params = model.params().all();
  put<std::uint32_t>(f, static_cast<std::uint32_t>(params.size()));
  for (const ad::Param* p : params) {
    put<std::uint16_t>(f, static_cast<std::uint16_t>(p->name.size()));
    f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint8_t>(f, static_cast<std::uint8_t>(p->value.ndim()));
    for (int d : p->value.shape()) put<std::uint32_t>(f, static_cast<std::uint32_t>(d));
    put_tensor(f, p->value);
    put_tensor(f, p->adam_m);
    put_tensor(f, p->adam_v);
  }
  const auto& tables = model.frozen_tables();
  put<std::uint32_t>(f, static_cast<std::uint32_t>(tables.size()));
  for (const auto& t : tables) {
    put<std::uint32_t>(f, static_cast<std::uint32_t>(t.size()));
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(std::uint32_t)));
  }
  put<std::uint64_t>(f, model.param_hash());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFoundError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "HQCK", 4) != 0)
    throw DecodeError("checkpoint: bad magic");
  std::uint8_t version = get<std::uint8_t>(f);
  if (version != 1) throw DecodeError("checkpoint: unsupported version");
  std::uint32_t cfg_len = get<std::uint32_t>(f);
  std::string cfg_text(cfg_len, '\0');
  f.read(cfg_text.data(), cfg_len);
  if (!f) throw DecodeError("checkpoint: truncated config");
  LoadedCheckpoint out;
  out.step = get<std::int64_t>(f);
  out.model = std::make_unique<Model>(ModelConfig::deserialize(cfg_text));
  std::uint32_t n_params = get<std::uint32_t>(f);
  if (n_params != out.model->params().all().size())
    throw DecodeError("checkpoint: parameter count mismatch");
  for (std::uint32_t i = 0; i < n_params; ++i) {
    std::uint16_t name_len = get<std::uint16_t>(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    ad::Param* p = out.model->params().find(name);
    if (!p) throw DecodeError("checkpoint: unknown parameter " + name);
    std::uint8_t ndim = get<std::uint8_t>(f);
    if (ndim != static_cast<std::uint8_t>(p->value.ndim()))
      throw DecodeError("checkpoint: rank mismatch for " + name);
    for (int d = 0; d < ndim; ++d) {
      std::uint32_t dim = get<std::uint32_t>(f);
      if (dim != static_cast<std::uint32_t>(p->value.dim(d)))
        throw DecodeError("checkpoint: shape mismatch for " + name);
    }
    get_tensor(f, p->value);
    get_tensor(f, p->adam_m);
    get_tensor(f, p->adam_v);
  }
  std::uint32_t n_tables = get<std::uint32_t>(f);
  std::vector<std::vector<std::uint32_t>> tables(n_tables);
  for (auto& t : tables) {
    std::uint32_t len = get<std::uint32_t>(f);
    t.assign(len, 0);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(len * sizeof(std::uint32_t)));
    if (!f) throw DecodeError("checkpoint: truncated CDF table");
  }
  out.model->set_frozen_tables(std::move(tables));
  std::uint64_t stored_hash = get<std::uint64_t>(f);
  if (stored_hash != out.model->param_hash())
    throw DecodeError("checkpoint: parameter hash mismatch (corrupt file)");
  return out;
}

}  // namespace hquic

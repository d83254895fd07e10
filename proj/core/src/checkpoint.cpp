#include "vlws/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vlws {

static constexpr char kMagic[8] = {'V', 'L', 'W', 'S', 'C', 'K', 'P', 'T'};
static constexpr uint32_t kVersion = 1;

template <class T>
static void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
static void get(std::istream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
}
static void put_str(std::ostream& out, const std::string& s) {
  put(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
static std::string get_str(std::istream& in) {
  uint32_t n = 0;
  get(in, n);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& meta,
                     const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  put(out, kVersion);
  put(out, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_str(out, k);
    put_str(out, v);
  }
  put(out, static_cast<uint64_t>(params.all().size()));
  for (const auto& p : params.all()) {
    put_str(out, p->name);
    put(out, static_cast<uint32_t>(p->value.ndim()));
    for (int i = 0; i < p->value.ndim(); ++i) put(out, static_cast<int32_t>(p->value.dim(i)));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t version = 0;
  get(in, version);
  if (version != kVersion)
    throw std::runtime_error("checkpoint version mismatch in " + path + ": found " +
                             std::to_string(version) + ", expected " + std::to_string(kVersion));
  Checkpoint ck;
  uint32_t nmeta = 0;
  get(in, nmeta);
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = get_str(in);
    ck.meta[k] = get_str(in);
  }
  uint64_t nparams = 0;
  get(in, nparams);
  for (uint64_t i = 0; i < nparams; ++i) {
    std::string name = get_str(in);
    uint32_t ndim = 0;
    get(in, ndim);
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d) {
      int32_t v = 0;
      get(in, v);
      shape[d] = v;
    }
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return ck;
}

void restore_params(ParamStore& params, const Checkpoint& ckpt) {
  for (const auto& [name, tensor] : ckpt.tensors) {
    Var p = params.find(name);
    if (!p) throw std::runtime_error("checkpoint parameter not in model: " + name);
    if (!p->value.same_shape(tensor))
      throw std::runtime_error("checkpoint shape mismatch for " + name + ": " +
                               tensor.shape_str() + " vs " + p->value.shape_str());
    p->value = tensor;
  }
}

}  // namespace vlws

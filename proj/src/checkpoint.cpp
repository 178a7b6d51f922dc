#include "ctxseq/checkpoint.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ctxseq {

namespace {

constexpr char kMagic[4] = {'C', 'T', 'X', 'S'};

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n, const char* what) const {
    if (pos + n > buf.size()) throw LoadError(std::string("truncated checkpoint at ") + what);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

void write_file_atomic_bytes(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError("cannot open for writing: " + tmp);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw LoadError("failed to write: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw LoadError("cannot rename temporary file onto " + path);
  }
}

}  // namespace

uint32_t buffer_crc32(const std::string& bytes) {
  return static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string Checkpoint::meta_at(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw LoadError("checkpoint missing meta field \"" + key + "\"");
  return it->second;
}

int64_t Checkpoint::meta_int(const std::string& key) const {
  try {
    return std::stoll(meta_at(key));
  } catch (const std::logic_error&) {
    throw LoadError("checkpoint meta field \"" + key + "\" is not an integer");
  }
}

double Checkpoint::meta_double(const std::string& key) const {
  try {
    return std::stod(meta_at(key));
  } catch (const std::logic_error&) {
    throw LoadError("checkpoint meta field \"" + key + "\" is not a number");
  }
}

void checkpoint_save(const std::string& path, const Checkpoint& ckpt) {
  const bool f32 = ckpt.meta.count("precision") && ckpt.meta.at("precision") == "f32";
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, Checkpoint::kVersion);

  std::ostringstream cfg;
  for (const auto& [k, v] : ckpt.meta) cfg << k << "=" << v << "\n";
  const std::string cfg_text = cfg.str();
  put_u32(out, static_cast<uint32_t>(cfg_text.size()));
  out += cfg_text;

  put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int a = 0; a < t.rank(); ++a) put_u64(out, static_cast<uint64_t>(t.extent(a)));
    if (f32) {
      for (double v : t.value()) {
        const float fv = static_cast<float>(v);
        uint32_t bits;
        std::memcpy(&bits, &fv, 4);
        put_u32(out, bits);
      }
    } else {
      for (double v : t.value()) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_u64(out, bits);
      }
    }
  }
  put_u32(out, buffer_crc32(out));
  write_file_atomic_bytes(path, out);
}

Checkpoint checkpoint_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 12) throw LoadError("checkpoint too small: " + path);

  const uint32_t stored_crc = [&] {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4 + i])) << (8 * i);
    }
    return v;
  }();
  const std::string body = buf.substr(0, buf.size() - 4);
  if (buffer_crc32(body) != stored_crc) throw LoadError("checksum mismatch in " + path);

  Reader r{body};
  if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw LoadError("bad magic in " + path);
  const uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version));
  }

  Checkpoint ckpt;
  const uint32_t cfg_len = r.u32("config length");
  std::istringstream cfg(r.bytes(cfg_len, "config block"));
  std::string line;
  while (std::getline(cfg, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw LoadError("malformed config line in " + path);
    ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const bool f32 = ckpt.meta.count("precision") && ckpt.meta.at("precision") == "f32";

  const uint32_t count = r.u32("tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32("tensor name length");
    const std::string name = r.bytes(name_len, "tensor name");
    const uint32_t rank = r.u32("tensor rank");
    if (rank == 0 || rank > 8) throw LoadError("bad rank for tensor " + name);
    Shape shape;
    size_t numel = 1;
    for (uint32_t a = 0; a < rank; ++a) {
      const uint64_t dim = r.u64("tensor dim");
      if (dim == 0 || dim > (1u << 28)) throw LoadError("bad extent for tensor " + name);
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    std::vector<double> data(numel);
    if (f32) {
      for (size_t j = 0; j < numel; ++j) {
        const uint32_t bits = r.u32("tensor data");
        float fv;
        std::memcpy(&fv, &bits, 4);
        data[j] = static_cast<double>(fv);
      }
    } else {
      for (size_t j = 0; j < numel; ++j) {
        const uint64_t bits = r.u64("tensor data");
        double dv;
        std::memcpy(&dv, &bits, 8);
        data[j] = dv;
      }
    }
    ckpt.tensors.emplace_back(name, Tensor::of(std::move(data), shape));
  }
  if (r.pos != body.size()) throw LoadError("trailing bytes in " + path);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Config <-> meta
// ---------------------------------------------------------------------------

void model_config_to_meta(const ModelConfig& cfg, std::map<std::string, std::string>& meta) {
  meta["model.kind"] = kind_name(cfg.kind);
  meta["model.n_layers"] = std::to_string(cfg.n_layers);
  meta["model.hidden"] = std::to_string(cfg.hidden);
  meta["model.embed_dim"] = std::to_string(cfg.embed_dim);
  meta["model.vocab_size"] = std::to_string(cfg.vocab_size);
  meta["model.topics"] = std::to_string(cfg.topics);
  meta["model.dropout"] = std::to_string(cfg.dropout);
  meta["model.reverse_source"] = cfg.reversed() ? "1" : "0";
  meta["model.attn_conv_width"] = std::to_string(cfg.attn_conv_width);
  meta["model.max_source_len"] = std::to_string(cfg.max_source_len);
  meta["model.max_target_len"] = std::to_string(cfg.max_target_len);
  meta["model.max_context_len"] = std::to_string(cfg.max_context_len);
  meta["model.context_per_gate"] = cfg.context_per_gate ? "1" : "0";
  meta["model.context_io_cell_mod"] = cfg.context_io_cell_mod ? "1" : "0";
}

ModelConfig model_config_from_meta(const Checkpoint& ckpt) {
  ModelConfig cfg;
  cfg.kind = kind_from_name(ckpt.meta_at("model.kind"));
  cfg.n_layers = static_cast<int>(ckpt.meta_int("model.n_layers"));
  cfg.hidden = static_cast<int>(ckpt.meta_int("model.hidden"));
  cfg.embed_dim = static_cast<int>(ckpt.meta_int("model.embed_dim"));
  cfg.vocab_size = static_cast<int>(ckpt.meta_int("model.vocab_size"));
  cfg.topics = static_cast<int>(ckpt.meta_int("model.topics"));
  cfg.dropout = ckpt.meta_double("model.dropout");
  cfg.reverse_source = ckpt.meta_int("model.reverse_source") != 0;
  cfg.attn_conv_width = static_cast<int>(ckpt.meta_int("model.attn_conv_width"));
  cfg.max_source_len = static_cast<int>(ckpt.meta_int("model.max_source_len"));
  cfg.max_target_len = static_cast<int>(ckpt.meta_int("model.max_target_len"));
  cfg.max_context_len = static_cast<int>(ckpt.meta_int("model.max_context_len"));
  cfg.context_per_gate = ckpt.meta_int("model.context_per_gate") != 0;
  cfg.context_io_cell_mod = ckpt.meta_int("model.context_io_cell_mod") != 0;
  return cfg;
}

void require_compatible(const Checkpoint& ckpt, const ModelConfig& expected) {
  const ModelConfig got = model_config_from_meta(ckpt);
  auto fail = [](const std::string& field, const std::string& a, const std::string& b) {
    throw LoadError("checkpoint incompatible with requested config: " + field + " is " + a +
                    ", expected " + b);
  };
  if (got.kind != expected.kind) fail("model.kind", kind_name(got.kind), kind_name(expected.kind));
  if (got.n_layers != expected.n_layers)
    fail("model.n_layers", std::to_string(got.n_layers), std::to_string(expected.n_layers));
  if (got.hidden != expected.hidden)
    fail("model.hidden", std::to_string(got.hidden), std::to_string(expected.hidden));
  if (got.embed_dim != expected.embed_dim)
    fail("model.embed_dim", std::to_string(got.embed_dim), std::to_string(expected.embed_dim));
  if (got.vocab_size != expected.vocab_size)
    fail("model.vocab_size", std::to_string(got.vocab_size), std::to_string(expected.vocab_size));
  if (got.topics != expected.topics)
    fail("model.topics", std::to_string(got.topics), std::to_string(expected.topics));
}

// ---------------------------------------------------------------------------
// Bundle <-> checkpoint
// ---------------------------------------------------------------------------

namespace {

void cnn_config_to_meta(const CnnConfig& cfg, std::map<std::string, std::string>& meta) {
  meta["cnn.present"] = "1";
  meta["cnn.vocab_size"] = std::to_string(cfg.vocab_size);
  meta["cnn.embed_dim"] = std::to_string(cfg.embed_dim);
  meta["cnn.filters"] = std::to_string(cfg.filters);
  meta["cnn.k_top"] = std::to_string(cfg.k_top);
  meta["cnn.topics"] = std::to_string(cfg.topics);
  meta["cnn.layer2_filters"] = std::to_string(cfg.layer2_filters);
  meta["cnn.layer2_height"] = std::to_string(cfg.layer2_height);
  meta["cnn.dropout"] = std::to_string(cfg.dropout);
}

CnnConfig cnn_config_from_meta(const Checkpoint& ckpt) {
  CnnConfig cfg;
  cfg.vocab_size = static_cast<int>(ckpt.meta_int("cnn.vocab_size"));
  cfg.embed_dim = static_cast<int>(ckpt.meta_int("cnn.embed_dim"));
  cfg.filters = static_cast<int>(ckpt.meta_int("cnn.filters"));
  cfg.k_top = static_cast<int>(ckpt.meta_int("cnn.k_top"));
  cfg.topics = static_cast<int>(ckpt.meta_int("cnn.topics"));
  cfg.layer2_filters = static_cast<int>(ckpt.meta_int("cnn.layer2_filters"));
  cfg.layer2_height = static_cast<int>(ckpt.meta_int("cnn.layer2_height"));
  cfg.dropout = ckpt.meta_double("cnn.dropout");
  return cfg;
}

}  // namespace

Checkpoint ModelBundle::to_checkpoint() const {
  Checkpoint ckpt;
  model_config_to_meta(model.config, ckpt.meta);
  if (cnn) cnn_config_to_meta(cnn->config, ckpt.meta);
  ckpt.meta["precision"] = precision;
  ckpt.meta["vocab_hash"] = std::to_string(vocab_hash);
  ckpt.meta["train.seed"] = std::to_string(seed);
  ckpt.meta["train.step"] = std::to_string(step);
  ckpt.meta["train.stage"] = std::to_string(stage);
  ckpt.meta["train.epoch"] = std::to_string(epoch);
  if (!adam.empty()) {
    const auto& any = adam.begin()->second;
    ckpt.meta["adam.t"] = std::to_string(any.t);
    ckpt.meta["adam.alpha"] = std::to_string(any.alpha);
    ckpt.meta["adam.beta1"] = std::to_string(any.beta1);
    ckpt.meta["adam.beta2"] = std::to_string(any.beta2);
    ckpt.meta["adam.epsilon"] = std::to_string(any.epsilon);
  }

  for (const auto& [name, t] : model.named()) ckpt.tensors.emplace_back(name, t);
  if (cnn) {
    for (const auto& [name, t] : cnn->named()) ckpt.tensors.emplace_back(name, t);
  }
  for (const auto& [name, st] : adam) {
    const auto dims = [&]() -> Shape {
      return {static_cast<int>(st.m.size())};
    }();
    ckpt.tensors.emplace_back("adam.m:" + name, Tensor::of(st.m, dims));
    ckpt.tensors.emplace_back("adam.v:" + name, Tensor::of(st.v, dims));
  }
  return ckpt;
}

ModelBundle ModelBundle::from_checkpoint(const Checkpoint& ckpt) {
  ModelBundle b;
  const ModelConfig cfg = model_config_from_meta(ckpt);
  b.precision = ckpt.has_meta("precision") ? ckpt.meta_at("precision") : "f64";
  b.vocab_hash = static_cast<uint32_t>(ckpt.meta_int("vocab_hash"));
  b.seed = static_cast<uint64_t>(ckpt.meta_int("train.seed"));
  b.step = ckpt.meta_int("train.step");
  b.stage = static_cast<int>(ckpt.meta_int("train.stage"));
  b.epoch = static_cast<int>(ckpt.meta_int("train.epoch"));

  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name.emplace(name, t);

  // Rebuild the parameter set with the canonical ordering, then overwrite
  // values from the file so any missing tensor is caught.
  SeededRng throwaway(0);
  b.model = ModelParams::init(cfg, throwaway);
  for (auto& name : b.model.order) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw LoadError("checkpoint missing tensor \"" + name + "\"");
    if (it->second.shape() != b.model.at(name).shape()) {
      throw LoadError("checkpoint tensor \"" + name + "\" has shape " +
                      shape_str(it->second.shape()) + ", expected " +
                      shape_str(b.model.at(name).shape()));
    }
    b.model.at(name).value() = it->second.value();
  }

  if (ckpt.has_meta("cnn.present")) {
    const CnnConfig ccfg = cnn_config_from_meta(ckpt);
    SeededRng tmp(0);
    CnnParams cp = CnnParams::init(ccfg, tmp);
    for (auto& [name, t] : cp.named()) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw LoadError("checkpoint missing tensor \"" + name + "\"");
      if (it->second.shape() != t.shape()) {
        throw LoadError("checkpoint tensor \"" + name + "\" shape mismatch");
      }
      t.value() = it->second.value();
    }
    b.cnn = std::move(cp);
  }

  if (ckpt.has_meta("adam.t")) {
    std::vector<std::pair<std::string, Tensor>> named = b.model.named();
    if (b.cnn) {
      for (auto& nt : b.cnn->named()) named.push_back(nt);
    }
    for (const auto& [name, t] : named) {
      auto mi = by_name.find("adam.m:" + name);
      auto vi = by_name.find("adam.v:" + name);
      if (mi == by_name.end() || vi == by_name.end()) continue;  // frozen tensor
      AdamState st;
      st.m = mi->second.value();
      st.v = vi->second.value();
      if (st.m.size() != t.value().size() || st.v.size() != t.value().size()) {
        throw LoadError("optimizer state size mismatch for \"" + name + "\"");
      }
      st.t = ckpt.meta_int("adam.t");
      st.alpha = ckpt.meta_double("adam.alpha");
      st.beta1 = ckpt.meta_double("adam.beta1");
      st.beta2 = ckpt.meta_double("adam.beta2");
      st.epsilon = ckpt.meta_double("adam.epsilon");
      b.adam.emplace(name, std::move(st));
    }
  }
  return b;
}

}  // namespace ctxseq

#include "prunelab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace prunelab {

namespace {

constexpr char kMagic[4] = {'P', 'R', 'L', 'B'};
constexpr uint8_t kVersion = 1;

// little-endian primitives

void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const uint8_t* p;
  size_t remaining;
  std::string path;

  void need(size_t n) const {
    if (n > remaining)
      throw CorruptPayload(path + ": truncated, wanted " + std::to_string(n) +
                           " more bytes, have " + std::to_string(remaining));
  }
  uint8_t u8() {
    need(1);
    uint8_t v = *p;
    ++p;
    --remaining;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    p += 4;
    remaining -= 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    p += 8;
    remaining -= 8;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p), len);
    p += len;
    remaining -= len;
    return s;
  }
};

std::string act_name(Activation a) {
  return a == Activation::relu ? "relu" : "none";
}

Activation parse_act(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "none") return Activation::none;
  throw InvalidSpec("unknown activation: " + s);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

int64_t to_i64(const std::string& s) {
  size_t pos = 0;
  const long long v = std::stoll(s, &pos);
  if (pos != s.size()) throw InvalidSpec("bad integer in model text: " + s);
  return v;
}

}  // namespace

std::string model_spec_text(const ModelSpec& spec) {
  std::ostringstream os;
  os << "input=";
  for (size_t i = 0; i < spec.input_shape.size(); ++i)
    os << (i ? "x" : "") << spec.input_shape[i];
  os << ";classes=" << spec.num_classes << ";layers=";
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    if (i) os << "|";
    if (const auto* d = std::get_if<DenseSpec>(&spec.layers[i]))
      os << "dense:" << d->in << ":" << d->out << ":" << act_name(d->act)
         << ":" << (d->bias ? "bias" : "nobias");
    else if (const auto* c = std::get_if<Conv2DSpec>(&spec.layers[i]))
      os << "conv:" << c->in_ch << ":" << c->out_ch << ":" << c->kernel << ":"
         << c->stride << ":" << c->padding << ":" << act_name(c->act) << ":"
         << (c->bias ? "bias" : "nobias");
    else if (const auto* p = std::get_if<MaxPoolSpec>(&spec.layers[i]))
      os << "pool:" << p->size << ":" << p->stride;
    else
      os << "flatten";
  }
  return os.str();
}

ModelSpec parse_model_text(const std::string& text) {
  ModelSpec spec;
  for (const std::string& field : split(text, ';')) {
    const size_t eq = field.find('=');
    if (eq == std::string::npos)
      throw InvalidSpec("bad model text field: " + field);
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "input") {
      for (const std::string& d : split(value, 'x'))
        spec.input_shape.push_back(to_i64(d));
    } else if (key == "classes") {
      spec.num_classes = static_cast<int>(to_i64(value));
    } else if (key == "layers") {
      for (const std::string& layer : split(value, '|')) {
        const auto parts = split(layer, ':');
        if (parts[0] == "flatten") {
          spec.layers.push_back(FlattenSpec{});
        } else if (parts[0] == "dense" && parts.size() == 5) {
          spec.layers.push_back(DenseSpec{to_i64(parts[1]), to_i64(parts[2]),
                                          parse_act(parts[3]),
                                          parts[4] == "bias"});
        } else if (parts[0] == "conv" && parts.size() == 8) {
          spec.layers.push_back(
              Conv2DSpec{to_i64(parts[1]), to_i64(parts[2]), to_i64(parts[3]),
                         static_cast<int>(to_i64(parts[4])),
                         static_cast<int>(to_i64(parts[5])),
                         parse_act(parts[6]), parts[7] == "bias"});
        } else if (parts[0] == "pool" && parts.size() == 3) {
          spec.layers.push_back(MaxPoolSpec{static_cast<int>(to_i64(parts[1])),
                                            static_cast<int>(to_i64(parts[2]))});
        } else {
          throw InvalidSpec("bad layer in model text: " + layer);
        }
      }
    } else {
      throw InvalidSpec("unknown model text key: " + key);
    }
  }
  spec.validate();
  return spec;
}

namespace {

void put_buffers(std::string& out, const std::map<std::string, Tensor>& store) {
  put_u32(out, static_cast<uint32_t>(store.size()));
  for (const auto& [id, t] : store) {
    put_str(out, id);
    put_u32(out, static_cast<uint32_t>(t.size()));
    for (int64_t i = 0; i < t.size(); ++i) put_f32(out, t[i]);
  }
}

void read_buffers(Reader& r, const Model& model,
                  std::map<std::string, Tensor>& store) {
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    const std::string id = r.str();
    const uint32_t numel = r.u32();
    const Parameter& p = model.param(id);
    if (numel != static_cast<uint32_t>(p.value.size()))
      throw CorruptPayload("optimizer buffer size mismatch for " + id);
    Tensor t(p.value.shape());
    for (uint32_t j = 0; j < numel; ++j) t[j] = r.f32();
    store.emplace(id, std::move(t));
  }
}

}  // namespace

void save_checkpoint(const Model& model, const OptimizerState* optimizer,
                     const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u8(out, kVersion);
  put_str(out, model_spec_text(model.spec()));
  put_u64(out, model.seed());
  put_u32(out, static_cast<uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    put_str(out, p.id);
    put_u8(out, static_cast<uint8_t>(p.value.rank()));
    for (int64_t d : p.value.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < p.value.size(); ++i) put_f32(out, p.value[i]);
    for (int64_t i = 0; i < p.mask.size(); ++i)
      put_u8(out, p.mask[i] != 0.0f ? 1 : 0);
  }
  if (optimizer) {
    put_u8(out, 1);
    put_u8(out, optimizer->method() == OptimMethod::sgd ? 0 : 1);
    put_f64(out, optimizer->learning_rate);
    put_f64(out, optimizer->momentum);
    put_f64(out, optimizer->beta1);
    put_f64(out, optimizer->beta2);
    put_f64(out, optimizer->epsilon);
    put_u64(out, static_cast<uint64_t>(optimizer->step_count));
    put_buffers(out, optimizer->velocity());
    put_buffers(out, optimizer->first_moment());
    put_buffers(out, optimizer->second_moment());
  } else {
    put_u8(out, 0);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  Reader r{reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size(), path};

  r.need(4);
  if (std::memcmp(r.p, kMagic, 4) != 0)
    throw BadMagic(path + ": not a checkpoint file");
  r.p += 4;
  r.remaining -= 4;
  const uint8_t version = r.u8();
  if (version != kVersion)
    throw VersionMismatch(path + ": checkpoint version " +
                          std::to_string(version) + ", expected " +
                          std::to_string(kVersion));

  const std::string spec_text = r.str();
  const uint64_t seed = r.u64();
  CheckpointData data{Model(parse_model_text(spec_text), seed), std::nullopt};

  const uint32_t n_params = r.u32();
  if (n_params != data.model.params().size())
    throw CorruptPayload(path + ": parameter count mismatch");
  for (uint32_t i = 0; i < n_params; ++i) {
    const std::string id = r.str();
    Parameter& p = data.model.param(id);
    const uint8_t rank = r.u8();
    if (rank != p.value.rank())
      throw CorruptPayload(path + ": rank mismatch for " + id);
    Shape dims;
    for (uint8_t d = 0; d < rank; ++d) dims.push_back(r.u32());
    if (dims != p.value.shape())
      throw CorruptPayload(path + ": shape mismatch for " + id);
    for (int64_t j = 0; j < p.value.size(); ++j) p.value[j] = r.f32();
    for (int64_t j = 0; j < p.mask.size(); ++j) {
      const uint8_t m = r.u8();
      if (m > 1) throw CorruptPayload(path + ": mask byte not 0/1 in " + id);
      p.mask[j] = static_cast<float>(m);
    }
  }

  if (r.u8()) {
    OptimizerState state = r.u8() == 0 ? OptimizerState::sgd(0.1)
                                       : OptimizerState::adam(0.1);
    state.learning_rate = r.f64();
    state.momentum = r.f64();
    state.beta1 = r.f64();
    state.beta2 = r.f64();
    state.epsilon = r.f64();
    state.step_count = static_cast<int64_t>(r.u64());
    read_buffers(r, data.model, state.velocity());
    read_buffers(r, data.model, state.first_moment());
    read_buffers(r, data.model, state.second_moment());
    data.optimizer = std::move(state);
  }
  return data;
}

}  // namespace prunelab

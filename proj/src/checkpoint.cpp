#include <cstring>
#include <fstream>

#include "stagecast/errors.hpp"
#include "stagecast/nn.hpp"

namespace stagecast::nn {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'C', 'K', 'P', '0', '0', '0', '1'};

void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DataError("checkpoint: truncated file");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(uint8_t(buf[pos])) | (uint16_t(uint8_t(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::string& model_kind, const json& config,
                     const ParamStore& store, const CheckpointMeta& meta) {
  json header;
  header["format_version"] = 1;
  header["model"] = model_kind;
  header["config"] = config;
  header["metadata"] = {
      {"seed", meta.seed},
      {"epochs_trained", meta.epochs_trained},
      {"val_accuracy", meta.val_accuracy},
      {"temperature", meta.temperature},
      {"class_order", meta.class_order},
      {"optimizer", {{"name", "adamw"}, {"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}}},
  };
  const std::string hdr = header.dump();

  std::string out;
  out.append(kMagic, 8);
  put_u32(out, uint32_t(hdr.size()));
  out.append(hdr);
  put_u32(out, uint32_t(store.entries().size()));
  for (const auto& e : store.entries()) {
    put_u16(out, uint16_t(e.name.size()));
    out.append(e.name);
    out.push_back(e.trainable ? char(1) : char(0));
    put_u32(out, uint32_t(e.value.rows));
    put_u32(out, uint32_t(e.value.cols));
    for (double v : e.value.d) put_f32(out, float(v));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("checkpoint: cannot open " + path + " for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifactError("missing checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw DataError("checkpoint: bad magic in " + path);

  Reader r(buf);
  r.pos = 8;
  const uint32_t hlen = r.u32();
  json header = json::parse(r.bytes(hlen));
  Checkpoint c;
  c.model_kind = header.at("model").get<std::string>();
  c.config = header.at("config");
  const json& m = header.at("metadata");
  c.meta.seed = m.at("seed").get<uint64_t>();
  c.meta.epochs_trained = m.at("epochs_trained").get<int>();
  c.meta.val_accuracy = m.at("val_accuracy").get<double>();
  c.meta.temperature = m.at("temperature").get<double>();
  c.meta.class_order = m.at("class_order").get<std::vector<std::string>>();

  const uint32_t n = r.u32();
  c.params.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    ParamEntry e;
    const uint16_t nlen = r.u16();
    e.name = r.bytes(nlen);
    e.trainable = r.bytes(1)[0] != 0;
    const uint32_t rows = r.u32();
    const uint32_t cols = r.u32();
    e.value = Mat(int(rows), int(cols));
    for (auto& v : e.value.d) v = double(r.f32());
    c.params.push_back(std::move(e));
  }
  return c;
}

namespace {

void fill_store_from(const Checkpoint& c, ParamStore& store) {
  if (store.entries().size() != c.params.size())
    throw DataError("checkpoint: parameter count does not match config");
  for (std::size_t i = 0; i < c.params.size(); ++i) {
    ParamEntry& dst = store.entries()[i];
    const ParamEntry& src = c.params[i];
    if (dst.name != src.name || !dst.value.same_shape(src.value))
      throw DataError("checkpoint: parameter mismatch at " + src.name);
    dst.value = src.value;
  }
}

}  // namespace

TabularModel tabular_from_checkpoint(const Checkpoint& c) {
  TabularModel m(mlp_config_from_json(c.config), c.meta.seed);
  fill_store_from(c, m.store);
  m.temperature = c.meta.temperature;
  return m;
}

HeavyModel heavy_from_checkpoint(const Checkpoint& c) {
  HeavyModel m(transformer_config_from_json(c.config.at("transformer")),
               mlp_config_from_json(c.config.at("tabular_branch")),
               c.config.at("n_classes").get<int>(), c.meta.seed);
  fill_store_from(c, m.store);
  m.temperature = c.meta.temperature;
  return m;
}

json heavy_config_json(const TransformerConfig& t, const MlpConfig& tab, int n_classes) {
  json j;
  j["transformer"] = to_json(t);
  j["tabular_branch"] = to_json(tab);
  j["n_classes"] = n_classes;
  return j;
}

}  // namespace stagecast::nn

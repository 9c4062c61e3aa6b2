#include "dtae/nn/model.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dtae/random.hpp"

namespace dtae::nn {

namespace {

constexpr char kMagic[8] = {'D', 'T', 'A', 'E', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

template <typename U>
void write_pod(std::ostream& os, const U& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const std::filesystem::path& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw FormatError("truncated checkpoint " + path.string());
  return v;
}

}  // namespace

void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = {{"encoder", s.encoder}, {"has_decoder", s.has_decoder}, {"head", nullptr}};
  if (s.head) j["head"] = *s.head;
}

void from_json(const nlohmann::json& j, ModelSpec& s) {
  j.at("encoder").get_to(s.encoder);
  j.at("has_decoder").get_to(s.has_decoder);
  if (j.at("head").is_null()) {
    s.head.reset();
  } else {
    s.head = j.at("head").get<HeadConfig>();
  }
}

std::string to_string(Stage s) { return s == Stage::kPretrained ? "pretrained" : "finetuned"; }

Stage stage_from_string(const std::string& s) {
  if (s == "pretrained") return Stage::kPretrained;
  if (s == "finetuned") return Stage::kFinetuned;
  throw FormatError("unknown checkpoint stage '" + s + "'");
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes);
}

std::string fingerprint(const EncoderConfig& cfg) { return fnv1a_hex(nlohmann::json(cfg).dump()); }

std::string ModelCheckpoint::encoder_fingerprint() const { return fingerprint(spec.encoder); }

std::map<std::string, Tensorf> ModelCheckpoint::with_prefix(const std::string& prefix) const {
  std::map<std::string, Tensorf> out;
  for (const auto& [name, t] : tensors)
    if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
  return out;
}

void ModelCheckpoint::save(const std::filesystem::path& path) const {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    dir.push_back({{"name", name}, {"shape", t.shape}, {"dtype", "float32"}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  const nlohmann::json header = {{"format_version", kFormatVersion},
                                 {"stage", to_string(stage)},
                                 {"spec", spec},
                                 {"fingerprint", encoder_fingerprint()},
                                 {"adam_steps", adam_steps},
                                 {"metadata", metadata},
                                 {"tensors", dir}};
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(kMagic, sizeof kMagic);
    write_pod(os, kFormatVersion);
    write_pod(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors)
      os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!os) throw IoError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelCheckpoint ModelCheckpoint::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw FormatError(path.string() + " is not a checkpoint");
  const auto version = read_pod<std::uint32_t>(is, path);
  if (version != kFormatVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = read_pod<std::uint64_t>(is, path);
  std::string text(header_len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(header_len)))
    throw FormatError("truncated checkpoint header in " + path.string());

  ModelCheckpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.stage = stage_from_string(header.at("stage").get<std::string>());
    ckpt.spec = header.at("spec").get<ModelSpec>();
    ckpt.adam_steps = header.at("adam_steps").get<std::uint64_t>();
    ckpt.metadata = header.at("metadata");
    if (header.at("fingerprint").get<std::string>() != ckpt.encoder_fingerprint())
      throw FormatError("checkpoint fingerprint does not match its spec");
    for (const auto& entry : header.at("tensors")) {
      Tensorf t(entry.at("shape").get<Shape>());
      if (!is.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(float))))
        throw FormatError("truncated tensor data in " + path.string());
      ckpt.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  return ckpt;
}

Model::Model(const ModelSpec& spec, std::uint64_t seed, AdamConfig adam)
    : spec_(spec), encoder_(build_encoder<float>(spec.encoder)), adam_(adam) {
  encoder_.init(derive_seed(seed, {0xe0}));
  if (spec.has_decoder) {
    decoder_.emplace(build_decoder<float>(DecoderConfig{spec.encoder}));
    decoder_->init(derive_seed(seed, {0xde}));
  }
  if (spec.head) {
    head_.emplace(build_head<float>(*spec.head));
    head_->init(derive_seed(seed, {0x4e}));
  }
}

Sequential<float>& Model::decoder() {
  if (!decoder_) throw ConfigError("model has no decoder");
  return *decoder_;
}

Sequential<float>& Model::head() {
  if (!head_) throw ConfigError("model has no head");
  return *head_;
}

std::vector<Param<float>*> Model::params() {
  auto out = encoder_.params();
  for (auto* net : {decoder_ ? &*decoder_ : nullptr, head_ ? &*head_ : nullptr})
    if (net)
      for (auto* p : net->params()) out.push_back(p);
  return out;
}

std::vector<NamedBuffer<float>> Model::buffers() {
  auto out = encoder_.buffers();
  for (auto* net : {decoder_ ? &*decoder_ : nullptr, head_ ? &*head_ : nullptr})
    if (net)
      for (auto b : net->buffers()) out.push_back(b);
  return out;
}

void Model::zero_grad() {
  for (auto* p : params()) p->grad.fill(0.0f);
}

Tensorf Model::encode_all(const Tensorf& pixels, std::size_t chunk) {
  const std::size_t n = pixels.dim(0);
  const std::size_t per = pixels.row_size();
  Tensorf out({n, spec_.encoder.repr_dim});
  for (std::size_t first = 0; first < n; first += chunk) {
    const std::size_t count = std::min(chunk, n - first);
    Shape s = pixels.shape;
    s[0] = count;
    Tensorf part(s, std::vector<float>(pixels.data.begin() + static_cast<std::ptrdiff_t>(first * per),
                                       pixels.data.begin() + static_cast<std::ptrdiff_t>((first + count) * per)));
    const auto z = encoder_.forward(part, false);
    std::copy(z.data.begin(), z.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(first * spec_.encoder.repr_dim));
  }
  return out;
}

ModelCheckpoint Model::to_checkpoint(Stage stage, nlohmann::json metadata) {
  ModelCheckpoint ckpt;
  ckpt.stage = stage;
  ckpt.spec = spec_;
  ckpt.adam_steps = adam_.steps();
  ckpt.metadata = std::move(metadata);
  for (auto* p : params()) ckpt.tensors.emplace(p->name, p->value);
  for (auto& b : buffers()) ckpt.tensors.emplace(b.name, *b.tensor);
  for (const auto& [name, mo] : adam_.moments()) {
    ckpt.tensors.emplace("adam.m." + name, mo.m);
    ckpt.tensors.emplace("adam.v." + name, mo.v);
  }
  return ckpt;
}

namespace {

void copy_named(const std::map<std::string, Tensorf>& src, const std::string& name, Tensorf& dst,
                bool required = true) {
  auto it = src.find(name);
  if (it == src.end()) {
    if (required) throw FormatError("checkpoint lacks tensor " + name);
    return;
  }
  if (it->second.shape != dst.shape)
    throw ShapeError("checkpoint tensor " + name + " has shape " + shape_str(it->second.shape) +
                     ", expected " + shape_str(dst.shape));
  dst = it->second;
}

}  // namespace

Model Model::from_checkpoint(const ModelCheckpoint& ckpt) {
  Model m(ckpt.spec, 0);
  for (auto* p : m.params()) copy_named(ckpt.tensors, p->name, p->value);
  for (auto& b : m.buffers()) copy_named(ckpt.tensors, b.name, *b.tensor);
  m.adam_.set_steps(ckpt.adam_steps);
  for (auto* p : m.params()) {
    auto mi = ckpt.tensors.find("adam.m." + p->name);
    auto vi = ckpt.tensors.find("adam.v." + p->name);
    if (mi != ckpt.tensors.end() && vi != ckpt.tensors.end())
      m.adam_.moments()[p->name] = {mi->second, vi->second};
  }
  return m;
}

void Model::load_encoder_from(const ModelCheckpoint& ckpt) {
  if (ckpt.encoder_fingerprint() != fingerprint(spec_.encoder))
    throw ConfigError("init checkpoint encoder config does not match");
  for (auto* p : encoder_.params()) copy_named(ckpt.tensors, p->name, p->value);
  for (auto& b : encoder_.buffers()) copy_named(ckpt.tensors, b.name, *b.tensor);
}

}  // namespace dtae::nn

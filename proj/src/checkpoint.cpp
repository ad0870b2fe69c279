#include "mtf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "mtf/error.hpp"
#include "mtf/hash.hpp"

namespace mtf {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'M', 'T', 'F', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  template <class T>
  void pod(T value) {
    const auto* p = reinterpret_cast<const char*>(&value);
    bytes_.append(p, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes_ += s;
  }
  void tensor(const Tensor& t) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) pod<std::uint64_t>(d);
    bytes_.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(double));
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Tensor tensor() {
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) throw CheckpointError("checkpoint corrupt: tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = pod<std::uint64_t>();
      if (d == 0 || d > (std::size_t{1} << 32)) throw CheckpointError("checkpoint corrupt: bad tensor dimension");
      count *= d;
    }
    need(count * sizeof(double));
    std::vector<double> data(count);
    std::memcpy(data.data(), bytes_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
    return Tensor(std::move(shape), std::move(data));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void write_named(Writer& w, const ParamGradients& tensors) {
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.tensor(t);
  }
}

ParamGradients read_named(Reader& r) {
  ParamGradients out;
  const auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    out.emplace(std::move(name), r.tensor());
  }
  return out;
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  Writer w;
  nlohmann::json header;
  header["model"] = to_json(ck.model);
  header["config_hash"] = hex64(config_hash(ck.model));
  header["metadata"] = ck.metadata;
  w.str(header.dump());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.params.size()));
  for (const ModelParams::Entry& e : ck.params.entries()) {
    w.str(e.name);
    w.pod<std::uint8_t>(e.trainable ? 1 : 0);
    w.tensor(e.value);
  }
  if (ck.stats.mean.size() != ck.stats.stddev.size()) throw ContractError("normalization stats are inconsistent");
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ck.stats.mean.size()));
  for (std::size_t s = 0; s < ck.stats.mean.size(); ++s) {
    w.pod<double>(ck.stats.mean[s]);
    w.pod<double>(ck.stats.stddev[s]);
  }
  w.pod<std::uint8_t>(ck.adam ? 1 : 0);
  if (ck.adam) {
    w.pod<double>(ck.adam->config.lr);
    w.pod<double>(ck.adam->config.beta1);
    w.pod<double>(ck.adam->config.beta2);
    w.pod<double>(ck.adam->config.epsilon);
    w.pod<std::uint64_t>(ck.adam->step);
    write_named(w, ck.adam->m);
    write_named(w, ck.adam->v);
  }
  const std::string& payload = w.bytes();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t length = payload.size();
  const std::uint64_t checksum = fnv1a(payload);
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&length), sizeof(length));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  const std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader outer(file);
  char magic[8];
  for (char& c : magic) c = outer.pod<char>();
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError(path + " is not a checkpoint file");
  const auto version = outer.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(fmt::format("checkpoint version {} is not supported (expected {})", version,
                                      kCheckpointVersion));
  }
  const auto length = outer.pod<std::uint64_t>();
  constexpr std::size_t header_bytes = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (file.size() < header_bytes + sizeof(std::uint64_t) ||
      length != file.size() - header_bytes - sizeof(std::uint64_t)) {
    throw CheckpointError(fmt::format("checkpoint truncated: payload of {} bytes declared, file has {} bytes",
                                      length, file.size()));
  }
  const std::string_view payload(file.data() + header_bytes, length);
  std::uint64_t stored;
  std::memcpy(&stored, file.data() + header_bytes + length, sizeof(stored));
  if (stored != fnv1a(payload)) throw CheckpointError("checkpoint corrupt: checksum mismatch");

  Reader r(payload);
  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str());
    ck.model = model_config_from_json(header.at("model"));
    ck.metadata = header.value("metadata", nlohmann::json::object());
    if (header.at("config_hash").get<std::string>() != hex64(config_hash(ck.model))) {
      throw CheckpointError("checkpoint corrupt: config hash does not match the stored config");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint corrupt: ") + e.what());
  } catch (const ContractError& e) {
    throw CheckpointError(std::string("checkpoint corrupt: ") + e.what());
  }
  const auto entries = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < entries; ++i) {
    std::string name = r.str();
    const bool trainable = r.pod<std::uint8_t>() != 0;
    ck.params.add(std::move(name), r.tensor(), trainable);
  }
  const auto services = r.pod<std::uint32_t>();
  for (std::uint32_t s = 0; s < services; ++s) {
    ck.stats.mean.push_back(r.pod<double>());
    ck.stats.stddev.push_back(r.pod<double>());
  }
  if (r.pod<std::uint8_t>() != 0) {
    AdamState adam;
    adam.config.lr = r.pod<double>();
    adam.config.beta1 = r.pod<double>();
    adam.config.beta2 = r.pod<double>();
    adam.config.epsilon = r.pod<double>();
    adam.step = r.pod<std::uint64_t>();
    adam.m = read_named(r);
    adam.v = read_named(r);
    ck.adam = std::move(adam);
  }
  if (!r.done()) throw CheckpointError("checkpoint corrupt: trailing bytes in payload");

  const ModelParams expected = init_params(ck.model);
  if (expected.size() != ck.params.size()) {
    throw CheckpointError(fmt::format("checkpoint holds {} tensors, its model needs {}", ck.params.size(),
                                      expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& want = expected.entries()[i];
    const auto& got = ck.params.entries()[i];
    if (want.name != got.name || want.value.shape() != got.value.shape() || want.trainable != got.trainable) {
      throw CheckpointError(fmt::format("checkpoint tensor {} {} does not fit the model's {} {}", got.name,
                                        to_string(got.value.shape()), want.name, to_string(want.value.shape())));
    }
  }
  return ck;
}

}  // namespace mtf

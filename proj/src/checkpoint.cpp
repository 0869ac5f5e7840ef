#include "schoolcount/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "schoolcount/error.hpp"

namespace schoolcount {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'C', 'K', 'T'};
constexpr std::uint8_t kDtypeF32 = 0;

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(V));
  }
  void bytes(const void* data, std::size_t n) { buf_.append(static_cast<const char*>(data), n); }
  void str(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}
  template <typename V>
  V get() {
    V v;
    std::memcpy(&v, take(sizeof(V)), sizeof(V));
    return v;
  }
  const char* take(std::size_t n) {
    if (n > buf_.size() - pos_) throw CheckpointError("checkpoint", "file is truncated at byte " + std::to_string(pos_));
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string str() {
    const auto n = get<std::uint32_t>();
    return std::string(take(n), n);
  }
  bool done() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const void* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, static_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

void write_params(Writer& w, const ModelParams& params, const std::string& prefix) {
  for (const auto& t : params.tensors) {
    Writer rec;
    rec.str(prefix + t.name);
    rec.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) rec.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    rec.put<std::uint8_t>(kDtypeF32);
    rec.put<std::uint8_t>(t.trainable ? 1 : 0);
    rec.put<std::uint64_t>(t.values.size());
    rec.bytes(t.values.data(), t.values.size() * sizeof(float));
    w.bytes(rec.data().data(), rec.data().size());
    w.put<std::uint32_t>(crc(rec.data().data(), rec.data().size()));
  }
}

struct Record {
  std::string name;
  NamedTensor<float> tensor;
};

Record read_record(Reader& r) {
  Record out;
  // re-serialize while reading so the checksum covers exactly the record bytes
  Writer echo;
  out.name = r.str();
  echo.str(out.name);
  const auto ndim = r.get<std::uint32_t>();
  if (ndim > 8) throw CheckpointError("checkpoint", "record '" + out.name + "' has an implausible rank");
  echo.put(ndim);
  std::uint64_t expect = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto d = r.get<std::uint32_t>();
    echo.put(d);
    out.tensor.shape.push_back(static_cast<int>(d));
    expect *= d;
  }
  const auto dtype = r.get<std::uint8_t>();
  const auto trainable = r.get<std::uint8_t>();
  const auto n = r.get<std::uint64_t>();
  echo.put(dtype);
  echo.put(trainable);
  echo.put(n);
  if (dtype != kDtypeF32) throw CheckpointError("checkpoint", "record '" + out.name + "' has unsupported dtype");
  if (n != expect) throw CheckpointError("checkpoint", "record '" + out.name + "' size does not match its shape");
  const char* data = r.take(n * sizeof(float));
  echo.bytes(data, n * sizeof(float));
  const auto stored = r.get<std::uint32_t>();
  if (stored != crc(echo.data().data(), echo.data().size())) {
    throw CheckpointError("checkpoint", "checksum mismatch in record '" + out.name + "'");
  }
  out.tensor.values.resize(n);
  std::memcpy(out.tensor.values.data(), data, n * sizeof(float));
  out.tensor.trainable = trainable != 0;
  return out;
}

// Fill `target` (a layout) from records named prefix + tensor name.
void take_params(std::vector<Record>& records, std::size_t& pos, ModelParams& target, const std::string& prefix) {
  for (auto& t : target.tensors) {
    if (pos >= records.size()) throw CheckpointError("checkpoint", "missing tensor '" + prefix + t.name + "'");
    Record& rec = records[pos++];
    if (rec.name != prefix + t.name) {
      throw CheckpointError("checkpoint", "expected tensor '" + prefix + t.name + "', found '" + rec.name + "'");
    }
    if (rec.tensor.shape != t.shape) throw CheckpointError("checkpoint", "shape mismatch for '" + rec.name + "'");
    t.values = std::move(rec.tensor.values);
    t.trainable = rec.tensor.trainable;
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  Writer head;
  head.bytes(kMagic, 4);
  head.put<std::uint32_t>(kCheckpointVersion);
  head.put<std::uint64_t>(ck.model.hash());
  head.str(nlohmann::json(ck.model).dump());
  head.put<std::uint32_t>(ck.epoch);
  const bool has_opt = ck.optimizer.has_value();
  head.put<std::uint8_t>(has_opt ? 1 : 0);
  head.put<std::uint8_t>(ck.best ? 1 : 0);
  head.put<std::uint64_t>(has_opt ? ck.optimizer->step : 0);
  head.put<double>(has_opt ? ck.optimizer->lr : 0.0);
  head.put<double>(has_opt ? ck.optimizer->hyper.beta1 : 0.0);
  head.put<double>(has_opt ? ck.optimizer->hyper.beta2 : 0.0);
  head.put<double>(has_opt ? ck.optimizer->hyper.eps : 0.0);
  head.str(ck.state.dump());

  Writer w;
  w.bytes(head.data().data(), head.data().size());
  w.put<std::uint32_t>(crc(head.data().data(), head.data().size()));
  write_params(w, ck.params, "param/");
  if (has_opt) {
    write_params(w, ck.optimizer->m, "adam.m/");
    write_params(w, ck.optimizer->v, "adam.v/");
  }
  if (ck.best) write_params(w, *ck.best, "best/");

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint", "cannot write " + tmp.string());
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw IoError("checkpoint", "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint", "cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf);

  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw CheckpointError("checkpoint", path.string() + " is not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint", "incompatible format version " + std::to_string(version) + " (this build reads " +
                                            std::to_string(kCheckpointVersion) + ")");
  }
  const auto hash = r.get<std::uint64_t>();
  if (expected && expected->hash() != hash) {
    throw CheckpointError("checkpoint", "model configuration hash mismatch; checkpoint was written for a different model");
  }
  Checkpoint ck;
  try {
    ck.model = nlohmann::json::parse(r.str()).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint", std::string("corrupt model configuration: ") + e.what());
  }
  if (ck.model.hash() != hash) throw CheckpointError("checkpoint", "stored configuration does not match its hash");
  ck.epoch = r.get<std::uint32_t>();
  const bool has_opt = r.get<std::uint8_t>() != 0;
  const bool has_best = r.get<std::uint8_t>() != 0;
  AdamState opt;
  opt.step = r.get<std::uint64_t>();
  opt.lr = r.get<double>();
  opt.hyper.beta1 = r.get<double>();
  opt.hyper.beta2 = r.get<double>();
  opt.hyper.eps = r.get<double>();
  const std::string state = r.str();
  const std::size_t head_len = r.pos();
  const auto head_crc = r.get<std::uint32_t>();
  if (head_crc != crc(buf.data(), head_len)) {
    throw CheckpointError("checkpoint", "checksum mismatch in header");
  }
  try {
    ck.state = nlohmann::json::parse(state);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint", std::string("corrupt trainer state: ") + e.what());
  }

  std::vector<Record> records;
  while (!r.done()) records.push_back(read_record(r));
  std::size_t pos = 0;
  ck.params = make_param_layout(ck.model);
  take_params(records, pos, ck.params, "param/");
  if (has_opt) {
    opt.m = ck.params.zeros_like();
    opt.v = ck.params.zeros_like();
    take_params(records, pos, opt.m, "adam.m/");
    take_params(records, pos, opt.v, "adam.v/");
    ck.optimizer = std::move(opt);
  }
  if (has_best) {
    ck.best = make_param_layout(ck.model);
    take_params(records, pos, *ck.best, "best/");
  }
  if (pos != records.size()) throw CheckpointError("checkpoint", "unexpected extra record '" + records[pos].name + "'");
  return ck;
}

}  // namespace schoolcount

#include "emasam/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json_io.hpp"

namespace emasam {

namespace {

static_assert(std::endian::native == std::endian::little, "byte order assumes a little-endian host");

constexpr char kModelMagic[8] = {'E', 'M', 'A', 'S', 'A', 'M', 'M', 'D'};
constexpr char kCheckpointMagic[8] = {'E', 'M', 'A', 'S', 'A', 'M', 'C', 'K'};
constexpr char kTrainStateMagic[8] = {'E', 'M', 'A', 'S', 'A', 'M', 'T', 'S'};

class Writer {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) { raw(&v, 4); }
  void u64(std::uint64_t v) { raw(&v, 8); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(double));
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, const char* what) : bytes_(b), what_(what) {}

  void raw(void* p, std::size_t n) {
    if (n > bytes_.size() - pos_) throw FormatError(std::string(what_) + ": truncated at byte " + std::to_string(pos_));
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
  }
  bool flag() {
    const auto v = u8();
    if (v > 1) throw FormatError(std::string(what_) + ": bad flag byte");
    return v == 1;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, 8);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v;
    raw(&v, 8);
    return v;
  }
  double f64() {
    double v;
    raw(&v, 8);
    return v;
  }
  std::size_t length(std::size_t unit) {
    const std::uint64_t n = u64();
    if (n > (bytes_.size() - pos_) / unit) throw FormatError(std::string(what_) + ": length field exceeds file size");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    std::string s(length(1), '\0');
    raw(s.data(), s.size());
    return s;
  }
  std::vector<double> doubles() {
    std::vector<double> v(length(sizeof(double)));
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  void magic(const char (&m)[8]) {
    char got[8];
    raw(got, 8);
    if (std::memcmp(got, m, 8) != 0) throw FormatError(std::string(what_) + ": bad magic");
  }
  void version(std::uint32_t expected) {
    const auto v = u32();
    if (v != expected)
      throw FormatError(std::string(what_) + ": unsupported version " + std::to_string(v) + " (expected " +
                        std::to_string(expected) + ")");
  }
  void finish() const {
    if (pos_ != bytes_.size()) throw FormatError(std::string(what_) + ": trailing bytes");
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  const char* what_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return b;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& b) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_mat(Writer& w, const Mat& m) {
  w.u64(m.rows());
  w.u64(m.cols());
  w.doubles(m.span());
}

Mat read_mat(Reader& r) {
  const auto rows = r.u64(), cols = r.u64();
  auto data = r.doubles();
  if (data.size() != rows * cols) throw FormatError("matrix payload does not match its shape");
  return Mat(rows, cols, std::move(data));
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const ToyModel& m) {
  Writer w;
  w.raw(kModelMagic, 8);
  w.u32(kModelFormatVersion);
  w.str(detail::to_json(m.config).dump());
  std::size_t count = 1;
  for_each_tensor(m.params, [&](const std::string&, auto) { ++count; });
  w.u64(count);
  for_each_tensor(m.params, [&](const std::string& name, std::span<const double> t) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.doubles(t);
  });
  const std::string occ = "occlusion_embedding";
  w.u32(static_cast<std::uint32_t>(occ.size()));
  w.raw(occ.data(), occ.size());
  w.doubles(m.occlusion_embedding.span());
  return std::move(w.out);
}

ToyModel deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "model file");
  r.magic(kModelMagic);
  r.version(kModelFormatVersion);
  ToyModel m;
  {
    const std::string text = r.str();
    detail::json j;
    try {
      j = detail::json::parse(text);
    } catch (const detail::json::exception& e) {
      throw FormatError(std::string("model file: config block is not JSON: ") + e.what());
    }
    try {
      m.config = detail::toy_config_from_json(j, "model");
      m.config.validate();
    } catch (const ConfigError& e) {
      throw FormatError(std::string("model file: ") + e.what());
    }
  }
  m.params = ToyParams::zeros(m.config);
  std::size_t expected = 1;
  for_each_tensor(m.params, [&](const std::string&, auto) { ++expected; });
  if (r.u64() != expected) throw FormatError("model file: tensor count does not match the config");

  auto read_named = [&](const std::string& name, std::span<double> dst) {
    const std::uint32_t n = r.u32();
    if (n > 256) throw FormatError("model file: tensor name too long");
    std::string got(n, '\0');
    r.raw(got.data(), n);
    if (got != name) throw FormatError("model file: expected tensor " + name + ", found " + got);
    const auto v = r.doubles();
    if (v.size() != dst.size())
      throw FormatError("model file: tensor " + name + " has " + std::to_string(v.size()) + " values, expected " +
                        std::to_string(dst.size()));
    std::copy(v.begin(), v.end(), dst.begin());
  };
  for_each_tensor(m.params, read_named);
  m.occlusion_embedding = Vec(m.config.dim());
  read_named("occlusion_embedding", m.occlusion_embedding.span());
  r.finish();
  return m;
}

void save_model(const ToyModel& m, const std::filesystem::path& path) { write_file(path, serialize_model(m)); }

ToyModel load_model(const std::filesystem::path& path) {
  const auto b = read_file(path);
  try {
    return deserialize_model(b);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::uint64_t model_fingerprint(const ToyModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : serialize_model(m)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kCheckpointMagic, 8);
  w.u32(kCheckpointFormatVersion);
  w.u64(c.model_fingerprint);
  w.str(c.model_path);
  w.str(to_string(c.mode));
  const StreamState& s = c.state;
  w.i64(s.frames_seen);
  w.u8(s.track_centre.has_value());
  if (s.track_centre) {
    w.i64(s.track_centre->row);
    w.i64(s.track_centre->col);
  }
  const MemoryBank& b = s.bank;
  w.u64(b.dim());
  w.u64(b.config().capacity);
  w.f64(b.config().gain);
  w.f64(b.config().tau);
  w.doubles(b.occlusion_embedding().span());
  w.u64(b.spatial().size());
  for (const auto& sp : b.spatial()) {
    w.i64(sp.grid_rows);
    w.i64(sp.grid_cols);
    w.u8(sp.occluded);
    write_mat(w, sp.tokens);
    w.u64(sp.positions.size());
    for (const auto& p : sp.positions) {
      w.i64(p.row);
      w.i64(p.col);
    }
  }
  for (const auto& p : b.pointers()) {
    w.doubles(p.token.span());
    w.i64(p.frame_index);
    w.u8(p.occluded);
  }
  const EmaPrototype& proto = b.prototype();
  w.doubles(proto.vector.span());
  w.u8(proto.initialized);
  w.f64(proto.last_alpha);
  w.i64(proto.update_count);
  w.i64(b.evictions());
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "checkpoint");
  r.magic(kCheckpointMagic);
  r.version(kCheckpointFormatVersion);
  Checkpoint c;
  c.model_fingerprint = r.u64();
  c.model_path = r.str();
  try {
    c.mode = prototype_mode_from_string(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  StreamState& s = c.state;
  s.frames_seen = r.i64();
  if (r.flag()) {
    const auto row = r.i64(), col = r.i64();
    s.track_centre = GridPos{static_cast<int>(row), static_cast<int>(col)};
  }
  const auto dim = r.u64();
  BankConfig bc;
  bc.capacity = r.u64();
  bc.gain = r.f64();
  bc.tau = r.f64();
  Vec occ(r.doubles());
  std::deque<SpatialMemory> spatial;
  std::deque<PointerEntry> pointers;
  EmaPrototype proto;
  std::int64_t evictions = 0;
  try {
    s.bank = MemoryBank(dim, bc, std::move(occ));
    const std::size_t n = r.u64();
    if (n > bc.capacity) throw FormatError("checkpoint: more entries than the bank capacity");
    for (std::size_t i = 0; i < n; ++i) {
      SpatialMemory sp;
      sp.grid_rows = static_cast<int>(r.i64());
      sp.grid_cols = static_cast<int>(r.i64());
      sp.occluded = r.flag();
      sp.tokens = read_mat(r);
      const std::size_t np = r.length(16);
      for (std::size_t k = 0; k < np; ++k) {
        const auto row = r.i64(), col = r.i64();
        sp.positions.push_back({static_cast<int>(row), static_cast<int>(col)});
      }
      sp.validate();
      spatial.push_back(std::move(sp));
    }
    for (std::size_t i = 0; i < n; ++i) {
      PointerEntry p;
      p.token = Vec(r.doubles());
      p.frame_index = r.i64();
      p.occluded = r.flag();
      pointers.push_back(std::move(p));
    }
    proto.vector = Vec(r.doubles());
    proto.initialized = r.flag();
    proto.last_alpha = r.f64();
    proto.update_count = r.i64();
    evictions = r.i64();
    s.bank.restore(std::move(spatial), std::move(pointers), std::move(proto), evictions);
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  r.finish();
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(c));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto b = read_file(path);
  try {
    return deserialize_checkpoint(b);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void check_checkpoint_model(const Checkpoint& c, const ToyModel& m) {
  if (c.model_fingerprint != model_fingerprint(m))
    throw ConfigError("checkpoint was written against a different model (fingerprint mismatch)");
  if (c.state.bank.dim() != m.config.dim()) throw ConfigError("checkpoint bank dimension does not match the model");
}

std::vector<std::uint8_t> serialize_train_state(const TrainState& s, std::uint64_t fingerprint) {
  Writer w;
  w.raw(kTrainStateMagic, 8);
  w.u32(kTrainStateFormatVersion);
  w.u64(fingerprint);
  w.u64(s.epochs_done);
  w.doubles(s.epoch_loss);
  w.i64(s.adam.t);
  for_each_tensor(s.adam.m, [&](const std::string&, std::span<const double> t) { w.doubles(t); });
  for_each_tensor(s.adam.v, [&](const std::string&, std::span<const double> t) { w.doubles(t); });
  return std::move(w.out);
}

TrainState deserialize_train_state(std::span<const std::uint8_t> bytes, const ToyModel& m) {
  Reader r(bytes, "train state");
  r.magic(kTrainStateMagic);
  r.version(kTrainStateFormatVersion);
  if (r.u64() != model_fingerprint(m))
    throw ConfigError("train state was written alongside a different model (fingerprint mismatch)");
  TrainState s;
  s.epochs_done = r.u64();
  s.epoch_loss = r.doubles();
  s.adam.t = r.i64();
  s.adam.m = ToyParams::zeros(m.config);
  s.adam.v = ToyParams::zeros(m.config);
  auto fill = [&](const std::string& name, std::span<double> dst) {
    const auto v = r.doubles();
    if (v.size() != dst.size()) throw FormatError("train state: moment tensor " + name + " has the wrong size");
    std::copy(v.begin(), v.end(), dst.begin());
  };
  for_each_tensor(s.adam.m, fill);
  for_each_tensor(s.adam.v, fill);
  r.finish();
  return s;
}

void save_train_state(const TrainState& s, const ToyModel& m, const std::filesystem::path& path) {
  write_file(path, serialize_train_state(s, model_fingerprint(m)));
}

TrainState load_train_state(const std::filesystem::path& path, const ToyModel& m) {
  const auto b = read_file(path);
  try {
    return deserialize_train_state(b, m);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace emasam

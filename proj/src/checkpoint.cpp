#include "seqrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <unordered_set>

namespace seqrl {

namespace {

constexpr char kMagic[8] = {'S', 'E', 'Q', 'R', 'L', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;
constexpr uint32_t kMaxName = 4096;
constexpr uint32_t kMaxCount = 1u << 20;
constexpr uint8_t kMaxDims = 8;

struct Writer {
  std::ofstream out;
  std::string path;

  explicit Writer(const std::string& p) : out(p, std::ios::binary), path(p) {
    if (!out) throw DataError("cannot write " + p);
  }
  void bytes(const void* src, std::size_t n) {
    out.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  }
  template <class U>
  void put(U v) {
    bytes(&v, sizeof v);
  }
  void str(const std::string& s) {
    put(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
};

struct Reader {
  std::ifstream in;
  std::streamoff size = 0;

  explicit Reader(const std::string& p) : in(p, std::ios::binary) {
    if (!in) throw DataError("cannot open " + p);
    in.seekg(0, std::ios::end);
    size = in.tellg();
    in.seekg(0, std::ios::beg);
  }
  std::streamoff remaining() { return size - in.tellg(); }
  void bytes(void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
      throw DataError("checkpoint: truncated file");
  }
  template <class U>
  U get() {
    U v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    uint32_t n = get<uint32_t>();
    if (n > kMaxName) throw DataError("checkpoint: oversized string");
    std::string s(n, '\0');
    if (n) bytes(s.data(), n);
    return s;
  }
};

void write_record(Writer& w, const TensorRecord& r) {
  if (r.payload.size() != static_cast<std::size_t>(r.elems()) * scalar_width(r.dtype))
    throw DataError("checkpoint: payload size does not match shape for " + r.name);
  w.str(r.name);
  w.put(static_cast<uint8_t>(r.dtype));
  w.put(static_cast<uint8_t>(r.shape.size()));
  for (int64_t d : r.shape) w.put(d);
  w.bytes(r.payload.data(), r.payload.size());
}

TensorRecord read_record(Reader& rd) {
  TensorRecord r;
  r.name = rd.str();
  if (r.name.empty()) throw DataError("checkpoint: unnamed tensor");
  uint8_t dt = rd.get<uint8_t>();
  if (dt > 1) throw DataError("checkpoint: unknown scalar type for " + r.name);
  r.dtype = static_cast<ScalarType>(dt);
  uint8_t nd = rd.get<uint8_t>();
  if (nd > kMaxDims) throw DataError("checkpoint: too many dimensions for " + r.name);
  int64_t n = 1;
  for (uint8_t i = 0; i < nd; ++i) {
    int64_t d = rd.get<int64_t>();
    if (d < 1 || d > (int64_t(1) << 40) / n)
      throw DataError("checkpoint: bad shape for " + r.name);
    r.shape.push_back(d);
    n *= d;
  }
  std::size_t need = static_cast<std::size_t>(n) * scalar_width(r.dtype);
  if (static_cast<std::streamoff>(need) > rd.remaining())
    throw DataError("checkpoint: truncated file");
  r.payload.resize(need);
  rd.bytes(r.payload.data(), need);
  return r;
}

void check_distinct(const std::vector<TensorRecord>& rs, const char* what) {
  std::unordered_set<std::string> seen;
  for (const TensorRecord& r : rs)
    if (!seen.insert(r.name).second)
      throw DataError(std::string("checkpoint: duplicate ") + what + " " + r.name);
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  Writer w(path);
  w.bytes(kMagic, sizeof kMagic);
  w.put(kVersion);

  w.put(static_cast<uint8_t>(ck.hyper.kind));
  w.put(static_cast<uint8_t>(ck.hyper.dtype));
  w.put(ck.hyper.width);
  w.put(ck.hyper.layers);
  w.put(ck.hyper.input_dim);
  w.put(ck.hyper.vocab);
  w.put(ck.hyper.flags);
  w.put(ck.hyper.dropout);

  w.put(static_cast<uint32_t>(ck.tensors.size()));
  for (const TensorRecord& r : ck.tensors) write_record(w, r);

  w.put(static_cast<uint32_t>(ck.optim.size()));
  for (const OptimStateBlock& b : ck.optim) {
    w.str(b.label);
    w.put(b.kind);
    w.put(b.lr);
    w.put(b.momentum);
    w.put(b.weight_decay);
    w.put(b.clip_norm);
    w.put(b.steps);
    w.put(static_cast<uint32_t>(b.slots.size()));
    for (const TensorRecord& r : b.slots) write_record(w, r);
  }

  w.out.flush();
  if (!w.out) throw DataError("checkpoint: write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  Reader rd(path);

  char magic[sizeof kMagic];
  rd.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  uint32_t version = rd.get<uint32_t>();
  if (version != kVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));

  Checkpoint ck;
  uint8_t kind = rd.get<uint8_t>();
  if (kind > 3) throw DataError("checkpoint: unknown model kind");
  ck.hyper.kind = static_cast<ModelKind>(kind);
  uint8_t dt = rd.get<uint8_t>();
  if (dt > 1) throw DataError("checkpoint: unknown scalar type");
  ck.hyper.dtype = static_cast<ScalarType>(dt);
  ck.hyper.width = rd.get<int64_t>();
  ck.hyper.layers = rd.get<int64_t>();
  ck.hyper.input_dim = rd.get<int64_t>();
  ck.hyper.vocab = rd.get<int64_t>();
  ck.hyper.flags = rd.get<uint32_t>();
  ck.hyper.dropout = rd.get<double>();
  if (ck.hyper.width < 0 || ck.hyper.layers < 0 || ck.hyper.input_dim < 0 ||
      ck.hyper.vocab < 0)
    throw DataError("checkpoint: negative hyperparameter");

  uint32_t n_tensors = rd.get<uint32_t>();
  if (n_tensors > kMaxCount) throw DataError("checkpoint: tensor count out of range");
  ck.tensors.reserve(n_tensors);
  for (uint32_t i = 0; i < n_tensors; ++i) ck.tensors.push_back(read_record(rd));
  check_distinct(ck.tensors, "tensor");

  uint32_t n_blocks = rd.get<uint32_t>();
  if (n_blocks > kMaxCount) throw DataError("checkpoint: block count out of range");
  ck.optim.reserve(n_blocks);
  for (uint32_t i = 0; i < n_blocks; ++i) {
    OptimStateBlock b;
    b.label = rd.str();
    b.kind = rd.get<uint8_t>();
    if (b.kind > 2) throw DataError("checkpoint: unknown optimizer kind");
    b.lr = rd.get<double>();
    b.momentum = rd.get<double>();
    b.weight_decay = rd.get<double>();
    b.clip_norm = rd.get<double>();
    b.steps = rd.get<int64_t>();
    uint32_t n_slots = rd.get<uint32_t>();
    if (n_slots > kMaxCount) throw DataError("checkpoint: slot count out of range");
    b.slots.reserve(n_slots);
    for (uint32_t s = 0; s < n_slots; ++s) b.slots.push_back(read_record(rd));
    check_distinct(b.slots, "optimizer slot");
    ck.optim.push_back(std::move(b));
  }

  if (rd.remaining() != 0) throw DataError("checkpoint: trailing bytes in " + path);
  return ck;
}

}  // namespace seqrl

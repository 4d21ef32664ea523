#include "retedit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "retedit/config.hpp"
#include "retedit/editor.hpp"
#include "retedit/embednet.hpp"

namespace retedit {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'E', 'T', 'E', 'D', 'C', 'K', 'P'};
constexpr std::uint8_t kFloat64 = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf_ += s;
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}
  template <typename T>
  T get() {
    T v{};
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) throw CheckpointError(origin_ + ": truncated checkpoint");
  }
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.str(ckpt.kind);
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ckpt.meta) meta[k] = v;
  w.str(meta.dump());
  w.str(ckpt.vocab.to_json());
  w.str(ckpt.config);
  w.put<std::uint64_t>(ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    if (static_cast<std::int64_t>(t.data.size()) != t.rows * t.cols)
      throw CheckpointError("tensor " + t.name + " payload does not match its shape");
    w.str(t.name);
    w.put<std::uint8_t>(kFloat64);
    w.put<std::uint32_t>(2);
    w.put<std::int64_t>(t.rows);
    w.put<std::int64_t>(t.cols);
    w.raw(t.data.data(), t.data.size() * sizeof(double));
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError(origin + ": not a retedit checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError(origin + ": unsupported checkpoint version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  c.kind = r.str();
  const auto meta = nlohmann::json::parse(r.str());
  for (const auto& [k, v] : meta.items()) c.meta[k] = v.get<std::string>();
  c.vocab = Vocabulary::from_json(r.str());
  c.config = r.str();
  const auto n = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n; ++i) {
    Tensor t;
    t.name = r.str();
    if (r.get<std::uint8_t>() != kFloat64) throw CheckpointError(origin + ": tensor " + t.name + " is not float64");
    if (r.get<std::uint32_t>() != 2) throw CheckpointError(origin + ": tensor " + t.name + " is not a matrix");
    t.rows = r.get<std::int64_t>();
    t.cols = r.get<std::int64_t>();
    if (t.rows < 0 || t.cols < 0) throw CheckpointError(origin + ": tensor " + t.name + " has a negative shape");
    t.data.resize(static_cast<std::size_t>(t.rows * t.cols));
    r.raw(t.data.data(), t.data.size() * sizeof(double));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(origin + ": trailing bytes after the last tensor");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), path.string());
}

std::vector<Tensor> tensors_from(const ad::ParamSet& params) {
  std::vector<Tensor> out;
  for (const auto* p : params.all()) {
    Tensor t{p->name, p->value.rows(), p->value.cols(), {}};
    t.data.resize(static_cast<std::size_t>(p->value.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data.data(), t.rows,
                                                                                        t.cols) = p->value;
    out.push_back(std::move(t));
  }
  return out;
}

void load_tensors(ad::ParamSet& params, const std::vector<Tensor>& tensors) {
  if (tensors.size() != params.size())
    throw CheckpointError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  for (const auto& t : tensors) {
    if (!params.contains(t.name)) throw CheckpointError("unexpected tensor " + t.name);
    auto& p = params.get(t.name);
    if (p.value.rows() != t.rows || p.value.cols() != t.cols)
      throw CheckpointError("tensor " + t.name + " has shape " + std::to_string(t.rows) + "x" +
                            std::to_string(t.cols) + ", model expects " + std::to_string(p.value.rows()) + "x" +
                            std::to_string(p.value.cols()));
    p.value = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        t.data.data(), t.rows, t.cols);
  }
}

Checkpoint retriever_checkpoint(const RetrieverNet& net, const Vocabulary& vocab, const std::string& kind) {
  if (net.vocab_size() != vocab.size()) throw CheckpointError("retriever and vocabulary sizes differ");
  Checkpoint c;
  c.kind = kind;
  c.meta["fields"] = nlohmann::json(net.field_names()).dump();
  c.vocab = vocab;
  c.config = retriever_config_text(net.config());
  c.tensors = tensors_from(net.params());
  return c;
}

RetrieverNet retriever_from_checkpoint(const Checkpoint& ckpt) {
  auto it = ckpt.meta.find("fields");
  if (it == ckpt.meta.end()) throw CheckpointError("checkpoint of kind " + ckpt.kind + " is not a retriever");
  const auto fields = nlohmann::json::parse(it->second).get<std::vector<std::string>>();
  RetrieverNet net(fields, ckpt.vocab.size(), retriever_config_from_text(ckpt.config));
  load_tensors(net.params(), ckpt.tensors);
  return net;
}

Checkpoint editor_checkpoint(const Editor& editor, const std::string& kind) {
  Checkpoint c;
  c.kind = kind;
  c.vocab = editor.vocab();
  c.config = editor_config_text(editor.config());
  c.tensors = tensors_from(editor.params());
  return c;
}

Editor editor_from_checkpoint(const Checkpoint& ckpt) {
  Editor editor(ckpt.vocab, editor_config_from_text(ckpt.config));
  load_tensors(editor.params(), ckpt.tensors);
  return editor;
}

}  // namespace retedit

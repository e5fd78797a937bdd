#include "masc/checkpoint.hpp"

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "masc/errors.hpp"
#include "masc/pose_io.hpp"

namespace masc {

namespace {

using Kind = FormatError::Kind;

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Shape& shape,
                std::span<const double> values) {
  le::put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  le::put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) le::put_u64(out, d);
  for (double v : values) le::put_f64(out, v);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(Kind::kTruncated, bytes_.size(), std::string("checkpoint truncated in ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    const auto v = le::get_u32(bytes_, pos_);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    const auto v = le::get_u64(bytes_, pos_);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    const auto v = le::get_f64(bytes_, pos_);
    pos_ += 8;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const PoseLifter& model) {
  std::vector<std::uint8_t> out{'M', 'C', 'K', 'P'};
  le::put_u32(out, kCheckpointVersion);
  const nlohmann::json header = {{"model_config", config_to_json(model.config())},
                                 {"topology", topology_to_json(model.topology())}};
  const std::string text = header.dump();
  le::put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const auto& store = model.parameters();
  le::put_u64(out, store.params().size() + store.buffers().size());
  for (const auto& [name, t] : store.params()) put_tensor(out, name, t.shape(), t.values());
  for (const auto& [name, values] : store.buffers()) put_tensor(out, name, {values.size()}, values);
  return out;
}

std::unique_ptr<PoseLifter> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.str(4, "magic");
  if (magic != "MCKP") throw FormatError(Kind::kMalformedHeader, 0, "bad checkpoint magic");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError(Kind::kVersionMismatch, 4, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = r.u64("header length");
  const std::size_t header_at = r.pos();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.str(header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(Kind::kMalformedHeader, header_at, std::string("checkpoint header is not JSON: ") + e.what());
  }
  if (!header.contains("model_config") || !header.contains("topology")) {
    throw FormatError(Kind::kMalformedHeader, header_at, "checkpoint header lacks model_config or topology");
  }
  auto model = std::make_unique<PoseLifter>(config_from_json(header["model_config"]),
                                            topology_from_json(header["topology"]), 0);
  auto& store = model->parameters();
  const auto count = r.u64("tensor count");
  if (count != store.params().size() + store.buffers().size()) {
    throw FormatError(Kind::kShapeMismatch, r.pos(),
                      "checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(store.params().size() + store.buffers().size()));
  }
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    const std::string name = r.str(r.u32("name length"), "name");
    if (!seen.insert(name).second) throw FormatError(Kind::kMalformedHeader, at, "duplicate tensor '" + name + "'");
    const auto rank = r.u32("rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u64("dims"));
    std::span<double> dst;
    Shape expected;
    if (auto it = store.buffers().find(name); it != store.buffers().end()) {
      dst = it->second;
      expected = {it->second.size()};
    } else {
      bool found = false;
      for (auto& [pname, t] : store.params()) {
        if (pname == name) {
          dst = t.mutable_values();
          expected = t.shape();
          found = true;
          break;
        }
      }
      if (!found) throw FormatError(Kind::kShapeMismatch, at, "unexpected tensor '" + name + "'");
    }
    if (shape != expected) {
      throw FormatError(Kind::kShapeMismatch, at,
                        "tensor '" + name + "' has shape " + shape_str(shape) + ", expected " + shape_str(expected));
    }
    for (double& v : dst) v = r.f64("tensor data");
  }
  if (!r.done()) throw FormatError(Kind::kShapeMismatch, r.pos(), "trailing bytes after last tensor");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const PoseLifter& model) {
  write_file_bytes(path, encode_checkpoint(model));
}

std::unique_ptr<PoseLifter> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_checkpoint(bytes);
}

}  // namespace masc

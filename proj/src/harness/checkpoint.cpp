#include "nfa/harness/checkpoint.hpp"

#include <zlib.h>

#include "nfa/error.hpp"

namespace nfa::harness {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'N', 'F', 'C', 'K'};

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

json mlp_descriptor(const Mlp<float>& net) {
  json layers = json::array();
  for (const auto& l : net.layers())
    layers.push_back({{"in", l.in_width()},
                      {"out", l.out_width()},
                      {"activation", to_string(l.activation())},
                      {"slope", l.slope()}});
  return layers;
}

void append(std::vector<float>& payload, const Mlp<float>& net) {
  std::vector<std::span<const float>> views;
  net.collect(views);
  for (const auto& v : views) payload.insert(payload.end(), v.begin(), v.end());
}

// Consumes tensors from the payload in descriptor order.
class PayloadCursor {
 public:
  explicit PayloadCursor(const std::vector<float>& p) : p_(p) {}

  void fill(std::span<float> dst, const std::string& what) {
    if (pos_ + dst.size() > p_.size())
      throw ParseError("checkpoint payload too short while reading " + what + " (need " +
                       std::to_string(pos_ + dst.size()) + " floats, have " + std::to_string(p_.size()) + ")");
    std::copy(p_.begin() + static_cast<std::ptrdiff_t>(pos_), p_.begin() + static_cast<std::ptrdiff_t>(pos_ + dst.size()),
              dst.begin());
    pos_ += dst.size();
  }
  bool done() const { return pos_ == p_.size(); }
  std::size_t position() const { return pos_; }

 private:
  const std::vector<float>& p_;
  std::size_t pos_ = 0;
};

template <class V>
V field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ParseError("checkpoint descriptor: " + where + " lacks field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ParseError("checkpoint descriptor: " + where + " has a malformed field '" + key + "'");
  }
}

Mlp<float> mlp_from(const json& layers, PayloadCursor& cur, const std::string& where) {
  if (!layers.is_array() || layers.empty()) throw ParseError("checkpoint descriptor: " + where + " has no layers");
  std::vector<DenseLayer<float>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string at = where + ".layers[" + std::to_string(i) + "]";
    const auto& l = layers[i];
    DenseLayer<float> layer(field<std::size_t>(l, "in", at), field<std::size_t>(l, "out", at),
                            activation_from_string(field<std::string>(l, "activation", at)),
                            field<float>(l, "slope", at));
    cur.fill(layer.weights().span(), at + ".weights");
    cur.fill(layer.bias().span(), at + ".bias");
    out.push_back(std::move(layer));
  }
  return Mlp<float>(std::move(out));
}

void check_kind(const Checkpoint& ck, const std::string& kind) {
  const auto got = field<std::string>(ck.descriptor, "kind", "root");
  if (got != kind) throw ParseError("checkpoint holds a '" + got + "' model, expected '" + kind + "'");
}

}  // namespace

io::Bytes encode_checkpoint(const Checkpoint& ck) {
  const std::string desc = ck.descriptor.dump();
  io::Bytes out;
  out.reserve(24 + desc.size() + 4 * ck.payload.size());
  io::put_bytes(out, std::string_view(kMagic, 4));
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(desc.size()));
  io::put_bytes(out, desc);
  io::put_u64(out, ck.payload.size());
  io::Bytes payload;
  payload.reserve(4 * ck.payload.size());
  for (float v : ck.payload) io::put_f32(payload, v);
  io::put_u32(out, crc32_of(payload));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  io::Reader r(bytes, source);
  if (r.text(4, "magic") != std::string_view(kMagic, 4)) throw ParseError(source + ": bad magic (not an NFCK checkpoint)");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion)
    throw ParseError(source + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                     std::to_string(kCheckpointVersion) + ")");
  const auto desc_len = r.u32("descriptor length");
  const std::string desc = r.text(desc_len, "descriptor");
  Checkpoint ck;
  try {
    ck.descriptor = json::parse(desc);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": descriptor is not valid JSON (" + e.what() + ")");
  }
  const auto count = r.u64("payload float count");
  const auto crc = r.u32("payload checksum");
  if (count > r.remaining() / 4)
    throw ParseError(source + ": payload declares " + std::to_string(count) + " floats but only " +
                     std::to_string(r.remaining()) + " bytes remain at byte offset " + std::to_string(r.offset()));
  const auto raw = r.raw(static_cast<std::size_t>(count) * 4, "payload");
  if (r.remaining() != 0)
    throw ParseError(source + ": " + std::to_string(r.remaining()) + " trailing bytes after the payload");
  if (crc32_of(raw) != crc) throw ParseError(source + ": payload checksum mismatch");
  ck.payload.resize(count);
  io::Reader pr(raw, source);
  for (auto& v : ck.payload) v = pr.f32("payload");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path), path.string());
}

Checkpoint flow_checkpoint(const flow::FlowModel<float>& model, const json& meta) {
  Checkpoint ck;
  const auto& im = model.image();
  json blocks = json::array();
  for (const auto& b : model.blocks()) {
    std::visit(
        [&](const auto& blk) {
          using B = std::decay_t<decltype(blk)>;
          if constexpr (std::is_same_v<B, flow::LogitTransform<float>>) {
            blocks.push_back({{"type", "logit"}, {"width", blk.width()}, {"delta", blk.delta()}});
          } else if constexpr (std::is_same_v<B, flow::CouplingPair<float>>) {
            blocks.push_back({{"type", "coupling"},
                              {"offset", blk.offset()},
                              {"width", blk.width()},
                              {"alpha", blk.alpha()},
                              {"s1", mlp_descriptor(blk.s1())},
                              {"t1", mlp_descriptor(blk.t1())},
                              {"s2", mlp_descriptor(blk.s2())},
                              {"t2", mlp_descriptor(blk.t2())}});
            append(ck.payload, blk.s1());
            append(ck.payload, blk.t1());
            append(ck.payload, blk.s2());
            append(ck.payload, blk.t2());
          } else if constexpr (std::is_same_v<B, flow::Squeeze>) {
            const auto& s = blk.input_shape();
            blocks.push_back({{"type", "squeeze"}, {"input", {s.channels, s.height, s.width}}});
          } else if constexpr (std::is_same_v<B, flow::Permute>) {
            blocks.push_back({{"type", "permute"}, {"offset", blk.offset()}, {"perm", blk.permutation()}});
          } else {
            blocks.push_back({{"type", "split"}, {"offset", blk.offset()}, {"width", blk.width()}});
          }
        },
        b);
  }
  ck.descriptor = {{"kind", "flow"},
                   {"image", {im.channels, im.height, im.width}},
                   {"blocks", blocks},
                   {"floats", ck.payload.size()},
                   {"training", meta}};
  return ck;
}

flow::FlowModel<float> flow_from_checkpoint(const Checkpoint& ck) {
  check_kind(ck, "flow");
  const auto& d = ck.descriptor;
  const auto image = field<std::vector<std::size_t>>(d, "image", "root");
  if (image.size() != 3) throw ParseError("checkpoint descriptor: image must be [channels, height, width]");
  PayloadCursor cur(ck.payload);
  std::vector<flow::Block<float>> blocks;
  const json& list = d.contains("blocks") ? d.at("blocks") : json::array();
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& b = list[i];
    const std::string at = "blocks[" + std::to_string(i) + "]";
    const auto type = field<std::string>(b, "type", at);
    if (type == "logit") {
      blocks.emplace_back(flow::LogitTransform<float>(field<std::size_t>(b, "width", at), field<float>(b, "delta", at)));
    } else if (type == "coupling") {
      auto s1 = mlp_from(b.at("s1"), cur, at + ".s1");
      auto t1 = mlp_from(b.at("t1"), cur, at + ".t1");
      auto s2 = mlp_from(b.at("s2"), cur, at + ".s2");
      auto t2 = mlp_from(b.at("t2"), cur, at + ".t2");
      blocks.emplace_back(flow::CouplingPair<float>(field<std::size_t>(b, "offset", at), field<std::size_t>(b, "width", at),
                                                    std::move(s1), std::move(t1), std::move(s2), std::move(t2),
                                                    field<float>(b, "alpha", at)));
    } else if (type == "squeeze") {
      const auto s = field<std::vector<std::size_t>>(b, "input", at);
      if (s.size() != 3) throw ParseError("checkpoint descriptor: " + at + ".input must have three entries");
      blocks.emplace_back(flow::Squeeze(flow::ImageShape{s[0], s[1], s[2]}));
    } else if (type == "permute") {
      blocks.emplace_back(flow::Permute(field<std::size_t>(b, "offset", at), field<std::vector<std::size_t>>(b, "perm", at)));
    } else if (type == "split") {
      blocks.emplace_back(flow::Split(field<std::size_t>(b, "offset", at), field<std::size_t>(b, "width", at)));
    } else {
      throw ParseError("checkpoint descriptor: " + at + " has unknown type '" + type + "'");
    }
  }
  if (!cur.done())
    throw ParseError("checkpoint payload has " + std::to_string(ck.payload.size() - cur.position()) +
                     " floats not claimed by the descriptor");
  return flow::FlowModel<float>(flow::ImageShape{image[0], image[1], image[2]}, std::move(blocks));
}

Checkpoint classifier_checkpoint(const classifier::ClassifierModel& model, const json& meta) {
  Checkpoint ck;
  append(ck.payload, model.net());
  ck.descriptor = {{"kind", "classifier"},
                   {"classes", model.classes()},
                   {"layers", mlp_descriptor(model.net())},
                   {"floats", ck.payload.size()},
                   {"training", meta}};
  return ck;
}

classifier::ClassifierModel classifier_from_checkpoint(const Checkpoint& ck) {
  check_kind(ck, "classifier");
  PayloadCursor cur(ck.payload);
  auto net = mlp_from(ck.descriptor.at("layers"), cur, "classifier");
  if (!cur.done()) throw ParseError("checkpoint payload has floats not claimed by the descriptor");
  return classifier::ClassifierModel(std::move(net), field<std::size_t>(ck.descriptor, "classes", "root"));
}

}  // namespace nfa::harness

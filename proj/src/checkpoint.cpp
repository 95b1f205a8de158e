#include "slingshot/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "slingshot/errors.hpp"

namespace slingshot {

namespace {

constexpr char kMagic[4] = {'S', 'L', 'N', 'G'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    for (double x : v) f64(x);
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t base) : bytes_(bytes), base_(base) {}

  std::size_t offset() const { return base_ + pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError("checkpoint truncated reading " + std::string(what) + " at offset " + std::to_string(offset()) +
                        " (need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left)");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::vector<double> f64s(const char* what) {
    const std::uint64_t n = u64(what);
    if (n > remaining() / 8) {
      throw FormatError("checkpoint length prefix " + std::to_string(n) + " for " + what + " at offset " +
                        std::to_string(offset() - 8) + " exceeds the section");
    }
    std::vector<double> out(n);
    for (auto& x : out) x = f64(what);
    return out;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  void expect_end(const char* what) const {
    if (remaining() != 0) {
      throw FormatError("checkpoint section " + std::string(what) + " has " + std::to_string(remaining()) +
                        " trailing bytes at offset " + std::to_string(offset()));
    }
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

nlohmann::ordered_json view_to_json(const FlatView& view) {
  auto segs = nlohmann::ordered_json::array();
  for (const auto& s : view.segments) {
    nlohmann::ordered_json j;
    j["name"] = s.name;
    j["offset"] = s.offset;
    j["length"] = s.length;
    j["shape"] = s.shape;
    j["group"] = param_group_name(s.group);
    segs.push_back(std::move(j));
  }
  return segs;
}

FlatView view_from_json(const nlohmann::ordered_json& segs) {
  FlatView view;
  for (const auto& j : segs) {
    FlatSegment s;
    s.name = j.at("name").get<std::string>();
    s.offset = j.at("offset").get<std::size_t>();
    s.length = j.at("length").get<std::size_t>();
    s.shape = j.at("shape").get<Shape>();
    s.group = j.at("group").get<std::string>() == "classifier" ? ParamGroup::classifier : ParamGroup::representation;
    if (s.offset != view.total_len || shape_numel(s.shape) != s.length) {
      throw FormatError("checkpoint manifest: segment '" + s.name + "' is inconsistent");
    }
    view.total_len += s.length;
    view.segments.push_back(std::move(s));
  }
  return view;
}

void section(Writer& w, const char tag[4], const std::vector<std::uint8_t>& payload) {
  w.bytes(tag, 4);
  w.u64(payload.size());
  w.bytes(payload.data(), payload.size());
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json manifest;
  manifest["step"] = ckpt.step;
  manifest["precision"] = ckpt.precision;
  manifest["config"] = ckpt.config;
  manifest["flat_view"] = view_to_json(ckpt.view);
  const std::string mani = manifest.dump();

  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(5);
  section(w, "MANI", std::vector<std::uint8_t>(mani.begin(), mani.end()));
  {
    Writer p;
    p.f64s(ckpt.params);
    section(w, "PARM", p.data());
  }
  {
    Writer p;
    p.f64s(ckpt.initial_params);
    section(w, "INIT", p.data());
  }
  {
    Writer p;
    p.u64(ckpt.optimizer_t);
    p.f64s(ckpt.m);
    p.f64s(ckpt.v);
    section(w, "OPTM", p.data());
  }
  {
    Writer p;
    p.u64(ckpt.order.cursor);
    p.u64(ckpt.order.epoch);
    p.u64(ckpt.order.permutation.size());
    for (auto i : ckpt.order.permutation) p.u64(i);
    p.u64(ckpt.order.rng.size());
    p.bytes(ckpt.order.rng.data(), ckpt.order.rng.size());
    section(w, "RNGS", p.data());
  }
  return std::move(w.data());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, 0);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic bytes at offset 0");
  const std::uint32_t version = r.u32("format version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32("section count");
  Checkpoint ck;
  bool seen[5] = {false, false, false, false, false};
  static const char* tags[5] = {"MANI", "PARM", "INIT", "OPTM", "RNGS"};
  for (std::uint32_t s = 0; s < count; ++s) {
    const std::size_t tag_offset = r.offset();
    auto tag = r.take(4, "section tag");
    const std::size_t len_offset = r.offset();
    const std::uint64_t len = r.u64("section length");
    if (len > r.remaining()) {
      throw FormatError("checkpoint section length " + std::to_string(len) + " at offset " +
                        std::to_string(len_offset) + " exceeds the " + std::to_string(r.remaining()) +
                        " remaining bytes");
    }
    const std::size_t payload_offset = r.offset();
    Reader p(r.take(static_cast<std::size_t>(len), "section payload"), payload_offset);
    int which = -1;
    for (int i = 0; i < 5; ++i) {
      if (std::memcmp(tag.data(), tags[i], 4) == 0) which = i;
    }
    if (which < 0) throw FormatError("unknown checkpoint section tag at offset " + std::to_string(tag_offset));
    if (seen[which]) throw FormatError("duplicate checkpoint section " + std::string(tags[which]));
    seen[which] = true;
    switch (which) {
      case 0: {
        auto text = p.take(static_cast<std::size_t>(len), "manifest");
        auto j = nlohmann::ordered_json::parse(text.begin(), text.end(), nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
          throw FormatError("checkpoint manifest at offset " + std::to_string(payload_offset) + " is not valid JSON");
        }
        try {
          ck.step = j.at("step").get<std::uint64_t>();
          ck.precision = j.at("precision").get<std::string>();
          ck.config = j.at("config");
          ck.view = view_from_json(j.at("flat_view"));
        } catch (const nlohmann::json::exception& e) {
          throw FormatError(std::string("checkpoint manifest: ") + e.what());
        }
        break;
      }
      case 1:
        ck.params = p.f64s("parameters");
        p.expect_end("PARM");
        break;
      case 2:
        ck.initial_params = p.f64s("initial parameters");
        p.expect_end("INIT");
        break;
      case 3:
        ck.optimizer_t = p.u64("optimizer step");
        ck.m = p.f64s("first moment");
        ck.v = p.f64s("second moment");
        p.expect_end("OPTM");
        break;
      case 4: {
        ck.order.cursor = p.u64("cursor");
        ck.order.epoch = p.u64("epoch");
        const std::uint64_t n = p.u64("permutation length");
        if (n > p.remaining() / 8) throw FormatError("checkpoint permutation length at offset " + std::to_string(p.offset() - 8) + " exceeds the section");
        ck.order.permutation.resize(n);
        for (auto& i : ck.order.permutation) i = p.u64("permutation");
        const std::uint64_t m = p.u64("rng length");
        auto text = p.take(static_cast<std::size_t>(m), "rng state");
        ck.order.rng.assign(text.begin(), text.end());
        p.expect_end("RNGS");
        break;
      }
    }
  }
  r.expect_end("file");
  for (int i = 0; i < 5; ++i) {
    if (!seen[i]) throw FormatError("checkpoint is missing section " + std::string(tags[i]));
  }
  if (ck.params.size() != ck.view.total_len || ck.initial_params.size() != ck.view.total_len) {
    throw FormatError("checkpoint parameter vectors do not match the manifest's flat view");
  }
  // Stateless optimizers store empty moment vectors.
  for (const auto* moment : {&ck.m, &ck.v}) {
    if (!moment->empty() && moment->size() != ck.view.total_len) {
      throw FormatError("checkpoint optimizer state does not match the manifest's flat view");
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace slingshot

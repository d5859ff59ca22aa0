#include "dass/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dass/error.hpp"

namespace dass {
namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_bytes(std::vector<uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class Reader {
 public:
  explicit Reader(const std::vector<uint8_t>& bytes) : bytes_(bytes) {}

  void need(size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(bytes_.size()) + " while reading " + what +
                        " at offset " + std::to_string(pos_));
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(const char* what) {
    const uint32_t n = u32(what);
    need(n, what);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  const uint8_t* raw(size_t n, const char* what) {
    need(n, what);
    const uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  size_t pos() const { return pos_; }
  size_t size() const { return bytes_.size(); }

 private:
  const std::vector<uint8_t>& bytes_;
  size_t pos_ = 0;
};

}  // namespace

const Tensor& CheckpointFile::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

bool CheckpointFile::has(const std::string& name) const {
  for (const auto& entry : tensors)
    if (entry.first == name) return true;
  return false;
}

std::vector<uint8_t> encode_checkpoint(const CheckpointFile& file) {
  std::vector<uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  out.push_back(kCheckpointVersion);
  put_bytes(out, file.header_json);
  put_u32(out, static_cast<uint32_t>(file.tensors.size()));
  for (const auto& [name, t] : file.tensors) {
    put_bytes(out, name);
    put_u32(out, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (float v : t.values()) put_u32(out, std::bit_cast<uint32_t>(v));
  }
  return out;
}

CheckpointFile decode_checkpoint(const std::vector<uint8_t>& bytes) {
  Reader r(bytes);
  const uint8_t* magic = r.raw(sizeof(kCheckpointMagic), "magic");
  if (std::memcmp(magic, kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError("not a checkpoint: bad magic at byte 0");
  }
  const uint8_t version = *r.raw(1, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at byte 8");
  }
  CheckpointFile file;
  file.header_json = r.str("header");
  const uint32_t count = r.u32("tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str("tensor name");
    const uint32_t rank = r.u32("tensor rank");
    if (rank > 8) throw FormatError("tensor '" + name + "' has implausible rank at byte " + std::to_string(r.pos() - 4));
    Shape shape;
    for (uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("tensor dims"));
    const int64_t numel = shape_numel(shape);
    const uint8_t* raw = r.raw(static_cast<size_t>(numel) * 4, "tensor values");
    std::vector<float> values(static_cast<size_t>(numel));
    for (int64_t j = 0; j < numel; ++j) {
      uint32_t v = 0;
      for (int b = 0; b < 4; ++b) v |= static_cast<uint32_t>(raw[j * 4 + b]) << (8 * b);
      values[static_cast<size_t>(j)] = std::bit_cast<float>(v);
    }
    file.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.pos() != r.size()) throw FormatError("trailing bytes after checkpoint at offset " + std::to_string(r.pos()));
  return file;
}

void write_checkpoint_file(const CheckpointFile& file, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read checkpoint " + path.string());
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace dass

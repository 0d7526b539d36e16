#include "assoc/checkpoint.h"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "assoc/error.h"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace assoc {

namespace {

constexpr char kMagic[4] = {'A', 'S', 'S', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), 8);
}

class Reader {
 public:
  Reader(const std::string& path, std::vector<char> bytes)
      : path_(path), bytes_(std::move(bytes)) {}

  template <typename T>
  T scalar() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void floats(float* dst, std::size_t n) {
    need(n * 4);
    std::memcpy(dst, bytes_.data() + pos_, n * 4);
    pos_ += n * 4;
  }

  bool eof() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size())
      throw IoError("checkpoint " + path_ + ": truncated at byte " + std::to_string(pos_));
  }

  std::string path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, NdArray<float>>>& tensors) {
  nlohmann::ordered_json j;
  j["arch"] = meta.arch;
  j["embedding_dim"] = meta.embedding_dim;
  j["num_classes"] = meta.num_classes;
  j["input_shape"] = {meta.input.h, meta.input.w, meta.input.c};
  j["step"] = meta.step;
  std::string meta_json = j.dump();

  std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(meta_json.size()));
    out.write(meta_json.data(), static_cast<std::streamsize>(meta_json.size()));
    for (const auto& [name, t] : tensors) {
      put_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t e : t.shape) put_u64(out, e);
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * 4));
    }
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(path, std::move(bytes));

  std::string magic = r.str(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw IoError("checkpoint " + path + ": bad magic");
  std::uint32_t version = r.scalar<std::uint32_t>();
  if (version != kVersion)
    throw IoError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  std::uint32_t json_len = r.scalar<std::uint32_t>();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(r.str(json_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path + ": bad meta json: " + e.what());
  }

  Checkpoint ck;
  try {
    ck.meta.arch = j.at("arch").get<std::string>();
    ck.meta.embedding_dim = j.at("embedding_dim").get<int>();
    ck.meta.num_classes = j.at("num_classes").get<int>();
    auto shape = j.at("input_shape");
    ck.meta.input = {shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(),
                     shape.at(2).get<std::size_t>()};
    ck.meta.step = j.at("step").get<long long>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path + ": incomplete meta json: " + e.what());
  }

  while (!r.eof()) {
    std::uint32_t name_len = r.scalar<std::uint32_t>();
    std::string name = r.str(name_len);
    std::uint32_t rank = r.scalar<std::uint32_t>();
    if (rank > 8) throw IoError("checkpoint " + path + ": implausible tensor rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(static_cast<std::size_t>(r.scalar<std::uint64_t>()));
    NdArray<float> t(shape);
    r.floats(t.data.data(), t.size());
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

}  // namespace assoc

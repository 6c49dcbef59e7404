#include "devlbert/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <utility>

#include "devlbert/error.hpp"

namespace devlbert {

namespace {

constexpr const char* kFormat = "devlbert-checkpoint";
constexpr int kVersion = 1;

void write_u64_le(std::ostream& out, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64_le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw ValidationError("checkpoint truncated: missing header length");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

void write_f64_le(std::ostream& out, const double* src, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits;
    std::memcpy(&bits, &src[i], 8);
    unsigned char buf[8];
    for (int b = 0; b < 8; ++b) buf[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), 8);
  }
}

void read_f64_le(std::istream& in, double* dst, size_t n) {
  std::vector<unsigned char> buf(n * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw ValidationError("checkpoint truncated: payload shorter than header claims");
  for (size_t i = 0; i < n; ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<uint64_t>(buf[i * 8 + b]) << (8 * b);
    std::memcpy(&dst[i], &bits, 8);
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params,
                     const nlohmann::json& meta) {
  check_unique_names(params);
  nlohmann::json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["meta"] = meta;
  auto records = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& p : params) {
    records.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    offset += static_cast<uint64_t>(p.tensor.numel()) * 8;
  }
  header["records"] = std::move(records);
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open checkpoint for writing: " + path);
  write_u64_le(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& p : params) {
    write_f64_le(out, p.tensor.data(), static_cast<size_t>(p.tensor.numel()));
  }
  out.flush();
  if (!out) throw ValidationError("write failed for checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  const uint64_t header_len = read_u64_le(in);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ValidationError("checkpoint truncated: header shorter than declared");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("format", "") != kFormat) {
    throw ValidationError("not a devlbert checkpoint: bad format tag");
  }
  if (header.value("version", -1) != kVersion) {
    throw ValidationError("unsupported checkpoint version");
  }

  Checkpoint ckpt;
  ckpt.meta = header.value("meta", nlohmann::json::object());
  uint64_t expected_offset = 0;
  for (const auto& rec : header.at("records")) {
    Parameter p;
    p.name = rec.at("name").get<std::string>();
    Shape shape = rec.at("shape").get<Shape>();
    const uint64_t offset = rec.at("offset").get<uint64_t>();
    if (offset != expected_offset) {
      throw ValidationError("checkpoint record '" + p.name + "' has non-contiguous offset");
    }
    p.tensor = Tensor(shape);
    read_f64_le(in, p.tensor.buffer().data(), static_cast<size_t>(p.tensor.numel()));
    expected_offset += static_cast<uint64_t>(p.tensor.numel()) * 8;
    ckpt.params.push_back(std::move(p));
  }
  return ckpt;
}

void restore_parameters(const Checkpoint& ckpt, std::vector<Parameter>& params) {
  for (auto& p : params) {
    const Parameter* found = nullptr;
    for (const auto& rec : ckpt.params) {
      if (rec.name == p.name) {
        found = &rec;
        break;
      }
    }
    if (!found) throw ValidationError("checkpoint missing parameter: " + p.name);
    if (found->tensor.shape() != p.tensor.shape()) {
      throw ValidationError("shape mismatch for parameter " + p.name + ": checkpoint has " +
                            shape_to_string(found->tensor.shape()) + ", model expects " +
                            shape_to_string(p.tensor.shape()));
    }
    p.tensor.buffer() = found->tensor.buffer();
  }
}

}  // namespace devlbert

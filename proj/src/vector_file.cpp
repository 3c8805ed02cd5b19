#include "prognos/vector_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "prognos/error.hpp"

namespace prognos {

static_assert(std::endian::native == std::endian::little,
              "vector files are little-endian; add byte swapping for this target");

void write_vector_file(const std::filesystem::path& path, nlohmann::json preamble,
                       std::size_t dim, std::span<const float> data) {
  if (dim == 0 ? !data.empty() : data.size() % dim != 0) {
    throw Error(ErrorCode::DimensionMismatch, "payload is not a whole number of rows");
  }
  preamble["dim"] = dim;
  preamble["count"] = dim == 0 ? 0 : data.size() / dim;

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    const std::string head = preamble.dump();
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.put('\n');
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size_bytes()));
    out.flush();
    if (!out) throw Error(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

VectorFile read_vector_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::string head;
  if (!std::getline(in, head)) throw Error(ErrorCode::CorruptBank, "missing preamble in " + path.string());

  VectorFile vf;
  try {
    vf.preamble = nlohmann::json::parse(head);
    vf.dim = vf.preamble.at("dim").get<std::size_t>();
    vf.count = vf.preamble.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptBank, path.string() + ": bad preamble: " + e.what());
  }

  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = vf.dim * vf.count * sizeof(float);
  if (payload.size() != expected) {
    throw Error(ErrorCode::CorruptBank, path.string() + ": payload has " +
                                            std::to_string(payload.size()) + " bytes, expected " +
                                            std::to_string(expected));
  }
  vf.data.resize(vf.dim * vf.count);
  std::memcpy(vf.data.data(), payload.data(), expected);
  return vf;
}

}  // namespace prognos

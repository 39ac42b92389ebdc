#include "lexshort/serialize.hpp"

#include <bit>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are little-endian; big-endian hosts are unsupported");

namespace lexshort {

using json = nlohmann::json;

void write_tensor_blob(std::ostream& out, const std::string& name, const Tensor& t) {
  json header;
  header["name"] = name;
  header["shape"] = t.shape();
  header["dtype"] = "f32";
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (!out) throw std::runtime_error("tensor blob: write failed for " + name);
}

bool try_read_tensor_blob(std::istream& in, NamedTensor& out) {
  std::string line;
  if (!std::getline(in, line)) return false;
  if (line.empty()) return false;
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("tensor blob: bad header: ") + e.what());
  }
  if (!header.contains("name") || !header.contains("shape") || !header.contains("dtype")) {
    throw std::runtime_error("tensor blob: header missing name/shape/dtype");
  }
  if (header["dtype"] != "f32") {
    throw std::runtime_error("tensor blob: unsupported dtype " +
                             header["dtype"].get<std::string>());
  }
  out.name = header["name"].get<std::string>();
  const auto shape = header["shape"].get<std::vector<std::size_t>>();
  Tensor t(shape);
  in.read(reinterpret_cast<char*>(t.values().data()),
          static_cast<std::streamsize>(t.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float))) {
    throw std::runtime_error("tensor blob: truncated payload for " + out.name);
  }
  out.tensor = t;
  return true;
}

NamedTensor read_tensor_blob(std::istream& in) {
  NamedTensor result;
  if (!try_read_tensor_blob(in, result)) {
    throw std::runtime_error("tensor blob: unexpected end of stream");
  }
  return result;
}

}  // namespace lexshort

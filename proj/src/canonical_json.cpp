#include "umat/canonical_json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "umat/error.hpp"

namespace umat {

namespace {

void dump_value(const nlohmann::json& j, std::string& out) {
  switch (j.type()) {
    case nlohmann::json::value_t::object: {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {  // std::map order: sorted keys
        if (!first) out += ',';
        first = false;
        out += nlohmann::json(it.key()).dump();
        out += ':';
        dump_value(it.value(), out);
      }
      out += '}';
      break;
    }
    case nlohmann::json::value_t::array: {
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        first = false;
        dump_value(v, out);
      }
      out += ']';
      break;
    }
    case nlohmann::json::value_t::number_float: {
      double d = j.get<double>();
      if (!std::isfinite(d)) throw InternalError("canonical_dump: non-finite number");
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", d);
      out += buf;
      break;
    }
    default:
      out += j.dump();  // strings, ints, bools, null
  }
}

}  // namespace

std::string canonical_dump(const nlohmann::json& j) {
  std::string out;
  dump_value(j, out);
  return out;
}

void write_canonical_json(const nlohmann::json& j, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw DataError("cannot open for writing: " + tmp);
    f << canonical_dump(j) << '\n';
    if (!f) throw DataError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace umat

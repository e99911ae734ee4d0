#pragma once

// Output files are written to a sibling temporary and renamed into place, so
// readers never see a partial artifact.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <system_error>

#include "qkdsim/errors.hpp"

namespace qkdsim {

inline void write_file_atomic(const std::string& path, const std::function<void(std::ostream&)>& body,
                              bool binary = false) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) throw Error("cannot write '" + tmp.string() + "'");
    body(os);
    os.flush();
    if (!os) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("write failed for '" + path + "'");
    }
  }
  fs::rename(tmp, target);
}

}  // namespace qkdsim

#pragma once

#include <filesystem>
#include <string>

namespace helpers {

/// Fresh scratch directory under the system temp dir.
inline std::string make_temp_dir(const std::string& tag) {
  static int counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("nowcast_" + tag + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace helpers

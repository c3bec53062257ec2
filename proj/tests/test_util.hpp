#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

namespace test_util {

// Fresh empty directory under the system temp dir, unique per process.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cosnet_test_" + std::to_string(::getpid())) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test_util

#pragma once

// Temporary directory removed on scope exit.

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

namespace scratch {

struct Dir {
  std::filesystem::path path;

  explicit Dir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("minibert-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~Dir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  Dir(const Dir&) = delete;
  Dir& operator=(const Dir&) = delete;
};

}  // namespace scratch

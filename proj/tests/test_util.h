#ifndef RESFLOW_TESTS_TEST_UTIL_H_
#define RESFLOW_TESTS_TEST_UTIL_H_

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "resflow/raster.h"

namespace resflow::testing {

// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("resflow_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Mask RandomMask(int64_t w, int64_t h, std::mt19937_64& rng) {
  Mask m(w, h);
  std::uniform_int_distribution<int> v(0, 255);
  for (auto& l : m.labels) l = static_cast<uint8_t>(v(rng));
  return m;
}

inline Tile ConstantTile(int64_t w, int64_t h, int bands, float value) {
  Tile t;
  t.extent = {"s", 0, 0, w, h};
  t.bands = bands;
  t.pixels.assign(static_cast<size_t>(w * h * bands), value);
  return t;
}

}  // namespace resflow::testing

#endif  // RESFLOW_TESTS_TEST_UTIL_H_

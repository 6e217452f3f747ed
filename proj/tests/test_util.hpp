#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "mmpid/dataset.hpp"
#include "mmpid/matrix.hpp"
#include "mmpid/rng.hpp"

namespace mmpid::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mmpid_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = scale * rng.normal();
  return m;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

inline std::vector<FrameEmbedding> random_frames(Rng& rng, std::size_t frames, std::size_t dim) {
  std::vector<FrameEmbedding> out(frames);
  for (auto& f : out) {
    f.vector.resize(dim);
    for (float& x : f.vector) x = static_cast<float>(rng.normal());
    f.quality = static_cast<float>(rng.uniform());
  }
  return out;
}

// A small hand-built clip with every modality present.
inline ClipRecord make_clip(const std::string& id, int identity, Rng& rng, std::size_t frames = 5,
                            std::size_t dim = 4) {
  ClipRecord c;
  c.clip_id = id;
  c.identity = identity;
  c.duration_s = 2.5;
  for (Modality m : kAllModalities) {
    c.stream(m) = random_frames(rng, m == Modality::kAudio ? 1 : frames, dim);
  }
  return c;
}

}  // namespace mmpid::testing

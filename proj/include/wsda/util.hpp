#pragma once

#include <cstdint>
#include <functional>
#include <string>

namespace wsda {

// FNV-1a 64-bit running hash; used for dataset/config/report digests.
class Digest {
 public:
  void update(const void* data, size_t n);
  void update_u64(uint64_t v);
  void update_string(const std::string& s);
  uint64_t value() const { return h_; }
  std::string hex() const;

 private:
  uint64_t h_ = 1469598103934665603ull;
};

uint64_t fnv1a64(const void* data, size_t n);
std::string hex_u64(uint64_t v);

// Runs fn(i) for every i in [0, n) on a static partition of worker threads.
// Callers must write results to per-index storage so the outcome does not
// depend on the thread count. Exceptions from workers are rethrown.
void parallel_for(int n, const std::function<void(int)>& fn);
int worker_count();

bool file_exists(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
void ensure_dir(const std::string& path);

std::string strfmt(const char* fmt, ...);

}  // namespace wsda

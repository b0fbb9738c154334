#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace optbench {

struct FetchOptions {
  // Replaces the default upstream with <mirror>/<dataset>/<archive-name>.
  // The OPTBENCH_MIRROR environment variable does the same.
  std::string mirror;
  // Directory holding already-downloaded archives or payload files, for
  // air-gapped machines.
  std::filesystem::path import_from;
};

// Ensures the payload files of `id` are present and checksum-verified under
// <cache_dir>/<id>/. Idempotent: a verified cache performs no network access.
// Downloads are serialized per dataset via a lock file. Synthetic datasets
// (quadratic, two_d) need no files and return immediately.
void fetch(const std::string& id, const std::filesystem::path& cache_dir,
           const FetchOptions& options = {});

// True when every payload file is present and matches the recorded (and,
// where known, pinned) digests. Throws on mismatch, returns false when files
// are simply absent.
bool cache_verified(const std::string& id, const std::filesystem::path& cache_dir);

std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& compressed);

// Minimal ustar reader: returns (name, bytes) for every regular file member.
std::vector<std::pair<std::string, std::vector<std::uint8_t>>> untar(
    const std::vector<std::uint8_t>& archive);

}  // namespace optbench

#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace optbench {

// Harness version, MAJOR.MINOR.PATCH. Results produced under equal
// MAJOR.MINOR are directly comparable; PATCH changes must not affect results.
inline constexpr const char* kVersion = "1.0.0";

struct Version {
  int major = 0;
  int minor = 0;
  int patch = 0;

  std::string str() const {
    return std::to_string(major) + "." + std::to_string(minor) + "." +
           std::to_string(patch);
  }
  std::string major_minor() const {
    return std::to_string(major) + "." + std::to_string(minor);
  }
};

inline Version parse_version(const std::string& s) {
  Version v;
  char tail = 0;
  int n = std::sscanf(s.c_str(), "%d.%d.%d%c", &v.major, &v.minor, &v.patch, &tail);
  if (n != 3 || v.major < 0 || v.minor < 0 || v.patch < 0) {
    throw std::invalid_argument("malformed version string '" + s +
                                "' (expected MAJOR.MINOR.PATCH)");
  }
  return v;
}

// Logs are mixable iff MAJOR and MINOR agree; PATCH is free.
inline bool versions_compatible(const std::string& a, const std::string& b) {
  Version va = parse_version(a);
  Version vb = parse_version(b);
  return va.major == vb.major && va.minor == vb.minor;
}

}  // namespace optbench

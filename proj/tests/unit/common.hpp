#pragma once

#include <cstdlib>
#include <filesystem>

#include <doctest.h>

namespace dtae::testing {

// Root holding mnist/; tests needing real data skip when it is missing.
inline std::filesystem::path data_root() {
  const char* env = std::getenv("DTAE_DATA_DIR");
  return env ? env : "/root/data";
}

inline bool have_mnist() {
  return std::filesystem::exists(data_root() / "mnist" / "train-images-idx3-ubyte");
}

}  // namespace dtae::testing

#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "lorafuse/library.hpp"
#include "lorafuse/tensor.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(LORAFUSE_FIXTURE_DIR) / name;
}

inline const nlohmann::json& oracle() {
  static const nlohmann::json j = [] {
    std::ifstream in(fixture("oracle.json"));
    return nlohmann::json::parse(in);
  }();
  return j;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lorafuse-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline lorafuse::MatrixF random_f(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  lorafuse::MatrixF m(rows, cols);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

inline lorafuse::Matrix random_d(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  lorafuse::Matrix m(rows, cols);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

struct Shape {
  std::string name;
  std::size_t d, k, r;
};

inline lorafuse::AdapterSet random_adapter(const std::string& id, const std::vector<Shape>& shapes,
                                           double alpha, std::mt19937_64& rng) {
  std::vector<lorafuse::LoraPair> layers;
  for (const auto& s : shapes)
    layers.emplace_back(s.name, random_f(s.d, s.r, rng), random_f(s.r, s.k, rng), alpha);
  return lorafuse::AdapterSet(id, std::move(layers));
}

inline lorafuse::Embedding random_embedding(std::size_t dim, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(dim);
  for (auto& x : v) x = n(rng);
  return lorafuse::Embedding(std::move(v));
}

inline lorafuse::Matrix matrix_from(const nlohmann::json& flat, std::size_t rows, std::size_t cols) {
  return lorafuse::Matrix(rows, cols, flat.get<std::vector<double>>());
}

}  // namespace testing

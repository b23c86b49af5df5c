// Test-support generator: writes a planted model, a synthetic corpus, and
// LLM reply fixtures under one directory so shell tests can drive the real
// CLI without any external model.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>

#include "unitscope/fsio.hpp"
#include "unitscope/testbed.hpp"

using namespace unitscope;

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: make_testbed <out_dir> [seed] [noise] [n_per_class]\n";
    return 2;
  }
  const std::filesystem::path out = argv[1];
  const uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 7;
  const double noise = argc > 3 ? std::strtod(argv[3], nullptr) : 0.1;
  const int n_per_class = argc > 4 ? std::atoi(argv[4]) : 4;

  PlantedSpec spec = default_planted_spec(3, seed);
  spec.noise_level = noise;

  const auto model_spec = write_planted_model(spec, out / "model");
  const auto manifest = write_synthetic_corpus(spec, n_per_class, out / "corpus");

  const auto fixtures = out / "fixtures";
  ensure_dir(fixtures);
  write_file_atomic(fixtures / "red.txt", "- red square\n- warm color field\n");
  write_file_atomic(fixtures / "green.txt", "- green square\n- leafy patch\n");
  write_file_atomic(fixtures / "blue.txt", "- blue square\n- cool color field\n");
  write_file_atomic(fixtures / "background.txt", "- gray noise\n- film grain\n");

  std::cout << "model_spec " << model_spec.string() << "\n";
  std::cout << "corpus " << manifest.string() << "\n";
  std::cout << "fixtures " << fixtures.string() << "\n";
  return 0;
}

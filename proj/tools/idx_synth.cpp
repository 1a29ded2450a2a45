// Writes a procedural digit dataset in IDX format, for desk-scale experiments.
#include <CLI11.hpp>
#include <iostream>

#include "doconv/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"procedural IDX digit dataset generator"};
  std::size_t count = 1000, size = 28;
  std::uint64_t seed = 1;
  std::string images_path, labels_path;
  app.add_option("--count", count, "number of images");
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--size", size, "image side length");
  app.add_option("--images", images_path, "output images file")->required();
  app.add_option("--labels", labels_path, "output labels file")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    const doconv::DatasetHandle data = doconv::make_digit_dataset(count, seed, size);
    doconv::save_idx(data, images_path, labels_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  std::cout << "wrote " << count << " " << size << "x" << size << " images to " << images_path
            << "\n";
  return 0;
}

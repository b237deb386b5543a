// SPDX-License-Identifier: Apache-2.0
// Regenerates the datasets under data/. Usage: make_fixtures <out_dir>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "customdiff/data.hpp"
#include "customdiff/toyworld.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json(const fs::path& p, const json& j) {
  std::ofstream(p) << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <out_dir>\n", argv[0]);
    return 2;
  }
  const fs::path dir = argv[1];
  fs::create_directories(dir);
  namespace toy = cdiff::toy;

  cdiff::save_dataset((dir / "spotted_dog.json").string(), toy::instance_images("spotted_dog", "<new1>", 4, 21));
  cdiff::save_dataset((dir / "ringed_moon.json").string(), toy::instance_images("ringed_moon", "<new2>", 4, 22));
  cdiff::save_dataset((dir / "pool.json").string(), toy::caption_pool(60, 77));
  cdiff::save_dataset((dir / "dog_reference.json").string(), toy::category_images("dog", 50, 31));
  cdiff::save_dataset((dir / "moon_reference.json").string(), toy::category_images("moon", 50, 32));
  write_json(dir / "merge_targets.json", json::array({json::array({"photo of a <new1> dog"}),
                                                      json::array({"photo of a <new2> moon"})}));
  write_json(dir / "reg_captions.json", toy::regularization_captions(200, 3));
  write_json(dir / "config.json",
             {{"seed", 1},
              {"pretrain", {{"steps", 10000}, {"batch", 16}, {"learning_rate", 1e-3}, {"caption_dropout", 0.1}}},
              {"finetune", {{"steps", 250}, {"learning_rate", 0.1}, {"batch", 16}, {"trainable_scope", "kv_only"},
                            {"use_reg", "retrieved"}, {"use_aug", true}, {"optimize_modifier", true}, {"seed", 4}}},
              {"sampler", {{"steps", 200}, {"scale", 6.0}}},
              {"retrieval", {{"threshold", 0.95}, {"cap", 200}}}});
  std::printf("fixtures written to %s\n", dir.string().c_str());
  return 0;
}

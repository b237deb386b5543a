// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Every subcommand forwards its flags as a JSON
// object to cdiff_command in the shared library.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "customdiff/customdiff.h"

namespace {

enum class Kind { Text, List, Number, Count };

struct Flag {
  const char* name;
  Kind kind;
  const char* help;
};

struct Command {
  const char* name;
  const char* help;
  std::vector<Flag> flags;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> list{
      {"pretrain", "train a base model from scratch",
       {{"config", Kind::Text, "experiment config JSON"},
        {"data", Kind::Text, "dataset JSON (default: built-in toy world)"},
        {"out", Kind::Text, "output checkpoint"}}},
      {"finetune", "fine-tune a base model on one or more concepts",
       {{"config", Kind::Text, "experiment config JSON"},
        {"base", Kind::Text, "base checkpoint"},
        {"concept", Kind::List, "concept dataset JSON (repeatable)"},
        {"modifier", Kind::List, "modifier token per concept, e.g. <new1>"},
        {"reg", Kind::Text, "regularization dataset JSON"},
        {"steps", Kind::Count, "override the configured step count"},
        {"out", Kind::Text, "output delta (kv_only) or checkpoint (all_unet)"}}},
      {"merge", "merge several deltas with the closed-form solver",
       {{"base", Kind::Text, "base checkpoint"},
        {"delta", Kind::List, "delta checkpoint (repeatable)"},
        {"targets", Kind::Text, "JSON array of caption arrays, one per delta"},
        {"reg-captions", Kind::Text, "JSON array of regularization captions"},
        {"out", Kind::Text, "output merged checkpoint"}}},
      {"sample", "generate images",
       {{"config", Kind::Text, "experiment config JSON"},
        {"model", Kind::Text, "base or merged checkpoint"},
        {"delta", Kind::List, "delta to apply first (repeatable)"},
        {"prompt", Kind::Text, "text prompt"},
        {"n", Kind::Count, "number of images"},
        {"steps", Kind::Count, "sampler steps"},
        {"scale", Kind::Number, "guidance scale"},
        {"seed", Kind::Count, "sampler seed"},
        {"out", Kind::Text, "output prefix"}}},
      {"compress", "low-rank compress a delta",
       {{"delta", Kind::Text, "delta checkpoint"},
        {"energy", Kind::Number, "kept spectral energy in (0, 1]"},
        {"out", Kind::Text, "output delta"}}},
      {"analyze", "per-layer weight change report",
       {{"base", Kind::Text, "base checkpoint"},
        {"tuned", Kind::Text, "tuned checkpoint or delta"},
        {"spectra", Kind::Text, "CSV of singular values of the K/V deltas"},
        {"out", Kind::Text, "output JSON report"}}},
      {"eval", "text alignment, image alignment and KID",
       {{"config", Kind::Text, "experiment config JSON"},
        {"model", Kind::Text, "base or merged checkpoint"},
        {"delta", Kind::List, "delta to apply first (repeatable)"},
        {"prompt", Kind::Text, "text prompt"},
        {"targets", Kind::Text, "target image dataset JSON"},
        {"reference", Kind::Text, "reference dataset for KID (default: targets)"},
        {"n", Kind::Count, "number of samples"},
        {"steps", Kind::Count, "sampler steps"},
        {"scale", Kind::Number, "guidance scale"},
        {"seed", Kind::Count, "sampler seed"},
        {"mode", Kind::Text, "image alignment: mean or max"},
        {"out", Kind::Text, "output JSON report"}}},
      {"retrieve-reg", "select regularization images by caption similarity",
       {{"config", Kind::Text, "experiment config JSON"},
        {"pool", Kind::Text, "captioned pool dataset JSON"},
        {"caption", Kind::Text, "target caption"},
        {"threshold", Kind::Number, "similarity threshold"},
        {"cap", Kind::Count, "maximum number of images"},
        {"modifier", Kind::List, "modifier tokens to ignore in the caption"},
        {"out", Kind::Text, "output dataset JSON"}}},
  };
  return list;
}

struct Values {
  std::map<std::string, std::string> text;
  std::map<std::string, std::vector<std::string>> lists;
  std::map<std::string, double> numbers;
  std::map<std::string, std::size_t> counts;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"customdiff: multi-concept customization of a toy text-to-image diffusion model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("cdiff ") + cdiff_version());

  std::map<std::string, Values> values;
  std::map<std::string, std::vector<CLI::Option*>> given;
  for (const auto& cmd : commands()) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    Values& v = values[cmd.name];
    for (const auto& f : cmd.flags) {
      const std::string flag = std::string("--") + f.name;
      CLI::Option* opt = nullptr;
      switch (f.kind) {
        case Kind::Text: opt = sub->add_option(flag, v.text[f.name], f.help); break;
        case Kind::List: opt = sub->add_option(flag, v.lists[f.name], f.help); break;
        case Kind::Number: opt = sub->add_option(flag, v.numbers[f.name], f.help); break;
        case Kind::Count: opt = sub->add_option(flag, v.counts[f.name], f.help); break;
      }
      given[cmd.name].push_back(opt);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  for (const auto& cmd : commands()) {
    if (!app.got_subcommand(cmd.name)) continue;
    const Values& v = values[cmd.name];
    nlohmann::json opts = nlohmann::json::object();
    for (std::size_t i = 0; i < cmd.flags.size(); ++i) {
      if (given[cmd.name][i]->count() == 0) continue;
      const Flag& f = cmd.flags[i];
      switch (f.kind) {
        case Kind::Text: opts[f.name] = v.text.at(f.name); break;
        case Kind::List: opts[f.name] = v.lists.at(f.name); break;
        case Kind::Number: opts[f.name] = v.numbers.at(f.name); break;
        case Kind::Count: opts[f.name] = v.counts.at(f.name); break;
      }
    }
    char* summary = nullptr;
    const cdiff_status st = cdiff_command(cmd.name, opts.dump().c_str(), &summary);
    if (st != CDIFF_OK) {
      std::fprintf(stderr, "cdiff %s: %s (%s)\n", cmd.name, cdiff_last_error(), cdiff_status_name(st));
      return st == CDIFF_USAGE ? 2 : 1;
    }
    std::printf("%s\n", summary);
    cdiff_string_free(summary);
  }
  return 0;
}

#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dabf/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dabf: toy anchor-free detector with dynamic attention head, "
               "weighted bidirectional fusion and the wiou loss family"};
  app.require_subcommand(1);

  std::string config, out_dir, checkpoint, module = "all";
  std::string pred_box, gt_box, grid = "8,1", losslab_out;
  std::vector<std::string> seed_strs;
  int count = 0;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", config, "run config file (synth_* keys)");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--count", count, "number of image/label pairs")->required();

  auto* train = app.add_subcommand("train", "train a detector");
  train->add_option("--config", config, "run config file")->required();

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  evalc->add_option("--config", config, "run config file")->required();
  evalc->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  auto* ablate = app.add_subcommand("ablate", "head/neck/loss 2x2x2 ablation grid");
  ablate->add_option("--config", config, "run config file")->required();
  ablate->add_option("--seeds", seed_strs, "training seeds (comma separated)")
      ->delimiter(',')
      ->required();

  auto* losslab = app.add_subcommand("losslab", "loss surface over center offsets");
  losslab->add_option("--pair", pred_box, "predicted box cx,cy,w,h")->required();
  losslab->add_option("gt", gt_box, "ground-truth box cx,cy,w,h")->required();
  losslab->add_option("--grid", grid, "extent,step of the offset grid");
  losslab->add_option("--out", losslab_out, "output CSV (default stdout)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  gradcheck->add_option("--module", module, "all|tensor|dahead|bwfpn|loss|detector");

  auto* flops = app.add_subcommand("flops", "analytic per-layer FLOP table");
  flops->add_option("--config", config, "run config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors exit 1, --help exits 0
  }

  if (synth->parsed()) return dabf::cmd_synth(config, out_dir, count);
  if (train->parsed()) return dabf::cmd_train(config);
  if (evalc->parsed()) return dabf::cmd_eval(config, checkpoint);
  if (ablate->parsed()) {
    std::vector<uint64_t> seeds;
    for (const std::string& s : seed_strs) seeds.push_back(std::stoull(s));
    return dabf::cmd_ablate(config, seeds);
  }
  if (losslab->parsed()) return dabf::cmd_losslab(pred_box, gt_box, grid, losslab_out);
  if (gradcheck->parsed()) return dabf::cmd_gradcheck(module);
  if (flops->parsed()) return dabf::cmd_flops(config);
  return 1;
}

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <doctest.h>

#include "dabf/commands.hpp"
#include "dabf/gradcheck.hpp"
#include "dabf/image_io.hpp"
#include "dabf/ops.hpp"
#include "dabf/runconfig.hpp"

using namespace dabf;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("dabf_cli_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string write_cfg(const std::string& dir, const std::string& body,
                      const std::string& name = "run.cfg") {
  std::string path = dir + "/" + name;
  std::ofstream out(path);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("config parsing") {
  RunConfig cfg = RunConfig::from_string("epochs = 5 # comment\nneck=fpn\n");
  CHECK(cfg.get_int("epochs") == 5);
  CHECK(cfg.get("neck") == "fpn");
  // untouched keys hold their defaults
  CHECK(cfg.get_int("batch_size") == 16);

  CHECK_THROWS_WITH_AS(RunConfig::from_string("epochz = 5\n"),
                       doctest::Contains("unknown key"), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_string("no equals sign\n"), ConfigError);

  // resolved form covers every key and parses back to itself
  RunConfig again = RunConfig::from_string(cfg.resolved());
  CHECK(again.resolved() == cfg.resolved());
}

TEST_CASE("synth command: counts and reproducibility") {
  std::string dir = temp_dir("synth");
  SUBCASE("count 0 writes only the resolved config") {
    CHECK(cmd_synth("", dir + "/empty", 0) == 0);
    int files = 0;
    for (auto& e : fs::directory_iterator(dir + "/empty")) {
      (void)e;
      ++files;
    }
    CHECK(files == 1);  // config_resolved.cfg
  }
  SUBCASE("same spec twice produces identical bytes") {
    CHECK(cmd_synth("", dir + "/a", 3) == 0);
    CHECK(cmd_synth("", dir + "/b", 3) == 0);
    for (int i = 0; i < 3; ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "img_%05d", i);
      CHECK(slurp(dir + "/a/" + name + ".ppm") == slurp(dir + "/b/" + name + ".ppm"));
      CHECK(slurp(dir + "/a/" + name + ".txt") == slurp(dir + "/b/" + name + ".txt"));
    }
  }
  SUBCASE("requested count materializes") {
    CHECK(cmd_synth("", dir + "/c", 12) == 0);
    Dataset ds = load_dataset(dir + "/c");
    CHECK(ds.size() == 12);
  }
}

TEST_CASE("train and eval command round trip") {
  std::string dir = temp_dir("train");
  // tiny but real: 10 train / 4 val images at 32x32, 2 epochs
  std::string base =
      "input_size = 32\n"
      "stem_width = 2\n"
      "stage_widths = 3,4,6\n"
      "neck_channels = 8\n"
      "num_levels = 2\n"
      "dahead_blocks = 1\n"
      "synth_min_size = 10\n"
      "synth_max_size = 20\n"
      "epochs = 2\n"
      "batch_size = 4\n"
      "train_dir = " + dir + "/train\n"
      "val_dir = " + dir + "/val\n"
      "out_dir = " + dir + "/out\n";
  std::string cfg = write_cfg(dir, base);
  REQUIRE(cmd_synth(cfg, dir + "/train", 10) == 0);
  {
    std::ofstream patch(dir + "/run_val.cfg");
    patch << base << "synth_seed = 77\n";
  }
  REQUIRE(cmd_synth(dir + "/run_val.cfg", dir + "/val", 4) == 0);

  REQUIRE(cmd_train(cfg) == 0);
  CHECK(fs::exists(dir + "/out/metrics.csv"));
  CHECK(fs::exists(dir + "/out/model.ckpt"));
  CHECK(fs::exists(dir + "/out/config_resolved.cfg"));

  // eval on the produced checkpoint reproduces the final metrics row
  std::string metrics = slurp(dir + "/out/metrics.csv");
  REQUIRE(cmd_eval(cfg, dir + "/out/model.ckpt") == 0);
  std::string eval_csv = slurp(dir + "/out/eval_metrics.csv");
  // final row: epoch,loss,precision,recall,map50,map5095
  std::string last_line = metrics.substr(0, metrics.find_last_of('\n'));
  last_line = last_line.substr(last_line.find_last_of('\n') + 1);
  // strip epoch and loss columns
  size_t c1 = last_line.find(',');
  size_t c2 = last_line.find(',', c1 + 1);
  std::string train_metrics = last_line.substr(c2 + 1);
  std::string eval_row = eval_csv.substr(eval_csv.find('\n') + 1);
  eval_row = eval_row.substr(0, eval_row.find('\n'));
  CHECK(train_metrics == eval_row);

  SUBCASE("missing config exits nonzero") { CHECK(cmd_train(dir + "/nope.cfg") == 1); }
  SUBCASE("corrupt checkpoint magic exits nonzero") {
    std::fstream f(dir + "/out/model.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.write("ZZZZ", 4);
    f.close();
    CHECK(cmd_eval(cfg, dir + "/out/model.ckpt") == 1);
  }
}

TEST_CASE("losslab command") {
  std::string dir = temp_dir("losslab");
  std::string out = dir + "/grid.csv";
  // gt fixed at (2,1) size 2x2; offset (-1,0) recovers the corner pair
  REQUIRE(cmd_losslab("2,1,2,2", "2,1,2,2", "1,1", out) == 0);
  std::string csv = slurp(out);
  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header.find("wiou1") != std::string::npos);
  CHECK(header.find("wiou3_grad") != std::string::npos);

  bool found_zero_row = false, found_hand_case = false;
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream ls(line);
    std::vector<double> cols;
    std::string tok;
    while (std::getline(ls, tok, ',')) cols.push_back(std::stod(tok));
    REQUIRE(cols.size() == 2 + 9 * 2);
    double dx = cols[0], dy = cols[1];
    double iou_col = cols[2], wiou1_col = cols[2 + 6 * 2];
    CHECK(wiou1_col >= iou_col - 1e-12);  // dominance everywhere
    if (dx == 0 && dy == 0) {
      found_zero_row = true;
      for (size_t i = 2; i < cols.size(); i += 2) CHECK(cols[i] == doctest::Approx(0.0).epsilon(1e-12));
    }
    if (dx == -1 && dy == 0) {
      found_hand_case = true;
      CHECK(wiou1_col == doctest::Approx(0.719972666285458).epsilon(1e-6));
    }
  }
  CHECK(found_zero_row);
  CHECK(found_hand_case);

  CHECK(cmd_losslab("2,1,2,2", "2,1,2,2", "1,0", out) == 1);   // step <= 0
  CHECK(cmd_losslab("2,1,2,0", "2,1,2,2", "1,1", out) == 1);   // degenerate box
}

TEST_CASE("ablate command: grid shape and baseline equivalence") {
  std::string dir = temp_dir("ablate");
  std::string base =
      "input_size = 32\n"
      "stem_width = 2\n"
      "stage_widths = 3,4,6\n"
      "neck_channels = 8\n"
      "num_levels = 2\n"
      "dahead_blocks = 1\n"
      "synth_min_size = 10\n"
      "synth_max_size = 20\n"
      "epochs = 2\n"
      "batch_size = 4\n"
      "train_dir = " + dir + "/train\n"
      "val_dir = " + dir + "/val\n"
      "out_dir = " + dir + "/grid\n";
  std::string cfg = write_cfg(dir, base);
  REQUIRE(cmd_synth(cfg, dir + "/train", 8) == 0);
  REQUIRE(cmd_synth(cfg, dir + "/val", 3) == 0);
  REQUIRE(cmd_ablate(cfg, {7}) == 0);

  auto read_rows = [](const std::string& path) {
    std::ifstream in(path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
      std::vector<std::string> cols;
      std::istringstream ls(line);
      std::string tok;
      while (std::getline(ls, tok, ',')) cols.push_back(tok);
      rows.push_back(cols);
    }
    return rows;
  };
  auto runs = read_rows(dir + "/grid/ablation_runs.csv");
  auto summary = read_rows(dir + "/grid/ablation_summary.csv");
  CHECK(runs.size() == 1 + 8);  // header + 8 configs x 1 seed
  CHECK(summary.size() == 1 + 8);
  CHECK(runs[0].back() == "median_map5095");
  CHECK(summary[0] == std::vector<std::string>{"dahead", "bwfpn", "wiou", "precision", "recall",
                                               "map50", "map5095", "gflops"});

  // gflops identical across loss-only variations
  for (size_t r = 1; r < summary.size(); ++r) {
    for (size_t q = r + 1; q < summary.size(); ++q) {
      if (summary[r][0] == summary[q][0] && summary[r][1] == summary[q][1]) {
        CHECK(summary[r][7] == summary[q][7]);
      }
    }
  }

  // the all-off row equals a directly trained baseline, byte for byte
  std::string direct = write_cfg(dir,
                                 base + "head = plain\n"
                                        "neck = fpn\n"
                                        "box_loss = ciou\n"
                                        "seed = 7\n"
                                        "out_dir = " + dir + "/direct\n",
                                 "direct.cfg");
  REQUIRE(cmd_train(direct) == 0);
  CHECK(slurp(dir + "/grid/runs/d0b0w0_s7/metrics.csv") == slurp(dir + "/direct/metrics.csv"));
}

TEST_CASE("gradcheck command lists every registered check") {
  // direct registry check; the exit path is covered through cmd_gradcheck
  auto all = run_gradchecks("all");
  std::set<std::string> modules;
  for (const auto& r : all) modules.insert(r.module);
  CHECK(modules == std::set<std::string>{"tensor", "dahead", "bwfpn", "loss", "detector"});

  // a deliberately corrupted gradient rule must fail the suite
  register_gradcheck({"corrupted_fixture", "fixture", 1e-4, [] {
                        TensorFn wrong = [](const std::vector<Tensor>& xs) {
                          // gradient of mean computed as if it were sum
                          Tensor x = xs[0];
                          auto impl = x.impl();
                          return make_node(Shape{}, {mean_all(x).item()}, "bad_mean", {x},
                                           [impl](TensorImpl& self) {
                                             std::vector<double> g(impl->data.size(), self.grad[0]);
                                             push_grad(impl, self.id, std::move(g));
                                           });
                        };
                        Tensor at = Tensor::from({4}, {0.4, -0.2, 0.9, 1.3}, true);
                        return finite_diff_check(wrong, {at});
                      }});
  CHECK(cmd_gradcheck("fixture") == 2);
}

TEST_CASE("flops command accepts default config") { CHECK(cmd_flops("") == 0); }

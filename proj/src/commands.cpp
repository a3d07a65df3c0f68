#include "dabf/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dabf/checkpoint.hpp"
#include "dabf/flops.hpp"
#include "dabf/gradcheck.hpp"
#include "dabf/ops.hpp"
#include "dabf/runconfig.hpp"
#include "dabf/synth.hpp"
#include "dabf/train.hpp"

namespace fs = std::filesystem;

namespace dabf {

namespace {

std::string index_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "img_%05d", i);
  return buf;
}

int fail_usage(const std::string& msg) {
  std::cerr << "error: " << msg << "\n";
  return 1;
}

BBox parse_box(const std::string& s) {
  std::istringstream ss(s);
  std::string tok;
  std::vector<double> v;
  while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
  if (v.size() != 4) throw ConfigError("box must be cx,cy,w,h, got '" + s + "'");
  BBox b{v[0], v[1], v[2], v[3]};
  if (b.w <= 0 || b.h <= 0) throw ConfigError("box extents must be positive: '" + s + "'");
  return b;
}

}  // namespace

int cmd_synth(const std::string& config_path, const std::string& out_dir, int count) {
  try {
    RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
    if (count < 0) return fail_usage("synth: count must be >= 0");
    fs::create_directories(out_dir);
    SceneSpec spec = cfg.scene_spec();
    for (int i = 0; i < count; ++i) {
      Scene scene = generate_scene(spec, i);
      write_ppm((fs::path(out_dir) / (index_name(i) + ".ppm")).string(), scene.image);
      write_labels((fs::path(out_dir) / (index_name(i) + ".txt")).string(), scene.objects,
                   spec.image_size);
    }
    cfg.write_resolved(out_dir);
    std::cout << "synth: wrote " << count << " image/label pairs to " << out_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
}

int cmd_train(const std::string& config_path) {
  try {
    RunConfig cfg = RunConfig::from_file(config_path);
    ModelConfig mc = cfg.model_config();
    TrainConfig tc = cfg.train_config();
    Dataset train = load_dataset(cfg.get("train_dir"));
    Dataset val = load_dataset(cfg.get("val_dir"));
    std::string out_dir = cfg.get("out_dir");
    fs::create_directories(out_dir);
    cfg.write_resolved(out_dir);
    Model model(mc, tc.seed);
    TrainResult res = train_model(model, train, val, tc, out_dir);
    const EpochRow& last = res.rows.back();
    std::cout << "train: " << res.rows.size() << " epochs, final " << format_metrics_row(last);
    std::cout << "train: checkpoint " << res.checkpoint_path << "\n";
    return 0;
  } catch (const ConfigError& e) {
    return fail_usage(e.what());
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path) {
  try {
    RunConfig cfg = RunConfig::from_file(config_path);
    ModelConfig mc = cfg.model_config();
    TrainConfig tc = cfg.train_config();
    Dataset val = load_dataset(cfg.get("val_dir"));
    Model model(mc, 0);
    load_params(model, load_checkpoint(checkpoint_path));
    EvalResult ev = eval_model(model, val, tc);
    char buf[192];
    std::snprintf(buf, sizeof(buf), "precision,recall,map50,map5095\n%.6f,%.6f,%.6f,%.6f\n",
                  ev.precision, ev.recall, ev.map50, ev.map5095);
    std::cout << buf;
    std::string out_dir = cfg.get("out_dir");
    fs::create_directories(out_dir);
    cfg.write_resolved(out_dir);
    std::ofstream out(fs::path(out_dir) / "eval_metrics.csv", std::ios::binary);
    out << buf;
    return 0;
  } catch (const ConfigError& e) {
    return fail_usage(e.what());
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
}

int cmd_ablate(const std::string& config_path, const std::vector<uint64_t>& seeds) {
  try {
    if (seeds.empty()) return fail_usage("ablate: need at least one seed");
    RunConfig base = RunConfig::from_file(config_path);
    Dataset train = load_dataset(base.get("train_dir"));
    Dataset val = load_dataset(base.get("val_dir"));
    std::string out_dir = base.get("out_dir");
    fs::create_directories(out_dir);
    base.write_resolved(out_dir);

    struct Row {
      int dahead, bwfpn, wiou;
      uint64_t seed;
      EpochRow last;
      double gflops;
    };
    std::vector<Row> rows;
    for (int mask = 0; mask < 8; ++mask) {
      const int use_dahead = (mask >> 2) & 1;
      const int use_bwfpn = (mask >> 1) & 1;
      const int use_wiou = mask & 1;
      RunConfig cfg = base;
      cfg.set("head", use_dahead ? "dahead" : "plain");
      cfg.set("neck", use_bwfpn ? "bwfpn" : "fpn");
      cfg.set("box_loss", use_wiou ? "wiou3" : "ciou");
      ModelConfig mc = cfg.model_config();
      double gf = count_flops(mc).gflops();
      for (uint64_t seed : seeds) {
        RunConfig run_cfg = cfg;
        run_cfg.set("seed", std::to_string(seed));
        std::string tag = std::string("d") + std::to_string(use_dahead) + "b" +
                          std::to_string(use_bwfpn) + "w" + std::to_string(use_wiou) + "_s" +
                          std::to_string(seed);
        std::string run_dir = (fs::path(out_dir) / "runs" / tag).string();
        fs::create_directories(run_dir);
        run_cfg.set("out_dir", run_dir);
        run_cfg.write_resolved(run_dir);
        TrainConfig tc = run_cfg.train_config();
        Model model(mc, tc.seed);
        TrainResult res = train_model(model, train, val, tc, run_dir);
        rows.push_back({use_dahead, use_bwfpn, use_wiou, seed, res.rows.back(), gf});
        std::cout << "ablate: " << tag << " map50=" << res.rows.back().map50
                  << " map5095=" << res.rows.back().map5095 << "\n";
      }
    }

    auto median_of = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      size_t n = v.size();
      return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };

    // per-seed rows plus the per-configuration median of map5095
    std::ofstream runs_csv(fs::path(out_dir) / "ablation_runs.csv", std::ios::binary);
    runs_csv << "dahead,bwfpn,wiou,seed,precision,recall,map50,map5095,gflops,median_map5095\n";
    std::ofstream summary_csv(fs::path(out_dir) / "ablation_summary.csv", std::ios::binary);
    summary_csv << "dahead,bwfpn,wiou,precision,recall,map50,map5095,gflops\n";
    for (int mask = 0; mask < 8; ++mask) {
      const int use_dahead = (mask >> 2) & 1;
      const int use_bwfpn = (mask >> 1) & 1;
      const int use_wiou = mask & 1;
      std::vector<double> p, r, m50, m5095;
      double gf = 0;
      for (const Row& row : rows) {
        if (row.dahead != use_dahead || row.bwfpn != use_bwfpn || row.wiou != use_wiou) continue;
        p.push_back(row.last.precision);
        r.push_back(row.last.recall);
        m50.push_back(row.last.map50);
        m5095.push_back(row.last.map5095);
        gf = row.gflops;
      }
      double med5095 = median_of(m5095);
      for (const Row& row : rows) {
        if (row.dahead != use_dahead || row.bwfpn != use_bwfpn || row.wiou != use_wiou) continue;
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                      row.dahead, row.bwfpn, row.wiou,
                      static_cast<unsigned long long>(row.seed), row.last.precision,
                      row.last.recall, row.last.map50, row.last.map5095, row.gflops, med5095);
        runs_csv << buf;
      }
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", use_dahead,
                    use_bwfpn, use_wiou, median_of(p), median_of(r), median_of(m50), med5095, gf);
      summary_csv << buf;
    }
    std::cout << "ablate: wrote ablation_runs.csv and ablation_summary.csv to " << out_dir << "\n";
    return 0;
  } catch (const ConfigError& e) {
    return fail_usage(e.what());
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
}

int cmd_losslab(const std::string& pred_box, const std::string& gt_box, const std::string& grid,
                const std::string& out_path) {
  try {
    BBox pred = parse_box(pred_box);
    BBox gt = parse_box(gt_box);
    double extent = 0, step = 0;
    {
      std::istringstream ss(grid);
      std::string a, b;
      if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',')) {
        return fail_usage("losslab: grid must be extent,step");
      }
      extent = std::stod(a);
      step = std::stod(b);
    }
    if (step <= 0) return fail_usage("losslab: step must be positive");

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
      file.open(out_path, std::ios::binary);
      if (!file) return fail_usage("losslab: cannot open " + out_path);
      out = &file;
    }
    *out << "dx,dy";
    for (BoxLossVariant v : all_box_loss_variants()) {
      *out << "," << box_loss_name(v) << "," << box_loss_name(v) << "_grad";
    }
    *out << "\n";

    BoxLossState state;  // eval-mode defaults, running mean at init
    const long long n = static_cast<long long>(std::floor(extent / step + 1e-9));
    for (long long iy = -n; iy <= n; ++iy) {
      for (long long ix = -n; ix <= n; ++ix) {
        double dx = ix * step, dy = iy * step;
        char head[64];
        std::snprintf(head, sizeof(head), "%.6f,%.6f", dx, dy);
        *out << head;
        for (BoxLossVariant v : all_box_loss_variants()) {
          state.variant = v;
          Tensor p = Tensor::from(Shape{4}, {pred.cx + dx, pred.cy + dy, pred.w, pred.h}, true);
          Tensor loss = box_loss(p, gt, state);
          backward(loss);
          auto g = p.grad();
          double mag = std::sqrt(g[0] * g[0] + g[1] * g[1]);
          char cell[64];
          std::snprintf(cell, sizeof(cell), ",%.9f,%.9f", loss.item(), mag);
          *out << cell;
        }
        *out << "\n";
      }
    }
    return 0;
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
}

int cmd_gradcheck(const std::string& module) {
  try {
    std::vector<GradCheckResult> results = run_gradchecks(module);
    if (results.empty()) return fail_usage("gradcheck: no checks match module '" + module + "'");
    bool all_pass = true;
    std::printf("%-44s %-9s %-12s %-9s %s\n", "check", "module", "max_rel_err", "tol", "status");
    for (const GradCheckResult& r : results) {
      std::printf("%-44s %-9s %-12.3e %-9.0e %s\n", r.name.c_str(), r.module.c_str(),
                  r.max_rel_err, r.tol, r.pass ? "PASS" : "FAIL");
      all_pass = all_pass && r.pass;
    }
    if (!all_pass) {
      std::cerr << "gradcheck: FAILURES detected\n";
      return 2;
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_flops(const std::string& config_path) {
  try {
    RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
    FlopsReport rep = count_flops(cfg.model_config());
    std::printf("%-28s %14s\n", "layer", "flops");
    for (const LayerFlops& l : rep.layers) std::printf("%-28s %14lld\n", l.name.c_str(), l.flops);
    std::printf("%-28s %14lld (%.6f GFLOPs)\n", "total", rep.total(), rep.gflops());
    std::printf("convention: conv/linear = 2 FLOPs per MAC; other ops = 1 FLOP per element\n");
    return 0;
  } catch (const std::exception& e) {
    return fail_usage(e.what());
  }
}

}  // namespace dabf

#include "dabf/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <queue>
#include <unordered_set>

#include "dabf/checkpoint.hpp"
#include "dabf/ops.hpp"
#include "dabf/rng.hpp"

namespace fs = std::filesystem;

namespace dabf {

namespace {

// Differentiable decode of one positive cell into [cx, cy, w, h].
Tensor decode_cell(const Tensor& raw_map, const PositiveCell& p, int stride) {
  const int h = raw_map.dim(1), w = raw_map.dim(2);
  const double s = static_cast<double>(stride);
  auto channel_at = [&](int c) {
    return index_flat(raw_map, (static_cast<long long>(c) * h + p.cy) * w + p.cx);
  };
  Tensor l = mul_scalar(softplus(channel_at(0)), s);
  Tensor t = mul_scalar(softplus(channel_at(1)), s);
  Tensor r = mul_scalar(softplus(channel_at(2)), s);
  Tensor b = mul_scalar(softplus(channel_at(3)), s);
  double ccx = (p.cx + 0.5) * s, ccy = (p.cy + 0.5) * s;
  Tensor cx = add_scalar(mul_scalar(sub(r, l), 0.5), ccx);
  Tensor cy = add_scalar(mul_scalar(sub(b, t), 0.5), ccy);
  return stack0({cx, cy, add(l, r), add(t, b)});
}

void find_first_non_finite(const Tensor& loss) {
  // walk the graph, report the lowest-id node holding a non-finite value
  std::vector<TensorImpl*> stack{loss.impl().get()};
  std::unordered_set<TensorImpl*> seen{loss.impl().get()};
  TensorImpl* worst = nullptr;
  while (!stack.empty()) {
    TensorImpl* n = stack.back();
    stack.pop_back();
    bool bad = false;
    for (double v : n->data) bad = bad || !std::isfinite(v);
    if (bad && (!worst || n->id < worst->id)) worst = n;
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::string where = worst ? ("op '" + (worst->op.empty() ? std::string("leaf") : worst->op) +
                               "' shape " + shape_str(worst->shape) + " (node " +
                               std::to_string(worst->id) + ")")
                            : "loss root";
  throw std::runtime_error("training aborted: first non-finite tensor: " + where);
}

}  // namespace

LossParts detection_loss(const Model& model, const Sample& sample, const TrainConfig& tc,
                         const BoxLossState& state) {
  const ModelConfig& mc = model.config();
  std::vector<Tensor> maps = model.forward(sample.image);
  std::vector<int> strides = mc.strides();
  AssignResult ar = assign(sample.gts, strides, mc.input_size, mc.num_classes, mc.size_cutoff_base);

  LossParts parts;
  parts.num_positives = static_cast<int>(ar.positives.size());

  Tensor box_sum;
  for (const PositiveCell& p : ar.positives) {
    Tensor pred = decode_cell(maps[static_cast<size_t>(p.level)], p, strides[static_cast<size_t>(p.level)]);
    const GroundTruth& gt = sample.gts[static_cast<size_t>(p.gt_index)];
    Tensor l = box_loss(pred, gt.box, state);
    const auto& pv = pred.data();
    BBox pred_box{pv[0], pv[1], pv[2], pv[3]};
    parts.liou_batch.push_back(1.0 - iou_of(pred_box, gt.box));
    box_sum = box_sum.defined() ? add(box_sum, l) : l;
  }

  // positives averaged over positives; negatives averaged per level, then
  // over levels, so the few hard cells of a coarse grid are not drowned
  // by the many easy ones of a fine grid
  Tensor pos_sum, neg_mean;
  for (size_t lvl = 0; lvl < maps.size(); ++lvl) {
    const Tensor& m = maps[lvl];
    const int g = m.dim(1);
    const long long plane = static_cast<long long>(g) * g;
    Tensor cls = slice1d(reshape(m, Shape{static_cast<int>(m.numel())}),
                         static_cast<int>(4 * plane), static_cast<int>(mc.num_classes * plane));
    const std::vector<double>& target = ar.cls_targets[lvl];
    Tensor bce = bce_with_logits(cls, target);
    std::vector<double> pos_mask(target), neg_mask(target.size());
    long long level_negs = 0;
    for (size_t i = 0; i < target.size(); ++i) {
      neg_mask[i] = 1.0 - target[i];
      level_negs += target[i] == 0.0 ? 1 : 0;
    }
    Shape mask_shape{static_cast<int>(target.size())};
    Tensor pos_part = sum_all(mul(bce, Tensor::from(mask_shape, std::move(pos_mask))));
    Tensor neg_part = sum_all(mul(bce, Tensor::from(mask_shape, std::move(neg_mask))));
    if (level_negs > 0) neg_part = mul_scalar(neg_part, 1.0 / static_cast<double>(level_negs));
    pos_sum = pos_sum.defined() ? add(pos_sum, pos_part) : pos_part;
    neg_mean = neg_mean.defined() ? add(neg_mean, neg_part) : neg_part;
  }

  const double inv_pos = 1.0 / std::max(1, parts.num_positives);
  Tensor cls_loss = add(mul_scalar(pos_sum, inv_pos),
                        mul_scalar(neg_mean, 1.0 / static_cast<double>(maps.size())));
  if (box_sum.defined()) {
    parts.total = add(mul_scalar(box_sum, tc.lambda_box * inv_pos), mul_scalar(cls_loss, tc.lambda_cls));
  } else {
    parts.total = mul_scalar(cls_loss, tc.lambda_cls);
  }
  return parts;
}

void Sgd::step(std::vector<Tensor>& params) {
  if (velocity_.empty()) {
    velocity_.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i].data().size(), 0.0);
  }
  for (size_t i = 0; i < params.size(); ++i) {
    std::vector<double> g = params[i].grad();
    auto& v = velocity_[i];
    auto& w = params[i].leaf_data();
    for (size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      w[j] -= lr_ * v[j] + lr_ * weight_decay_ * w[j];
    }
    params[i].zero_grad();
  }
}

EvalResult eval_model(Model& model, const Dataset& val, const TrainConfig& tc) {
  const ModelConfig& mc = model.config();
  std::vector<int> strides = mc.strides();
  std::vector<Detection> all;
  std::vector<std::vector<GroundTruth>> gts;
  for (size_t i = 0; i < val.size(); ++i) {
    std::vector<Tensor> raw = model.forward(val[i].image);
    std::vector<Tensor> decoded = activate_maps(raw, strides);
    std::vector<Detection> dets = decode_and_nms(decoded, strides, tc.conf_thresh, tc.nms_iou);
    for (Detection& d : dets) {
      d.image_index = static_cast<int>(i);
      all.push_back(d);
    }
    gts.push_back(val[i].gts);
  }
  return evaluate(all, gts, mc.num_classes);
}

std::string format_metrics_row(const EpochRow& r) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.epoch, r.loss, r.precision,
                r.recall, r.map50, r.map5095);
  return buf;
}

TrainResult train_model(Model& model, const Dataset& train, const Dataset& val,
                        const TrainConfig& tc, const std::string& out_dir) {
  if (train.empty()) throw std::invalid_argument("train_model: empty training set");
  fs::create_directories(out_dir);

  std::vector<Tensor> params;
  model.for_each_param([&params](const std::string&, Tensor& t) { params.push_back(t); });
  Sgd opt(tc.lr, tc.momentum, tc.weight_decay);
  BoxLossState state = tc.loss_state;
  state.training = true;
  const bool track_mean = state.variant == BoxLossVariant::kWiou2 ||
                          state.variant == BoxLossVariant::kWiou3;

  TrainResult result;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng shuffle_rng(Rng::mix(tc.seed, 0x45504f43ULL + static_cast<uint64_t>(epoch)));
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i) - 1))]);
    }

    double epoch_loss = 0.0;
    int steps = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(tc.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(tc.batch_size));
      Tensor batch_total;
      std::vector<double> liou_all;
      for (size_t bi = start; bi < end; ++bi) {
        LossParts parts = detection_loss(model, train[order[bi]], tc, state);
        liou_all.insert(liou_all.end(), parts.liou_batch.begin(), parts.liou_batch.end());
        batch_total = batch_total.defined() ? add(batch_total, parts.total) : parts.total;
      }
      Tensor loss = mul_scalar(batch_total, 1.0 / static_cast<double>(end - start));
      if (!std::isfinite(loss.item())) find_first_non_finite(loss);
      backward(loss);
      opt.step(params);
      if (track_mean && !liou_all.empty()) update_state(state, liou_all);
      epoch_loss += loss.item();
      ++steps;
    }

    // Evaluate through an f32 round trip so checkpoint evals match exactly.
    EpochRow row;
    row.epoch = epoch;
    row.loss = epoch_loss / std::max(1, steps);
    {
      Model eval_copy(model.config(), 0);
      load_params(eval_copy, snapshot_params(model));
      TrainConfig etc = tc;
      EvalResult ev = eval_model(eval_copy, val, etc);
      row.precision = ev.precision;
      row.recall = ev.recall;
      row.map50 = ev.map50;
      row.map5095 = ev.map5095;
    }
    result.rows.push_back(row);
  }

  result.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  {
    std::ofstream out(result.metrics_path, std::ios::binary);
    out << kMetricsHeader;
    for (const EpochRow& r : result.rows) out << format_metrics_row(r);
  }
  result.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
  save_checkpoint(result.checkpoint_path, snapshot_params(model));
  return result;
}

}  // namespace dabf

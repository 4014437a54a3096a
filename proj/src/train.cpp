#include "fmamba/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "fmamba/ops.hpp"
#include "fmamba/tape.hpp"

namespace fmamba {
namespace {

std::string loss_summary(const LossBreakdown& lb) {
  std::ostringstream os;
  os.precision(17);
  os << "pixel=" << lb.pixel << " grad=" << lb.grad << " ssim=" << lb.ssim;
  return os.str();
}

}  // namespace

void write_log_header(std::ostream& os) { os << "step,total,pixel,grad,ssim,wall_ms\n"; }

void write_log_row(std::ostream& os, const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.3f\n", static_cast<long long>(r.step), r.total,
                r.pixel, r.grad, r.ssim, r.wall_ms);
  os << buf;
}

Datasets load_datasets(const TrainConfig& cfg) {
  std::vector<ImagePair> all;
  const int dims = cfg.model.dims;
  if (cfg.data.source == DataSource::Synthetic) {
    for (int i = 0; i < cfg.data.synth_count; ++i) {
      ImagePair p = synth_pair(derive_seed(cfg.data.synth_seed, static_cast<std::uint64_t>(i)), dims,
                               cfg.data.synth_size);
      p.id = "synth" + std::to_string(i);
      all.push_back(std::move(p));
    }
  } else {
    for (const auto& e : read_manifest(cfg.data.manifest)) all.push_back(load_pair(e, dims));
  }
  const SplitCounts& c = cfg.data.split;
  Datasets out;
  if (c.train == 0 && c.validation == 0 && c.test == 0) {
    out.train = std::move(all);
    return out;
  }
  std::vector<std::string> ids;
  for (const auto& p : all) ids.push_back(p.id);
  const DatasetSplit split = split_dataset(ids, c, cfg.data.split_seed);
  auto pick = [&](const std::vector<std::string>& want) {
    std::vector<ImagePair> v;
    for (const auto& id : want)
      for (const auto& p : all)
        if (p.id == id) v.push_back(p);
    return v;
  };
  out.train = pick(split.train);
  out.validation = pick(split.validation);
  out.test = pick(split.test);
  return out;
}

Trainer::Trainer(TrainConfig cfg, std::vector<ImagePair> data) : data_(std::move(data)) {
  cfg.validate();
  state_.cfg = cfg;
  state_.model = build_model(cfg.model);
  state_.adam.reset(state_.model.named_parameters());
  state_.rng = Rng(derive_seed(cfg.seed, 0xba7c));
  check_data();
}

Trainer::Trainer(TrainState state, std::vector<ImagePair> data) : state_(std::move(state)), data_(std::move(data)) {
  if (state_.adam.m.empty()) state_.adam.reset(state_.model.named_parameters());
  check_data();
}

void Trainer::check_data() const {
  if (data_.empty()) throw ValidationError("training set is empty");
  const int dims = state_.cfg.model.dims;
  for (const auto& p : data_) {
    if (static_cast<int>(p.a.rank()) != dims + 1) {
      throw ShapeError("pair " + p.id + " has shape " + shape_str(p.a.shape()) + " but the model is " +
                       std::to_string(dims) + "D");
    }
    if (p.a.shape() != data_[0].a.shape() || p.b.shape() != data_[0].a.shape()) {
      throw ShapeError("pair " + p.id + " has shape " + shape_str(p.a.shape()) + ", expected " +
                       shape_str(data_[0].a.shape()) + " like the rest of the training set");
    }
  }
}

StepRecord Trainer::step() {
  const auto t0 = std::chrono::steady_clock::now();
  const int batch = state_.cfg.effective_batch_size();
  std::vector<Tensor> xa, xb;
  for (int i = 0; i < batch; ++i) {
    const auto k = static_cast<std::size_t>(state_.rng.below(data_.size()));
    xa.push_back(data_[k].a);
    xb.push_back(data_[k].b);
  }
  const Tensor x1 = stack_batch(xa), x2 = stack_batch(xb);

  NamedParams params = state_.model.named_parameters();
  set_requires_grad(params, true);
  GradTape tape;
  LossBreakdown lb;
  {
    TapeScope scope(tape);
    const Tensor fused = forward_fuse(x1, x2, state_.model);
    lb = total_loss(fused, x1, x2, state_.cfg.loss, state_.cfg.model.dims);
  }
  const std::int64_t step_no = state_.adam.step + 1;
  const Real total = lb.total.item();
  if (!std::isfinite(total)) {
    throw NumericalError("non-finite loss at step " + std::to_string(step_no) + ": total=" + std::to_string(total) +
                         " " + loss_summary(lb));
  }
  const Gradients g = backward(tape, lb.total);
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const auto& [name, t] : params) {
    grads.push_back(g.of(*t));
    if (!grads.back().all_finite()) {
      throw NumericalError("non-finite gradient for " + name + " at step " + std::to_string(step_no) + " " +
                           loss_summary(lb));
    }
  }
  set_requires_grad(params, false);
  adam_step(params, grads, state_.adam, state_.cfg.adam);

  StepRecord r;
  r.step = state_.adam.step;
  r.total = total;
  r.pixel = lb.pixel;
  r.grad = lb.grad;
  r.ssim = lb.ssim;
  r.wall_ms = std::chrono::duration<Real, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

TrainLog Trainer::run(std::int64_t n, const std::function<void(const StepRecord&)>& on_step) {
  TrainLog log;
  log.reserve(static_cast<std::size_t>(std::max<std::int64_t>(n, 0)));
  const std::int64_t every = state_.cfg.checkpoint_every;
  for (std::int64_t i = 0; i < n; ++i) {
    log.push_back(step());
    if (on_step) on_step(log.back());
    if (every > 0 && state_.adam.step % every == 0) save(state_.cfg.checkpoint_path);
  }
  return log;
}

Tensor fuse_pair(const Tensor& a, const Tensor& b, const FusionModel& model) {
  if (a.shape() != b.shape()) {
    throw ShapeError("input shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (static_cast<int>(a.rank()) != model.cfg.dims + 1) {
    throw ShapeError("model is " + std::to_string(model.cfg.dims) + "D but input has shape " + shape_str(a.shape()));
  }
  Shape s = a.shape();
  s.insert(s.begin(), 1);
  const Tensor out = forward_fuse(ops::reshape(a.detach(), s), ops::reshape(b.detach(), s), model);
  return ops::reshape(out, a.shape()).detach();
}

}  // namespace fmamba

#include "detach/train/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace detach::train {

namespace ops = ad;

void LossWeights::validate() const {
  const std::pair<const char*, double> fields[] = {{"quality", quality},   {"decouple", decouple},
                                                   {"temporal", temporal}, {"semantic", semantic},
                                                   {"alpha", alpha},       {"beta", beta}};
  for (const auto& [name, v] : fields) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::invalid_argument(std::string("lambda.") + name + ": must be a non-negative number");
    }
  }
}

Var reconstruction_loss(Var recon, Var target) {
  if (recon.shape() != target.shape()) throw ad::shape_error("reconstruction_loss", recon.shape(), target.shape());
  const Var sq = ops::sum(ops::square(ops::sub(recon, target)), recon.rank() - 1);
  return ops::mean(sq);
}

Var temporal_prediction_loss(Var z, const std::function<Var(Var)>& pred) {
  if (z.rank() != 3) throw ad::ShapeError("temporal_prediction_loss: need (B, T, d), got " + ad::shape_to_string(z.shape()));
  const std::size_t T = z.dim(1);
  if (T < 2) throw std::invalid_argument("temporal_prediction_loss: series length must be at least 2");
  const Var now = ops::slice(z, 1, 0, T - 1);
  const Var next = ops::slice(z, 1, 1, T - 1);
  const Var err = ops::sum(ops::square(ops::sub(pred(now), next)), 2);  // (B, T-1)
  return ops::mean(ops::sum(err, 1));
}

Var loss_env_pretrain(const Ctx& c, const ModelConfig& cfg, Variant v, Var obs_env) {
  const auto enc = model::env_encode(c, cfg, v, obs_env);
  return reconstruction_loss(model::mlp2(c, enc.z_env, "aux.dec_env"), obs_env);
}

Var loss_self_pretrain(const Ctx& c, const ModelConfig& cfg, Variant v, Var obs_self) {
  const auto enc = model::self_encode(c, cfg, v, obs_self);
  return temporal_prediction_loss(enc.z_self, [&](Var z) { return model::mlp2(c, z, "aux.f_pred"); });
}

Var loss_fusion_stage(const Ctx& c, Var task_loss, const Forward& f, const LossWeights& w, const TargetProvider& target) {
  if (!c.tree.frozen(ad::ParamGroup::kEnv) || !c.tree.frozen(ad::ParamGroup::kSelf)) {
    throw std::logic_error("loss_fusion_stage: env and self encoders must be frozen");
  }
  w.validate();
  if (w.quality == 0.0) return task_loss;
  if (!target) throw std::invalid_argument("loss_fusion_stage: quality weight set but no target provider");
  Tensor z = target(f.f_cross.value());
  if (z.shape() != f.f_cross.shape()) throw ad::shape_error("fusion quality target", f.f_cross.shape(), z.shape());
  const Var q = reconstruction_loss(f.f_cross, c.c(std::move(z)));
  return ops::add(task_loss, ops::scale(q, w.quality));
}

Var decouple_penalty(Var a, Var b, std::size_t* zero_variance_columns) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) throw ad::shape_error("decouple_penalty", a.shape(), b.shape());
  const std::size_t n = a.dim(0);
  if (n < 8) throw std::invalid_argument("decouple_penalty: need a batch of at least 8 for correlation estimates");
  if (zero_variance_columns != nullptr) {
    std::size_t zeros = 0;
    for (const Var* v : {&a, &b}) {
      const Tensor& t = v->value();
      const std::size_t d = t.dim(1);
      for (std::size_t j = 0; j < d; ++j) {
        bool constant = true;
        for (std::size_t i = 1; i < n && constant; ++i) constant = t.at(i, j) == t.at(0, j);
        zeros += constant;
      }
    }
    *zero_variance_columns = zeros;
  }
  // Rows of the transposes are features; layer_norm standardizes each over
  // the batch (population variance). A constant row maps to zeros.
  const Var sa = ops::layer_norm(ops::transpose(a), 1e-12);
  const Var sb = ops::layer_norm(ops::transpose(b), 1e-12);
  const Var corr = ops::scale(ops::matmul(sa, ops::transpose(sb)), 1.0 / static_cast<double>(n));
  return ops::sum(ops::square(corr));
}

Var temporal_penalty(Var z) {
  return temporal_prediction_loss(z, [](Var x) { return x; });
}

Regularizers specialization_regularizers(const Ctx& c, const Forward& f, const model::Batch& batch, const LossWeights& w) {
  Regularizers r;
  const std::size_t T = f.env.z_env.dim(1);
  const Var ze = ops::reshape(ops::slice(f.env.z_env, 1, T - 1, 1), {f.env.z_env.dim(0), f.env.z_env.dim(2)});
  const Var zs = ops::reshape(ops::slice(f.self.z_self, 1, T - 1, 1), {f.self.z_self.dim(0), f.self.z_self.dim(2)});
  r.decouple = decouple_penalty(ze, zs, &r.zero_variance_columns);
  r.temporal = temporal_penalty(f.self.z_self);
  const Var rec_env = reconstruction_loss(model::mlp2(c, f.env.z_env, "aux.dec_env"), c.c(batch.env));
  const Var rec_self = reconstruction_loss(model::mlp2(c, f.self.z_self, "aux.dec_self"), c.c(batch.self));
  r.semantic = ops::add(ops::scale(rec_env, w.alpha), ops::scale(rec_self, w.beta));
  return r;
}

Var loss_joint(Var task_loss, const Regularizers& r, const LossWeights& w) {
  w.validate();
  Var total = task_loss;
  total = ops::add(total, ops::scale(r.decouple, w.decouple));
  total = ops::add(total, ops::scale(r.temporal, w.temporal));
  total = ops::add(total, ops::scale(r.semantic, w.semantic));
  return total;
}

}  // namespace detach::train

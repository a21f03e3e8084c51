#include "abmt/losses.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace abmt {

namespace {

constexpr double kDistFloor = 1e-12;  // below this, distance gradients vanish
constexpr double kLogClamp = 1e-12;

struct MinedPair {
  int pos = -1;
  int neg = -1;
  double d_pos = 0.0;
  double d_neg = 0.0;
  bool valid = false;
};

// Hardest positive = max distance over same label, hardest negative = min
// distance over different labels. Ties resolve to the first index.
std::vector<MinedPair> mine_hardest(const Tensor& features, std::span<const int> labels,
                                    std::vector<double>* dist_out) {
  const int n = features.dim(0);
  const int d = features.dim(1);
  const double* f = features.data().data();
  std::vector<double> dist(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double acc = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = f[static_cast<std::size_t>(i) * d + k] - f[static_cast<std::size_t>(j) * d + k];
        acc += diff * diff;
      }
      dist[static_cast<std::size_t>(i) * n + j] = std::sqrt(acc);
    }
  }
  std::vector<MinedPair> mined(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    MinedPair m;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dij = dist[static_cast<std::size_t>(i) * n + j];
      if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
        if (m.pos < 0 || dij > m.d_pos) {
          m.pos = j;
          m.d_pos = dij;
        }
      } else {
        if (m.neg < 0 || dij < m.d_neg) {
          m.neg = j;
          m.d_neg = dij;
        }
      }
    }
    m.valid = m.pos >= 0 && m.neg >= 0;
    mined[static_cast<std::size_t>(i)] = m;
  }
  if (dist_out) *dist_out = std::move(dist);
  return mined;
}

// d = ||F_i - F_j||; adds coef * d(d)/dF into the gradient buffer.
void add_distance_grad(std::vector<double>& dx, const double* f, int d, int i, int j, double dist,
                       double coef) {
  if (dist < kDistFloor) return;
  const double inv = coef / dist;
  for (int k = 0; k < d; ++k) {
    const double diff = f[static_cast<std::size_t>(i) * d + k] - f[static_cast<std::size_t>(j) * d + k];
    dx[static_cast<std::size_t>(i) * d + k] += inv * diff;
    dx[static_cast<std::size_t>(j) * d + k] -= inv * diff;
  }
}

void check_2d(const Tensor& t, const char* op) {
  if (!t.defined() || t.ndim() != 2) throw DimensionError(std::string(op) + ": expected a 2-d tensor");
}

}  // namespace

Tensor cross_entropy(Graph* g, const Tensor& log_probs, std::span<const int> labels) {
  check_2d(log_probs, "cross_entropy");
  const int n = log_probs.dim(0), c = log_probs.dim(1);
  if (static_cast<int>(labels.size()) != n) throw DimensionError("cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= c) throw ContractError("cross_entropy: label out of range");
  const double* lp = log_probs.data().data();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc -= lp[static_cast<std::size_t>(i) * c + labels[static_cast<std::size_t>(i)]];
  Tensor out = Tensor::scalar(acc / n);
  check_finite(out, "cross_entropy");
  if (g && g->tracks(log_probs)) {
    g->track(out);
    Tensor lpc = log_probs, oc = out;
    std::vector<int> lab(labels.begin(), labels.end());
    g->record("cross_entropy", [lpc, oc, lab = std::move(lab), n, c]() mutable {
      if (!oc.has_grad()) return;
      const double go = oc.grad()[0];
      std::vector<double> dx(lpc.numel(), 0.0);
      for (int i = 0; i < n; ++i)
        dx[static_cast<std::size_t>(i) * c + lab[static_cast<std::size_t>(i)]] -= go / n;
      lpc.accumulate_grad(dx);
    });
  }
  return out;
}

Tensor batch_hard_triplet(Graph* g, const Tensor& features, std::span<const int> labels, double margin) {
  check_2d(features, "batch_hard_triplet");
  const int n = features.dim(0), d = features.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw DimensionError("batch_hard_triplet: label count mismatch");
  std::unordered_set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2)
    throw ContractError("batch_hard_triplet: batch has a single identity, no negatives");

  auto mined = mine_hardest(features, labels, nullptr);
  int valid = 0;
  double acc = 0.0;
  for (const auto& m : mined) {
    if (!m.valid) continue;
    ++valid;
    acc += std::max(0.0, margin + m.d_pos - m.d_neg);
  }
  if (valid == 0) throw ContractError("batch_hard_triplet: no anchor has both a positive and a negative");
  Tensor out = Tensor::scalar(acc / valid);
  check_finite(out, "batch_hard_triplet");

  if (g && g->tracks(features)) {
    g->track(out);
    Tensor fc = features, oc = out;
    g->record("batch_hard_triplet",
              [fc, oc, mined = std::move(mined), margin, n, d, valid]() mutable {
                if (!oc.has_grad()) return;
                const double go = oc.grad()[0];
                const double* f = fc.data().data();
                std::vector<double> dx(fc.numel(), 0.0);
                for (int i = 0; i < n; ++i) {
                  const auto& m = mined[static_cast<std::size_t>(i)];
                  if (!m.valid || margin + m.d_pos - m.d_neg <= 0.0) continue;
                  const double s = go / valid;
                  add_distance_grad(dx, f, d, i, m.pos, m.d_pos, s);
                  add_distance_grad(dx, f, d, i, m.neg, m.d_neg, -s);
                }
                fc.accumulate_grad(dx);
              });
  }
  return out;
}

Tensor soft_cross_entropy(Graph* g, const Tensor& teacher_log_probs, const Tensor& student_log_probs) {
  check_2d(teacher_log_probs, "soft_cross_entropy");
  check_2d(student_log_probs, "soft_cross_entropy");
  if (teacher_log_probs.shape() != student_log_probs.shape())
    throw DimensionError("soft_cross_entropy: shape mismatch");
  const int n = teacher_log_probs.dim(0);
  const double* t = teacher_log_probs.data().data();
  const double* s = student_log_probs.data().data();
  double acc = 0.0;
  for (std::size_t i = 0; i < teacher_log_probs.numel(); ++i) acc -= std::exp(t[i]) * s[i];
  Tensor out = Tensor::scalar(acc / n);
  check_finite(out, "soft_cross_entropy");
  if (g && g->tracks(student_log_probs)) {
    g->track(out);
    Tensor tc = teacher_log_probs, sc = student_log_probs, oc = out;
    g->record("soft_cross_entropy", [tc, sc, oc, n]() mutable {
      if (!oc.has_grad()) return;
      const double go = oc.grad()[0];
      const double* t2 = tc.data().data();
      std::vector<double> dx(sc.numel());
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = -go * std::exp(t2[i]) / n;
      sc.accumulate_grad(dx);
    });
  }
  return out;
}

SoftTripletDistance softmax_triplet_T(Graph* g, const Tensor& features, std::span<const int> labels) {
  check_2d(features, "softmax_triplet_T");
  const int n = features.dim(0), d = features.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw DimensionError("softmax_triplet_T: label count mismatch");
  auto mined = mine_hardest(features, labels, nullptr);

  SoftTripletDistance result;
  result.t = Tensor::zeros({n});
  result.valid.assign(static_cast<std::size_t>(n), 0);
  double* tv = result.t.data_mut().data();
  for (int i = 0; i < n; ++i) {
    const auto& m = mined[static_cast<std::size_t>(i)];
    if (!m.valid) {
      tv[i] = 0.5;
      continue;
    }
    result.valid[static_cast<std::size_t>(i)] = 1;
    // T = sigma(d_pos - d_neg), computed in the overflow-safe direction
    const double delta = m.d_pos - m.d_neg;
    tv[i] = delta >= 0.0 ? 1.0 / (1.0 + std::exp(-delta)) : std::exp(delta) / (1.0 + std::exp(delta));
  }
  check_finite(result.t, "softmax_triplet_T");

  if (g && g->tracks(features)) {
    g->track(result.t);
    Tensor fc = features, tc = result.t;
    g->record("softmax_triplet_T", [fc, tc, mined = std::move(mined), n, d]() mutable {
      if (!tc.has_grad()) return;
      const double* go = tc.grad().data();
      const double* tval = tc.data().data();
      const double* f = fc.data().data();
      std::vector<double> dx(fc.numel(), 0.0);
      for (int i = 0; i < n; ++i) {
        const auto& m = mined[static_cast<std::size_t>(i)];
        if (!m.valid || go[i] == 0.0) continue;
        const double c = go[i] * tval[i] * (1.0 - tval[i]);
        add_distance_grad(dx, f, d, i, m.pos, m.d_pos, c);
        add_distance_grad(dx, f, d, i, m.neg, m.d_neg, -c);
      }
      fc.accumulate_grad(dx);
    });
  }
  return result;
}

Tensor soft_triplet(Graph* g, const Tensor& t_teacher, const Tensor& t_student,
                    std::span<const std::uint8_t> valid, bool literal_form) {
  if (!t_teacher.defined() || !t_student.defined() || t_teacher.ndim() != 1 || t_student.ndim() != 1)
    throw DimensionError("soft_triplet: expected 1-d tensors");
  if (t_teacher.dim(0) != t_student.dim(0)) throw DimensionError("soft_triplet: length mismatch");
  const int n = t_teacher.dim(0);
  if (!valid.empty() && static_cast<int>(valid.size()) != n)
    throw DimensionError("soft_triplet: valid mask length mismatch");

  const auto clamp01 = [](double v) { return std::clamp(v, kLogClamp, 1.0 - kLogClamp); };
  const double* tt = t_teacher.data().data();
  const double* ts = t_student.data().data();
  int m_count = 0;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    if (!valid.empty() && !valid[static_cast<std::size_t>(i)]) continue;
    ++m_count;
    const double tp = clamp01(tt[i]);
    const double sp = clamp01(ts[i]);
    acc -= tp * std::log(sp);
    if (!literal_form) acc -= (1.0 - tp) * std::log(1.0 - sp);
  }
  if (m_count == 0) return Tensor::scalar(0.0);
  Tensor out = Tensor::scalar(acc / m_count);
  check_finite(out, "soft_triplet");

  if (g && g->tracks(t_student)) {
    g->track(out);
    Tensor ttc = t_teacher, tsc = t_student, oc = out;
    std::vector<std::uint8_t> mask(valid.begin(), valid.end());
    g->record("soft_triplet",
              [ttc, tsc, oc, mask = std::move(mask), literal_form, n, m_count, clamp01]() mutable {
                if (!oc.has_grad()) return;
                const double go = oc.grad()[0];
                const double* tt2 = ttc.data().data();
                const double* ts2 = tsc.data().data();
                std::vector<double> dx(tsc.numel(), 0.0);
                for (int i = 0; i < n; ++i) {
                  if (!mask.empty() && !mask[static_cast<std::size_t>(i)]) continue;
                  const double raw = ts2[i];
                  if (raw < kLogClamp || raw > 1.0 - kLogClamp) continue;  // clamped flat region
                  const double tp = clamp01(tt2[i]);
                  double dd = -tp / raw;
                  if (!literal_form) dd += (1.0 - tp) / (1.0 - raw);
                  dx[static_cast<std::size_t>(i)] = go * dd / m_count;
                }
                tsc.accumulate_grad(dx);
              });
  }
  return out;
}

Tensor source_objective(Graph* g, const EncoderOutput& out, std::span<const int> labels,
                        const LossWeights& w) {
  Tensor ce = add(g, cross_entropy(g, out.p_a, labels), cross_entropy(g, out.p_m, labels));
  Tensor tri = add(g, batch_hard_triplet(g, out.f_a, labels, w.triplet_margin),
                   batch_hard_triplet(g, out.f_m, labels, w.triplet_margin));
  return add(g, scale(g, ce, w.lambda_ce_s), scale(g, tri, w.lambda_tri_s));
}

Tensor target_objective(Graph* g, const EncoderOutput& student, const EncoderOutput& teacher,
                        std::span<const int> labels, const LossWeights& w,
                        const TargetLossOptions& opt) {
  if (g) {
    for (const Tensor* t : {&teacher.f_a, &teacher.f_m, &teacher.p_a, &teacher.p_m}) {
      if (t->defined() && g->tracks(*t))
        throw ContractError("target_objective: teacher outputs must be detached");
    }
  }

  Tensor ce = add(g, cross_entropy(g, student.p_a, labels), cross_entropy(g, student.p_m, labels));

  const Tensor& sup_for_m = opt.cross_branch ? teacher.p_a : teacher.p_m;
  const Tensor& sup_for_a = opt.cross_branch ? teacher.p_m : teacher.p_a;
  Tensor sce = add(g, soft_cross_entropy(g, sup_for_m, student.p_m),
                   soft_cross_entropy(g, sup_for_a, student.p_a));

  SoftTripletDistance t_teacher_a = softmax_triplet_T(nullptr, teacher.f_a, labels);
  SoftTripletDistance t_teacher_m = softmax_triplet_T(nullptr, teacher.f_m, labels);
  SoftTripletDistance t_student_a = softmax_triplet_T(g, student.f_a, labels);
  SoftTripletDistance t_student_m = softmax_triplet_T(g, student.f_m, labels);
  const Tensor& t_sup_for_m = opt.cross_branch ? t_teacher_a.t : t_teacher_m.t;
  const Tensor& t_sup_for_a = opt.cross_branch ? t_teacher_m.t : t_teacher_a.t;
  Tensor stri = add(g,
                    soft_triplet(g, t_sup_for_m, t_student_m.t, t_student_m.valid,
                                 opt.literal_soft_triplet),
                    soft_triplet(g, t_sup_for_a, t_student_a.t, t_student_a.valid,
                                 opt.literal_soft_triplet));

  Tensor total = add(g, scale(g, ce, w.lambda_ce_t), scale(g, sce, w.lambda_sce_t));
  return add(g, total, scale(g, stri, w.lambda_stri_t));
}

}  // namespace abmt

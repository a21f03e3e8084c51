#include "abmt/mean_teacher.hpp"

#include <cmath>
#include <vector>

#include "abmt/dataset.hpp"
#include "abmt/kernels.hpp"

namespace abmt {

TeacherState init_teacher(const EncoderState& student, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ParameterError("init_teacher: alpha must be in [0, 1]");
  TeacherState t;
  t.params = student.clone();
  t.alpha = alpha;
  t.step = 0;
  return t;
}

void ema_update(TeacherState& teacher, const EncoderState& student) {
  std::vector<Tensor> tp = teacher.params.all_params();
  std::vector<Tensor> sp = student.all_params();
  if (tp.size() != sp.size()) throw ContractError("ema_update: parameter lists differ in length");
  const double a = teacher.alpha;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    if (tp[k].shape() != sp[k].shape()) throw ContractError("ema_update: parameter shape mismatch");
    double* tv = tp[k].data_mut().data();
    const double* sv = sp[k].data().data();
    for (std::size_t i = 0; i < tp[k].numel(); ++i) tv[i] = a * tv[i] + (1.0 - a) * sv[i];
  }
  teacher.step += 1;
}

double feature_divergence(const Tensor& sig_x, const Tensor& sig_y) {
  if (!sig_x.defined() || !sig_y.defined() || sig_x.ndim() != 2 || sig_y.ndim() != 2)
    throw DimensionError("feature_divergence: expected 2-d tensors");
  if (sig_x.shape() != sig_y.shape()) throw DimensionError("feature_divergence: shape mismatch");
  const int n = sig_x.dim(0), d = sig_x.dim(1);
  const double* xv = sig_x.data().data();
  const double* yv = sig_y.data().data();
  std::vector<double> row_norm(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](int i) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = xv[static_cast<std::size_t>(i) * d + j] - yv[static_cast<std::size_t>(i) * d + j];
      acc += diff * diff;
    }
    row_norm[static_cast<std::size_t>(i)] = std::sqrt(acc);
  });
  double total = 0.0;
  for (double v : row_norm) total += v;
  return total;
}

DivergenceTrace record_divergence(const TeacherState& teacher, const EncoderState& student,
                                  const Dataset& target_train) {
  const Tensor batch = target_train.split_tensor(Split::train);
  const EncoderOutput t_out = forward(teacher.params, batch, nullptr);
  const EncoderOutput s_out = forward(student, batch, nullptr);

  DivergenceTrace trace;
  const Tensor t_na = l2_normalize(nullptr, t_out.f_a, kSignatureNormEps);
  const Tensor t_nm = l2_normalize(nullptr, t_out.f_m, kSignatureNormEps);
  trace.cross_branch_distance = feature_divergence(t_na, t_nm);
  trace.teacher_student_distance =
      feature_divergence(signature(teacher.params, t_out), signature(student, s_out));
  return trace;
}

}  // namespace abmt

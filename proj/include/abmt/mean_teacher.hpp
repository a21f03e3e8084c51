#pragma once

#include "abmt/encoder.hpp"

namespace abmt {

struct Dataset;  // dataset.hpp

// Teacher whose weights are the exponential moving average of a student's.
// theta'_t = alpha * theta'_{t-1} + (1 - alpha) * theta_t, theta'_0 = theta_0.
struct TeacherState {
  EncoderState params;
  double alpha = 0.999;
  long step = 0;
};

struct DivergenceTrace {
  int epoch = 0;
  double cross_branch_distance = 0.0;
  double teacher_student_distance = 0.0;
};

TeacherState init_teacher(const EncoderState& student, double alpha);

// One EMA sweep over all matched parameters; call once per optimizer step.
void ema_update(TeacherState& teacher, const EncoderState& student);

// Sum over rows of the Euclidean distance between matching rows.
double feature_divergence(const Tensor& sig_x, const Tensor& sig_y);

// Inference-only diagnostics over the full target training set:
// cross-branch distance between the teacher's normalized branch features, and
// teacher-vs-student signature distance.
DivergenceTrace record_divergence(const TeacherState& teacher, const EncoderState& student,
                                  const Dataset& target_train);

}  // namespace abmt

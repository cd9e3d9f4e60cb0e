#pragma once

#include "lf2/model_state.hpp"

namespace lf2 {

// Deep copy of the pretrained student; the teacher never receives gradients.
ModelState init_teacher(const ModelState& student);

// teacher <- momentum * teacher + (1 - momentum) * student, entrywise over
// every array including normalization running statistics.
// ConfigError unless 0 <= momentum < 1; InputError if the layouts differ.
void ema_update(ModelState& teacher, const ModelState& student, double momentum);

// Value-returning form of ema_update.
ModelState ema_updated(ModelState teacher, const ModelState& student, double momentum);

}  // namespace lf2

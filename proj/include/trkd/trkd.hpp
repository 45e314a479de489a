#pragma once

#include "trkd/aux_losses.hpp"
#include "trkd/checkpoint.hpp"
#include "trkd/config.hpp"
#include "trkd/dataset.hpp"
#include "trkd/distill_losses.hpp"
#include "trkd/errors.hpp"
#include "trkd/evaluate.hpp"
#include "trkd/logit_io.hpp"
#include "trkd/mlp.hpp"
#include "trkd/optim.hpp"
#include "trkd/prob_core.hpp"
#include "trkd/selfcheck.hpp"
#include "trkd/tau_schedule.hpp"
#include "trkd/trainer.hpp"
#include "trkd/triage_partition.hpp"
#include "trkd/verify_eval.hpp"

#pragma once

#include "pfm/config.hpp"

namespace pfm::cli {

int cmd_gen_data(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_infer(const RunConfig& cfg);
int cmd_iterate(const RunConfig& cfg);
int cmd_oracle(const RunConfig& cfg);
int cmd_baseline(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_repro_8g(const RunConfig& cfg);

}  // namespace pfm::cli

#pragma once

#include <cstdint>
#include <string>

#include "pmt/common.hpp"

namespace pmt {

struct TrainConfig {
  Index batch_size = 2;
  double base_lr = 0.001;
  Index max_epochs = 400;
  double poly_power = 0.9;
  Index gate_freeze_epochs = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double aug_shift = 0.1;        // fraction of each spatial extent
  double aug_rotate_deg = 15.0;
  double aug_flip_prob = 0.5;    // per axis
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
  std::uint64_t split_seed = 1;
  std::string precision = "float32";  // float32 | float64

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (gate_freeze_epochs < 0 || gate_freeze_epochs >= max_epochs)
      throw ConfigError("gate_freeze_epochs must lie in [0, max_epochs)");
    if (!(base_lr > 0)) throw ConfigError("base_lr must be > 0");
    if (!(poly_power > 0)) throw ConfigError("poly_power must be > 0");
    if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("val_fraction must lie in [0, 1)");
    if (aug_flip_prob < 0 || aug_flip_prob > 1) throw ConfigError("aug_flip_prob must lie in [0, 1]");
    if (precision != "float32" && precision != "float64")
      throw ConfigError("precision must be float32 or float64, got " + precision);
  }
};

}  // namespace pmt

#pragma once

#include "exvae/config.hpp"

namespace exvae {

// Subcommand entry points. Each takes the merged (file + flag) configuration,
// performs the run, writes outputs under out_dir, and returns the process
// exit status: 0 on success, 1 on any error (message on stderr).
//
// Every run is reproducible from (config, seed): re-running produces
// byte-identical logs, checkpoints, and images.
int cmd_train(const KeyValueConfig& cfg);
int cmd_eval(const KeyValueConfig& cfg);
int cmd_sample(const KeyValueConfig& cfg);
int cmd_augment(const KeyValueConfig& cfg);
int cmd_parzen(const KeyValueConfig& cfg);

// argv-level dispatcher used by the binary; parses flags, merges --config.
int run_cli(int argc, char** argv);

} // namespace exvae

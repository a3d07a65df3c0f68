#pragma once

#include <string>
#include <vector>

namespace dabf {

// Command bodies shared by the CLI binary and the test suites. Exit
// codes: 0 success, 1 usage/config error, 2 verification failure.

int cmd_synth(const std::string& config_path, const std::string& out_dir, int count);
int cmd_train(const std::string& config_path);
int cmd_eval(const std::string& config_path, const std::string& checkpoint_path);
int cmd_ablate(const std::string& config_path, const std::vector<uint64_t>& seeds);
int cmd_losslab(const std::string& pred_box, const std::string& gt_box, const std::string& grid,
                const std::string& out_path);
int cmd_gradcheck(const std::string& module);
int cmd_flops(const std::string& config_path);

}  // namespace dabf

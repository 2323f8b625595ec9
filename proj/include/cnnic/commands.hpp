#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cnnic/cnnic_net.hpp"
#include "cnnic/gradcheck.hpp"
#include "cnnic/metrics.hpp"

namespace cnnic {

/// Entry point of the cnnic tool. Returns the process exit code; failures
/// are reported on `err` and give a nonzero code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Per-layer parameter table for one kernel plus totals.
std::string format_parameter_table(const CnnicConfig& config);

std::string format_gradcheck(const std::vector<GradcheckReport>& reports);

struct EvalSummary {
  EvalReport train;
  EvalReport test;
  double overfitting = 0.0;       // E_train/N_train - E_test/N_test
  double test_minus_train = 0.0;  // the negation
};

EvalSummary summarize(EvalReport train, EvalReport test);
std::string format_eval(const EvalSummary& summary);
std::string eval_json(const EvalSummary& summary);

}  // namespace cnnic

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace repolab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

const std::vector<std::string>& commands();

// argv[0] is the program name, argv[1] the subcommand. Progress goes to
// `out`; failures print one JSON error record to `err` and, when a run
// directory exists, to its error.json.
int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

}  // namespace repolab::cli

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace cxgame {

// Runs one command line (without the program name). Returns the exit
// code: 0 success, 1 user or config error, 2 internal error.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cxgame

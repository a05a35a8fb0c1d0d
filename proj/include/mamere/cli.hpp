#pragma once

#include <iosfwd>

namespace mamere {
namespace cli {

// Full command-line surface. Returns the process exit status:
// 0 success, 2 usage error, 1 data/state error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cli
}  // namespace mamere

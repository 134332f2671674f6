#pragma once

#include <iosfwd>

namespace chatir::cli {

// Exit codes: 0 success, 1 usage error, 2 data or model error.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace chatir::cli
